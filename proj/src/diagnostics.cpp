#include "entcap/diagnostics.hpp"

#include <sstream>

#include <fmt/format.h>

#include "entcap/decoding.hpp"
#include "entcap/errors.hpp"

namespace entcap {

namespace {

std::vector<std::string> whitespace_words(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::vector<std::string> words;
  for (std::string w; in >> w;) words.push_back(w);
  return words;
}

}  // namespace

std::string first_words(std::string_view text, int m) {
  const auto words = whitespace_words(text);
  std::string out;
  for (std::size_t i = 0; i < words.size() && static_cast<int>(i) < m; ++i) {
    if (!out.empty()) out += ' ';
    out += words[i];
  }
  return out;
}

std::size_t word_count(std::string_view text) { return whitespace_words(text).size(); }

LmContinuer::LmContinuer(const CaptionModel& lm, int max_len) : lm_(lm), max_len_(max_len) {
  if (max_len < 1) throw ConfigError("continuation max_len must be >= 1");
  ag::Tape tape(/*record=*/false);
  const int start[] = {WordTokenizer::kEos};
  start_row_ = lm_.lm().embed_tokens(tape, start).value();
}

std::string LmContinuer::continue_text(std::string_view prefix_words) const {
  std::vector<int> tokens = lm_.tokenizer().encode(prefix_words);
  const int room = lm_.lm().max_positions() - 1;
  const int budget = std::min(max_len_, room) - static_cast<int>(tokens.size());
  if (budget > 0) {
    const NextTokenFn next = [&](std::span<const int> generated) {
      std::vector<int> all(tokens);
      all.insert(all.end(), generated.begin(), generated.end());
      return lm_.next_token_logprobs(start_row_, all);
    };
    const Hypothesis h = greedy_decode(next, WordTokenizer::kEos, budget);
    tokens.insert(tokens.end(), h.tokens.begin(), h.tokens.end());
  }
  return lm_.tokenizer().decode(tokens);
}

GuidanceCurve visual_guidance_curve(std::span<const std::string> model_captions,
                                    const ReferenceSets& references,
                                    const PrefixContinuer& continuer, std::span<const int> m_values) {
  GuidanceCurve curve;
  curve.cider_model = cider(model_captions, references);
  if (curve.cider_model == 0.0) {
    throw DomainError("CIDEr of the model captions is 0; G_vis is undefined for this item set");
  }
  for (const int m : m_values) {
    if (m < 0) throw DomainError(fmt::format("m must be >= 0, got {}", m));
    std::vector<std::string> candidates;
    candidates.reserve(model_captions.size());
    for (const auto& caption : model_captions) {
      if (static_cast<std::size_t>(m) >= word_count(caption)) {
        candidates.push_back(caption);
      } else {
        candidates.push_back(continuer.continue_text(first_words(caption, m)));
      }
    }
    GuidanceRow row;
    row.m = m;
    row.cider_m = cider(candidates, references);
    row.g_lang = row.cider_m / curve.cider_model;
    row.g_vis = 1.0 - row.g_lang;
    curve.rows.push_back(row);
  }
  return curve;
}

}  // namespace entcap
