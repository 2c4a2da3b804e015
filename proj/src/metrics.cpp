#include "entcap/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <map>
#include <set>
#include <unordered_set>

#include <fmt/format.h>

#include "entcap/errors.hpp"
#include "entcap/nouns.hpp"

namespace entcap {

namespace {

using Ngram = std::vector<std::string>;
using NgramCounts = std::map<Ngram, int>;

bool is_punctuation(const std::string& token) {
  return std::all_of(token.begin(), token.end(),
                     [](unsigned char c) { return std::ispunct(c) != 0; });
}

std::vector<std::string> split_spaces(const std::string& text) {
  std::vector<std::string> words;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && text[i] == ' ') ++i;
    std::size_t j = i;
    while (j < text.size() && text[j] != ' ') ++j;
    if (j > i) words.push_back(text.substr(i, j - i));
    i = j;
  }
  return words;
}

NgramCounts count_ngrams(const std::vector<std::string>& words, int max_n) {
  NgramCounts counts;
  for (int k = 1; k <= max_n; ++k) {
    for (std::size_t i = 0; i + static_cast<std::size_t>(k) <= words.size(); ++i) {
      ++counts[Ngram(words.begin() + static_cast<std::ptrdiff_t>(i),
                     words.begin() + static_cast<std::ptrdiff_t>(i) + k)];
    }
  }
  return counts;
}

void check_pairs(std::size_t candidates, const ReferenceSets& references, const char* metric) {
  if (candidates != references.size()) {
    throw InputError(fmt::format("{}: {} candidates but {} reference sets", metric, candidates,
                                 references.size()));
  }
  for (std::size_t i = 0; i < references.size(); ++i) {
    if (references[i].empty()) throw InputError(fmt::format("{}: item {} has no references", metric, i));
  }
}

constexpr int kMaxN = 4;
constexpr double kSigma = 6.0;

struct CiderVector {
  std::array<std::map<Ngram, double>, kMaxN> vec;
  std::array<double, kMaxN> norm{};
  long length = 0;
};

CiderVector cider_vector(const NgramCounts& counts, const std::map<Ngram, int>& df, double ref_len) {
  CiderVector out;
  for (const auto& [ngram, tf] : counts) {
    const std::size_t n = ngram.size() - 1;
    const auto it = df.find(ngram);
    const double dfv = std::log(std::max(1.0, it == df.end() ? 0.0 : static_cast<double>(it->second)));
    const double w = static_cast<double>(tf) * (ref_len - dfv);
    out.vec[n][ngram] = w;
    out.norm[n] += w * w;
    if (n == 1) out.length += tf;
  }
  for (auto& v : out.norm) v = std::sqrt(v);
  return out;
}

std::array<double, kMaxN> cider_similarity(const CiderVector& hyp, const CiderVector& ref) {
  const double delta = static_cast<double>(hyp.length - ref.length);
  std::array<double, kMaxN> val{};
  for (int n = 0; n < kMaxN; ++n) {
    for (const auto& [ngram, w] : hyp.vec[n]) {
      const auto it = ref.vec[n].find(ngram);
      if (it != ref.vec[n].end()) val[n] += std::min(w, it->second) * it->second;
    }
    if (hyp.norm[n] != 0.0 && ref.norm[n] != 0.0) val[n] /= hyp.norm[n] * ref.norm[n];
    val[n] *= std::exp(-(delta * delta) / (2.0 * kSigma * kSigma));
  }
  return val;
}

}  // namespace

std::vector<std::string> metric_tokens(std::string_view text) {
  std::vector<std::string> out;
  for (auto& t : word_tokenize(text)) {
    if (!is_punctuation(t)) out.push_back(std::move(t));
  }
  return out;
}

std::string metric_text(std::string_view text) {
  std::string out;
  for (const auto& t : metric_tokens(text)) {
    if (!out.empty()) out += ' ';
    out += t;
  }
  return out;
}

BleuScores bleu_scores(std::span<const std::string> candidates, const ReferenceSets& references) {
  check_pairs(candidates.size(), references, "bleu");
  std::array<long, kMaxN> correct{};
  std::array<long, kMaxN> guess{};
  BleuScores out;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const auto hyp = split_spaces(metric_text(candidates[i]));
    NgramCounts max_ref;
    long closest = -1;
    const auto hyp_len = static_cast<long>(hyp.size());
    for (const auto& r : references[i]) {
      const auto ref = split_spaces(metric_text(r));
      for (const auto& [ngram, c] : count_ngrams(ref, kMaxN)) {
        auto& slot = max_ref[ngram];
        slot = std::max(slot, c);
      }
      const auto len = static_cast<long>(ref.size());
      if (closest < 0 || std::labs(len - hyp_len) < std::labs(closest - hyp_len) ||
          (std::labs(len - hyp_len) == std::labs(closest - hyp_len) && len < closest)) {
        closest = len;
      }
    }
    for (const auto& [ngram, c] : count_ngrams(hyp, kMaxN)) {
      const auto it = max_ref.find(ngram);
      if (it != max_ref.end()) correct[ngram.size() - 1] += std::min(c, it->second);
    }
    for (int k = 0; k < kMaxN; ++k) guess[k] += std::max(0L, hyp_len - k);
    out.hypothesis_length += hyp_len;
    out.reference_length += closest;
  }
  const double c = static_cast<double>(out.hypothesis_length);
  const double r = static_cast<double>(out.reference_length);
  const double brevity = c <= 0.0 ? 0.0 : (c < r ? std::exp(1.0 - r / c) : 1.0);
  double log_sum = 0.0;
  bool zero = false;
  for (int k = 0; k < kMaxN; ++k) {
    if (correct[k] == 0 || guess[k] == 0) zero = true;
    if (!zero) log_sum += std::log(static_cast<double>(correct[k]) / static_cast<double>(guess[k]));
    out.bleu[k] = zero ? 0.0 : std::exp(log_sum / (k + 1)) * brevity;
  }
  return out;
}

double bleu(std::span<const std::string> candidates, const ReferenceSets& references, int n) {
  if (n < 1 || n > kMaxN) throw DomainError(fmt::format("BLEU order must be 1..4, got {}", n));
  return bleu_scores(candidates, references).bleu[static_cast<std::size_t>(n - 1)];
}

CiderScores cider_d(std::span<const std::string> candidates, const ReferenceSets& references) {
  check_pairs(candidates.size(), references, "cider");
  if (candidates.empty()) throw InputError("cider: empty corpus");
  std::vector<std::vector<NgramCounts>> ref_counts(references.size());
  std::map<Ngram, int> df;
  for (std::size_t i = 0; i < references.size(); ++i) {
    std::set<Ngram> seen;
    for (const auto& r : references[i]) {
      ref_counts[i].push_back(count_ngrams(split_spaces(metric_text(r)), kMaxN));
      for (const auto& kv : ref_counts[i].back()) seen.insert(kv.first);
    }
    for (const auto& g : seen) ++df[g];
  }
  const double ref_len = std::log(static_cast<double>(references.size()));
  CiderScores out;
  out.per_item.reserve(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const CiderVector hyp =
        cider_vector(count_ngrams(split_spaces(metric_text(candidates[i])), kMaxN), df, ref_len);
    std::array<double, kMaxN> total{};
    for (const auto& rc : ref_counts[i]) {
      const auto sim = cider_similarity(hyp, cider_vector(rc, df, ref_len));
      for (int n = 0; n < kMaxN; ++n) total[n] += sim[n];
    }
    double mean = 0.0;
    for (double v : total) mean += v;
    mean /= kMaxN;
    out.per_item.push_back(mean / static_cast<double>(ref_counts[i].size()) * 10.0);
  }
  double sum = 0.0;
  for (double v : out.per_item) sum += v;
  out.corpus = sum / static_cast<double>(out.per_item.size());
  return out;
}

double cider(std::span<const std::string> candidates, const ReferenceSets& references) {
  return cider_d(candidates, references).corpus;
}

double clip_score(std::span<const Embedding> images, std::span<const Embedding> captions) {
  if (images.size() != captions.size()) {
    throw InputError(fmt::format("clip_score: {} images but {} captions", images.size(), captions.size()));
  }
  if (images.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < images.size(); ++i) {
    sum += 2.5 * std::max(cosine_similarity(images[i], captions[i]), 0.0);
  }
  return sum / static_cast<double>(images.size());
}

double clip_score(std::span<const Embedding> images, std::span<const std::string> captions,
                  const Backbone& backbone) {
  if (images.size() != captions.size()) {
    throw InputError(fmt::format("clip_score: {} images but {} captions", images.size(), captions.size()));
  }
  std::vector<Embedding> text;
  text.reserve(captions.size());
  for (const auto& c : captions) text.push_back(backbone.embed_text(c));
  return clip_score(images, text);
}

EntityPrecision entity_precision(std::span<const std::string> captions,
                                 const std::vector<std::vector<std::string>>& gold_entities,
                                 const EntityVocabulary& vocab) {
  if (captions.size() != gold_entities.size()) {
    throw InputError(fmt::format("entity_precision: {} captions but {} gold sets", captions.size(),
                                 gold_entities.size()));
  }
  EntityPrecision out;
  for (std::size_t i = 0; i < captions.size(); ++i) {
    const std::unordered_set<std::string> gold(gold_entities[i].begin(), gold_entities[i].end());
    for (const auto& e : extract_nouns(captions[i], vocab)) {
      ++out.total;
      if (gold.count(e.name) != 0) ++out.correct;
    }
  }
  return out;
}

}  // namespace entcap
