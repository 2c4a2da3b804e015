#include "entcap/decoding.hpp"

#include <algorithm>
#include <limits>

#include <fmt/format.h>

#include "entcap/errors.hpp"

namespace entcap {

namespace {

struct Expansion {
  double log_prob;
  std::size_t beam;
  int token;
};

int argmax_lowest(const Eigen::RowVectorXd& row) {
  int best = 0;
  for (Eigen::Index i = 1; i < row.size(); ++i) {
    if (row(i) > row(best)) best = static_cast<int>(i);
  }
  return best;
}

}  // namespace

double Hypothesis::normalized_score() const {
  if (tokens.empty()) return -std::numeric_limits<double>::infinity();
  return log_prob / static_cast<double>(tokens.size());
}

Hypothesis greedy_decode(const NextTokenFn& next, int eos, int max_len) {
  if (max_len < 1) throw ConfigError("max_len must be >= 1");
  Hypothesis hyp;
  while (static_cast<int>(hyp.tokens.size()) < max_len) {
    const Eigen::RowVectorXd logp = next(hyp.tokens);
    const int token = argmax_lowest(logp);
    hyp.tokens.push_back(token);
    hyp.log_prob += logp(token);
    if (token == eos) break;
  }
  return hyp;
}

Hypothesis beam_search(const NextTokenFn& next, int eos, int beam_size, int max_len) {
  if (beam_size < 1) throw ConfigError("beam size must be >= 1");
  if (max_len < 1) throw ConfigError("max_len must be >= 1");
  const auto width = static_cast<std::size_t>(beam_size);
  std::vector<Hypothesis> alive(1);
  std::vector<Hypothesis> finished;

  for (int step = 0; step < max_len && !alive.empty() && finished.size() < width; ++step) {
    std::vector<Expansion> expansions;
    for (std::size_t b = 0; b < alive.size(); ++b) {
      const Eigen::RowVectorXd logp = next(alive[b].tokens);
      for (Eigen::Index v = 0; v < logp.size(); ++v) {
        expansions.push_back({alive[b].log_prob + logp(v), b, static_cast<int>(v)});
      }
    }
    const std::size_t keep = std::min(expansions.size(), 2 * width);
    std::partial_sort(expansions.begin(), expansions.begin() + static_cast<std::ptrdiff_t>(keep),
                      expansions.end(), [](const Expansion& a, const Expansion& b) {
                        if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
                        if (a.beam != b.beam) return a.beam < b.beam;
                        return a.token < b.token;
                      });
    std::vector<Hypothesis> next_alive;
    for (std::size_t rank = 0; rank < keep && next_alive.size() < width; ++rank) {
      const Expansion& e = expansions[rank];
      Hypothesis h{alive[e.beam].tokens, e.log_prob};
      h.tokens.push_back(e.token);
      if (e.token == eos) {
        if (rank < width) finished.push_back(std::move(h));
      } else {
        next_alive.push_back(std::move(h));
      }
    }
    alive = std::move(next_alive);
  }
  if (finished.size() < width) {
    for (auto& h : alive) finished.push_back(std::move(h));
  }
  if (finished.empty()) throw Error("beam search produced no hypothesis");
  std::size_t best = 0;
  for (std::size_t i = 1; i < finished.size(); ++i) {
    if (finished[i].normalized_score() > finished[best].normalized_score()) best = i;
  }
  return finished[best];
}

GenerationResult generate_with_entities(const CaptionModel& model, const Embedding& embedding,
                                        const std::vector<Entity>& entities,
                                        const GenerationOptions& options) {
  GenerationResult result;
  result.entities = entities;
  result.hard_prompt = render_hard_prompt(entities, options.hard_template);
  const PrefixSequence prefix =
      model.compose_prefix(model.project(embedding), result.hard_prompt, options.order);
  const Matrix prefix_rows = prefix.rows();
  result.prefix_length = prefix.length();

  const int budget = std::min(options.max_len, model.lm().max_positions() -
                                                   static_cast<int>(result.prefix_length));
  if (budget < 1) {
    throw ShapeError(fmt::format("prefix of {} rows leaves no room in the LM context",
                                 result.prefix_length));
  }
  const NextTokenFn next = [&model, &prefix_rows](std::span<const int> generated) {
    return model.next_token_logprobs(prefix_rows, generated);
  };
  Hypothesis best = beam_search(next, WordTokenizer::kEos, options.beam_size, budget);
  if (options.beam_size > 1) {
    Hypothesis greedy = greedy_decode(next, WordTokenizer::kEos, budget);
    if (greedy.normalized_score() > best.normalized_score()) best = std::move(greedy);
  }
  result.tokens = best.tokens;
  result.score = best.normalized_score();
  result.caption = model.tokenizer().decode(best.tokens);
  return result;
}

GenerationResult generate(const CaptionModel& model, const Embedding& embedding,
                          const VocabularyEmbeddings* classes, const GenerationOptions& options) {
  std::vector<Entity> entities;
  if (classes != nullptr) entities = classify_entities(embedding, *classes, options.retrieval);
  return generate_with_entities(model, embedding, entities, options);
}

}  // namespace entcap
