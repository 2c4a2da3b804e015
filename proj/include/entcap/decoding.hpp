#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "entcap/corpus.hpp"
#include "entcap/model.hpp"
#include "entcap/prompts.hpp"
#include "entcap/retrieval.hpp"

namespace entcap {

/// Log-probabilities of the next token given the tokens generated so far.
using NextTokenFn = std::function<Eigen::RowVectorXd(std::span<const int> generated)>;

struct Hypothesis {
  std::vector<int> tokens;  // includes the terminating <eos> when one was produced
  double log_prob = 0.0;

  /// Cumulative log-probability divided by the number of generated tokens.
  double normalized_score() const;
};

/// Argmax decoding; ties go to the lowest token id. Stops after <eos> or `max_len` tokens.
Hypothesis greedy_decode(const NextTokenFn& next, int eos, int max_len);

/// Beam search ranked by length-normalised log-probability. Expansions are ordered by
/// cumulative log-probability (ties: earlier beam, then lower token id); an <eos> expansion
/// is kept as a finished hypothesis when it ranks within the top `beam_size`. Search ends
/// once `beam_size` hypotheses have finished, no beam is alive, or `max_len` is reached.
/// With beam_size 1 this reproduces greedy_decode exactly.
Hypothesis beam_search(const NextTokenFn& next, int eos, int beam_size, int max_len);

struct GenerationOptions {
  int beam_size = 5;
  int max_len = 30;
  PromptOrder order = PromptOrder::kSoftThenHard;
  HardPromptTemplate hard_template = HardPromptTemplate::default_template();
  RetrievalConfig retrieval;
};

struct GenerationResult {
  std::string caption;
  std::vector<int> tokens;
  std::vector<Entity> entities;
  HardPrompt hard_prompt;
  Eigen::Index prefix_length = 0;
  double score = 0.0;
};

/// Soft prompt from the projector plus a hard prompt rendered from `entities`, decoded
/// by beam search. The greedy hypothesis always competes in the final ranking.
GenerationResult generate_with_entities(const CaptionModel& model, const Embedding& embedding,
                                        const std::vector<Entity>& entities,
                                        const GenerationOptions& options);

/// Retrieves entities for `embedding` from `classes` (when given) and generates.
GenerationResult generate(const CaptionModel& model, const Embedding& embedding,
                          const VocabularyEmbeddings* classes, const GenerationOptions& options);

}  // namespace entcap
