#pragma once

#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "entcap/autograd.hpp"
#include "entcap/encoder.hpp"
#include "entcap/nn.hpp"
#include "entcap/prompts.hpp"
#include "entcap/tokenizer.hpp"

namespace entcap {

using ag::Matrix;

/// Transformer mapping one encoder embedding to `query_count` soft-prompt rows.
struct ProjectorSpec {
  int layers = 8;
  int heads = 8;
  int hidden = 768;
  int query_count = 10;
  int input_dim = 512;
};

struct LanguageModelSpec {
  int layers = 12;
  int heads = 12;
  int width = 768;
  int max_positions = 256;
};

struct ModelSpec {
  ProjectorSpec projector;
  LanguageModelSpec lm;

  void validate() const;
};

/// "base": 8x8x768 projector with 10 queries feeding a 12-layer 768-wide LM.
/// "small": 4-layer 256-wide. "tiny": 2-layer 64-wide. "micro": gradient-check scale.
ModelSpec model_preset(std::string_view name, int input_dim);
std::vector<std::string> model_preset_names();

nlohmann::ordered_json to_json(const ModelSpec& spec);
ModelSpec model_spec_from_json(const nlohmann::ordered_json& j);

enum class PromptOrder { kSoftThenHard, kHardThenSoft };
std::string_view to_string(PromptOrder order);
PromptOrder parse_prompt_order(std::string_view text);

/// GPT-style causal decoder with learned positions and an output head tied to the
/// token embedding table.
class CausalLm {
 public:
  CausalLm() = default;
  CausalLm(ag::ParameterStore& store, const LanguageModelSpec& spec, int vocab_size,
           std::mt19937_64& rng);

  /// Logits for every position of [prefix; embed(tokens)]. `prefix` may be invalid (no prefix).
  ag::Var forward(ag::Tape& tape, ag::Var prefix, std::span<const int> tokens) const;
  ag::Var embed_tokens(ag::Tape& tape, std::span<const int> tokens) const;

  int width() const { return spec_.width; }
  int vocab_size() const { return vocab_size_; }
  int max_positions() const { return spec_.max_positions; }

 private:
  LanguageModelSpec spec_;
  int vocab_size_ = 0;
  ag::Parameter* token_embedding_ = nullptr;
  ag::Parameter* position_embedding_ = nullptr;
  std::vector<nn::TransformerBlock> blocks_;
  nn::LayerNorm final_norm_;
};

/// Learnable-query transformer: the input embedding is mapped to `query_count` tokens,
/// concatenated with `query_count` learned queries, run through bidirectional blocks, and
/// the outputs at the query positions form the soft prompt.
class Projector {
 public:
  Projector() = default;
  Projector(ag::ParameterStore& store, const ProjectorSpec& spec, std::mt19937_64& rng);

  ag::Var forward(ag::Tape& tape, const Embedding& embedding) const;
  const ProjectorSpec& spec() const { return spec_; }

 private:
  ProjectorSpec spec_;
  nn::Linear input_map_;
  ag::Parameter* queries_ = nullptr;
  std::vector<nn::TransformerBlock> blocks_;
};

/// Soft rows and embedded hard-prompt tokens, in the configured order.
struct PrefixSequence {
  Matrix soft;
  std::vector<int> hard_tokens;
  Matrix hard_embedded;
  PromptOrder order = PromptOrder::kSoftThenHard;

  Eigen::Index length() const { return soft.rows() + hard_embedded.rows(); }
  Matrix rows() const;
};

/// Projector plus language model plus the tokenizer they were trained with.
/// Parameters are named "projector.*" and "lm.*".
class CaptionModel {
 public:
  CaptionModel(ModelSpec spec, WordTokenizer tokenizer, std::uint64_t seed);
  CaptionModel(const CaptionModel&) = delete;
  CaptionModel& operator=(const CaptionModel&) = delete;
  CaptionModel(CaptionModel&&) = default;

  const ModelSpec& spec() const { return spec_; }
  const WordTokenizer& tokenizer() const { return tokenizer_; }
  ag::ParameterStore& parameters() { return params_; }
  const ag::ParameterStore& parameters() const { return params_; }
  const CausalLm& lm() const { return lm_; }
  int soft_length() const { return spec_.projector.query_count; }

  /// Soft prompt (query_count x width). Throws ShapeError on an input-dimension mismatch.
  Matrix project(const Embedding& embedding) const;
  std::vector<Matrix> project_batch(std::span<const Embedding> embeddings) const;
  ag::Var project(ag::Tape& tape, const Embedding& embedding) const;

  PrefixSequence compose_prefix(const Matrix& soft, const HardPrompt& hard, PromptOrder order) const;
  ag::Var compose_prefix(ag::Tape& tape, ag::Var soft, std::span<const int> hard_tokens,
                         PromptOrder order) const;

  /// Mean negative log-likelihood of `caption_tokens` (ending in <eos>) given `prefix`.
  /// The LM sees [prefix; caption_tokens]; prefix positions carry no loss.
  ag::Var caption_nll(ag::Tape& tape, ag::Var prefix, std::span<const int> caption_tokens) const;

  /// Next-token log-probabilities after [prefix; generated].
  Eigen::RowVectorXd next_token_logprobs(const Matrix& prefix, std::span<const int> generated) const;

  /// Hard-prompt token ids; an empty prompt yields no tokens.
  std::vector<int> encode_hard_prompt(const HardPrompt& hard) const;

 private:
  ModelSpec spec_;
  WordTokenizer tokenizer_;
  ag::ParameterStore params_;
  Projector projector_;
  CausalLm lm_;
};

}  // namespace entcap
