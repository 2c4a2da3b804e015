#include "entcap/model.hpp"

#include <fmt/format.h>

#include "entcap/errors.hpp"

namespace entcap {

void ModelSpec::validate() const {
  const auto& p = projector;
  if (p.layers < 1 || p.heads < 1 || p.hidden < 1 || p.query_count < 1 || p.input_dim < 1) {
    throw ConfigError("projector dimensions must be positive");
  }
  if (p.hidden % p.heads != 0) throw ConfigError("projector hidden size not divisible by heads");
  if (lm.layers < 1 || lm.heads < 1 || lm.width < 1 || lm.max_positions < 2) {
    throw ConfigError("language model dimensions must be positive");
  }
  if (lm.width % lm.heads != 0) throw ConfigError("LM width not divisible by heads");
  if (p.hidden != lm.width) {
    throw ConfigError(fmt::format("projector hidden size {} must equal LM width {}", p.hidden, lm.width));
  }
}

ModelSpec model_preset(std::string_view name, int input_dim) {
  ModelSpec spec;
  if (name == "base") {
    spec = {{8, 8, 768, 10, input_dim}, {12, 12, 768, 256}};
  } else if (name == "small") {
    spec = {{4, 4, 256, 10, input_dim}, {4, 4, 256, 128}};
  } else if (name == "tiny") {
    spec = {{2, 4, 64, 10, input_dim}, {2, 4, 64, 96}};
  } else if (name == "micro") {
    spec = {{2, 2, 8, 2, input_dim}, {1, 2, 8, 32}};
  } else {
    throw ConfigError(fmt::format("unknown model preset '{}'", name));
  }
  return spec;
}

std::vector<std::string> model_preset_names() { return {"base", "small", "tiny", "micro"}; }

nlohmann::ordered_json to_json(const ModelSpec& spec) {
  return {{"projector",
           {{"layers", spec.projector.layers},
            {"heads", spec.projector.heads},
            {"hidden", spec.projector.hidden},
            {"query_count", spec.projector.query_count},
            {"input_dim", spec.projector.input_dim}}},
          {"lm",
           {{"layers", spec.lm.layers},
            {"heads", spec.lm.heads},
            {"width", spec.lm.width},
            {"max_positions", spec.lm.max_positions}}}};
}

ModelSpec model_spec_from_json(const nlohmann::ordered_json& j) {
  ModelSpec spec;
  const auto& p = j.at("projector");
  spec.projector = {p.at("layers").get<int>(), p.at("heads").get<int>(), p.at("hidden").get<int>(),
                    p.at("query_count").get<int>(), p.at("input_dim").get<int>()};
  const auto& l = j.at("lm");
  spec.lm = {l.at("layers").get<int>(), l.at("heads").get<int>(), l.at("width").get<int>(),
             l.at("max_positions").get<int>()};
  spec.validate();
  return spec;
}

std::string_view to_string(PromptOrder order) {
  return order == PromptOrder::kSoftThenHard ? "soft_then_hard" : "hard_then_soft";
}

PromptOrder parse_prompt_order(std::string_view text) {
  if (text == "soft_then_hard") return PromptOrder::kSoftThenHard;
  if (text == "hard_then_soft") return PromptOrder::kHardThenSoft;
  throw ConfigError(fmt::format("unknown prompt order '{}'", text));
}

CausalLm::CausalLm(ag::ParameterStore& store, const LanguageModelSpec& spec, int vocab_size,
                   std::mt19937_64& rng)
    : spec_(spec), vocab_size_(vocab_size) {
  token_embedding_ = &store.add("lm.token_embedding", nn::normal_init(vocab_size, spec.width, 0.02, rng));
  position_embedding_ =
      &store.add("lm.position_embedding", nn::normal_init(spec.max_positions, spec.width, 0.01, rng));
  for (int i = 0; i < spec.layers; ++i) {
    blocks_.emplace_back(store, fmt::format("lm.block{}", i), spec.width, spec.heads, rng);
  }
  final_norm_ = nn::LayerNorm(store, "lm.final_norm", spec.width);
}

ag::Var CausalLm::embed_tokens(ag::Tape& tape, std::span<const int> tokens) const {
  return ag::gather_rows(tape.param(*token_embedding_), tokens);
}

ag::Var CausalLm::forward(ag::Tape& tape, ag::Var prefix, std::span<const int> tokens) const {
  std::vector<ag::Var> parts;
  if (prefix.valid() && prefix.rows() > 0) {
    if (prefix.cols() != spec_.width) {
      throw ShapeError(fmt::format("prefix width {} does not match LM width {}", prefix.cols(), spec_.width));
    }
    parts.push_back(prefix);
  }
  if (!tokens.empty()) parts.push_back(embed_tokens(tape, tokens));
  if (parts.empty()) throw ShapeError("language model called with an empty sequence");
  ag::Var x = parts.size() == 1 ? parts.front() : ag::concat_rows(parts);
  const Eigen::Index length = x.rows();
  if (length > spec_.max_positions) {
    throw ShapeError(fmt::format("sequence of {} positions exceeds LM context {}", length,
                                 spec_.max_positions));
  }
  x = ag::add(x, ag::slice_rows(tape.param(*position_embedding_), 0, length));
  for (const auto& block : blocks_) x = block(tape, x, /*causal=*/true);
  x = final_norm_(tape, x);
  return ag::matmul_nt(x, tape.param(*token_embedding_));
}

Projector::Projector(ag::ParameterStore& store, const ProjectorSpec& spec, std::mt19937_64& rng)
    : spec_(spec) {
  const double input_std = 1.0 / std::sqrt(static_cast<double>(spec.input_dim));
  input_map_ = nn::Linear(store, "projector.input_map", spec.input_dim,
                          static_cast<Eigen::Index>(spec.query_count) * spec.hidden, rng, input_std);
  queries_ = &store.add("projector.queries", nn::normal_init(spec.query_count, spec.hidden, 1.0, rng));
  for (int i = 0; i < spec.layers; ++i) {
    blocks_.emplace_back(store, fmt::format("projector.block{}", i), spec.hidden, spec.heads, rng);
  }
}

ag::Var Projector::forward(ag::Tape& tape, const Embedding& embedding) const {
  if (embedding.dim() != spec_.input_dim) {
    throw ShapeError(fmt::format("projector expects {}-d embeddings, got {}", spec_.input_dim,
                                 embedding.dim()));
  }
  const ag::Var input = tape.constant(embedding.values.transpose());
  const ag::Var mapped = ag::reshape(input_map_(tape, input), spec_.query_count, spec_.hidden);
  const ag::Var parts[] = {mapped, tape.param(*queries_)};
  ag::Var x = ag::concat_rows(parts);
  for (const auto& block : blocks_) x = block(tape, x, /*causal=*/false);
  return ag::slice_rows(x, spec_.query_count, spec_.query_count);
}

Matrix PrefixSequence::rows() const {
  Matrix out(length(), soft.cols());
  const Matrix& first = order == PromptOrder::kSoftThenHard ? soft : hard_embedded;
  const Matrix& second = order == PromptOrder::kSoftThenHard ? hard_embedded : soft;
  if (first.rows() > 0) out.topRows(first.rows()) = first;
  if (second.rows() > 0) out.bottomRows(second.rows()) = second;
  return out;
}

CaptionModel::CaptionModel(ModelSpec spec, WordTokenizer tokenizer, std::uint64_t seed)
    : spec_(spec), tokenizer_(std::move(tokenizer)) {
  spec_.validate();
  std::mt19937_64 rng(seed);
  projector_ = Projector(params_, spec_.projector, rng);
  lm_ = CausalLm(params_, spec_.lm, tokenizer_.size(), rng);
}

ag::Var CaptionModel::project(ag::Tape& tape, const Embedding& embedding) const {
  return projector_.forward(tape, embedding);
}

Matrix CaptionModel::project(const Embedding& embedding) const {
  ag::Tape tape(/*record=*/false);
  return project(tape, embedding).value();
}

std::vector<Matrix> CaptionModel::project_batch(std::span<const Embedding> embeddings) const {
  std::vector<Matrix> out;
  out.reserve(embeddings.size());
  for (const auto& e : embeddings) out.push_back(project(e));
  return out;
}

std::vector<int> CaptionModel::encode_hard_prompt(const HardPrompt& hard) const {
  if (hard.empty()) return {};
  return tokenizer_.encode(hard.text);
}

PrefixSequence CaptionModel::compose_prefix(const Matrix& soft, const HardPrompt& hard,
                                            PromptOrder order) const {
  PrefixSequence prefix;
  prefix.soft = soft;
  prefix.order = order;
  prefix.hard_tokens = encode_hard_prompt(hard);
  ag::Tape tape(/*record=*/false);
  prefix.hard_embedded = prefix.hard_tokens.empty()
                             ? Matrix(0, soft.cols())
                             : Matrix(lm_.embed_tokens(tape, prefix.hard_tokens).value());
  return prefix;
}

ag::Var CaptionModel::compose_prefix(ag::Tape& tape, ag::Var soft, std::span<const int> hard_tokens,
                                     PromptOrder order) const {
  if (hard_tokens.empty()) return soft;
  const ag::Var hard = lm_.embed_tokens(tape, hard_tokens);
  if (order == PromptOrder::kSoftThenHard) {
    const ag::Var parts[] = {soft, hard};
    return ag::concat_rows(parts);
  }
  const ag::Var parts[] = {hard, soft};
  return ag::concat_rows(parts);
}

ag::Var CaptionModel::caption_nll(ag::Tape& tape, ag::Var prefix,
                                  std::span<const int> caption_tokens) const {
  if (caption_tokens.empty()) throw ShapeError("caption must contain at least <eos>");
  const Eigen::Index prefix_len = prefix.valid() ? prefix.rows() : 0;
  if (prefix_len == 0) throw ShapeError("caption loss needs a non-empty prefix");
  const ag::Var logits = lm_.forward(tape, prefix, caption_tokens);
  const auto n = static_cast<Eigen::Index>(caption_tokens.size());
  // Row prefix_len-1+i predicts caption token i; the final row (after <eos>) is unused.
  return ag::cross_entropy(ag::slice_rows(logits, prefix_len - 1, n), caption_tokens);
}

Eigen::RowVectorXd CaptionModel::next_token_logprobs(const Matrix& prefix,
                                                     std::span<const int> generated) const {
  ag::Tape tape(/*record=*/false);
  const ag::Var p = prefix.rows() > 0 ? tape.constant(prefix) : ag::Var();
  const ag::Var logits = lm_.forward(tape, p, generated);
  const Matrix last = logits.value().bottomRows(1);
  return ag::log_softmax_rows(last).row(0);
}

}  // namespace entcap
