#include "entcap/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "entcap/errors.hpp"
#include "entcap/nouns.hpp"

namespace entcap {

namespace {

enum class Stream : std::uint32_t { kMask = 1, kNoise = 2, kShuffle = 3 };

// Independent generator per (seed, epoch, item, purpose) so results do not depend on
// how batches are scheduled.
std::mt19937_64 derived_rng(std::uint64_t seed, std::uint64_t epoch, std::uint64_t item,
                            Stream stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(item),
                    static_cast<std::uint32_t>(item >> 32), static_cast<std::uint32_t>(stream)};
  return std::mt19937_64(seq);
}

std::string_view to_string(MaskMode m) { return m == MaskMode::kPerStep ? "per_step" : "fixed"; }
std::string_view to_string(LrSchedule s) {
  return s == LrSchedule::kConstant ? "constant" : "linear_warmup";
}
std::string_view to_string(Objective o) {
  return o == Objective::kCaption ? "caption" : "language_model";
}

MaskMode parse_mask_mode(std::string_view s) {
  if (s == "per_step") return MaskMode::kPerStep;
  if (s == "fixed") return MaskMode::kFixed;
  throw ConfigError(fmt::format("mask_mode: unknown value '{}'", s));
}
LrSchedule parse_lr_schedule(std::string_view s) {
  if (s == "constant") return LrSchedule::kConstant;
  if (s == "linear_warmup") return LrSchedule::kLinearWarmup;
  throw ConfigError(fmt::format("lr_schedule: unknown value '{}'", s));
}
Objective parse_objective(std::string_view s) {
  if (s == "caption") return Objective::kCaption;
  if (s == "language_model") return Objective::kLanguageModel;
  throw ConfigError(fmt::format("objective: unknown value '{}'", s));
}

template <typename T>
void read_field(const nlohmann::ordered_json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(fmt::format("{}: {}", key, e.what()));
  }
}

double schedule_lr(const TrainingConfig& c, long step) {
  if (c.lr_schedule == LrSchedule::kLinearWarmup && c.warmup_steps > 0 && step < c.warmup_steps) {
    return c.learning_rate * static_cast<double>(step + 1) / static_cast<double>(c.warmup_steps);
  }
  return c.learning_rate;
}

void write_divergence_dump(const std::filesystem::path& path, const CaptionModel& model,
                           const TrainingConfig& config, int epoch, long step, double loss,
                           const std::vector<std::string>& batch_ids) {
  nlohmann::ordered_json dump;
  dump["epoch"] = epoch;
  dump["step"] = step;
  dump["loss"] = std::isfinite(loss) ? nlohmann::ordered_json(loss) : nlohmann::ordered_json(fmt::format("{}", loss));
  dump["batch_ids"] = batch_ids;
  dump["config"] = to_json(config);
  auto& norms = dump["parameter_norms"];
  for (const auto& p : model.parameters().all()) {
    const double v = p.value.norm();
    const double g = p.grad.size() ? p.grad.norm() : 0.0;
    norms[p.name] = {{"value", std::isfinite(v) ? fmt::format("{:.6g}", v) : "non-finite"},
                     {"grad", std::isfinite(g) ? fmt::format("{:.6g}", g) : "non-finite"}};
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  out << dump.dump(2) << "\n";
}

}  // namespace

void TrainingConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("learning_rate must be positive");
  }
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
  if (!(r_mask >= 0.0 && r_mask <= 1.0)) throw ConfigError("r_mask must lie in [0, 1]");
  if (!(noise_variance >= 0.0)) throw ConfigError("noise_variance must be >= 0");
  if (warmup_steps < 0) throw ConfigError("warmup_steps must be >= 0");
}

TrainingConfig training_preset(std::string_view name) {
  TrainingConfig c;
  if (name == "coco") {
    c.epochs = 15;
    c.batch_size = 80;
    c.learning_rate = 2e-5;
  } else if (name == "flickr30k") {
    c.epochs = 30;
    c.batch_size = 80;
    c.learning_rate = 2e-5;
  } else if (name == "flickrstyle10k") {
    c.epochs = 25;
    c.batch_size = 128;
    c.learning_rate = 3e-4;
  } else {
    throw ConfigError(fmt::format("unknown training preset '{}'", name));
  }
  c.r_mask = 0.4;
  return c;
}

std::vector<std::string> training_preset_names() { return {"coco", "flickr30k", "flickrstyle10k"}; }

nlohmann::ordered_json to_json(const TrainingConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"weight_decay", c.weight_decay},
          {"adam_beta1", c.adam_beta1},
          {"adam_beta2", c.adam_beta2},
          {"adam_eps", c.adam_eps},
          {"r_mask", c.r_mask},
          {"mask_mode", to_string(c.mask_mode)},
          {"noise_variance", c.noise_variance},
          {"hard_template",
           {{"id", to_string(c.hard_template.template_id)},
            {"prefix", c.hard_template.prefix},
            {"separator", c.hard_template.separator},
            {"suffix", c.hard_template.suffix}}},
          {"prompt_order", to_string(c.prompt_order)},
          {"seed", c.seed},
          {"lm_finetune", c.lm_finetune},
          {"lr_schedule", to_string(c.lr_schedule)},
          {"warmup_steps", c.warmup_steps},
          {"objective", to_string(c.objective)}};
}

TrainingConfig apply_json(TrainingConfig c, const nlohmann::ordered_json& j) {
  if (!j.is_object()) throw ConfigError("training config must be a JSON object");
  read_field(j, "epochs", c.epochs);
  read_field(j, "batch_size", c.batch_size);
  read_field(j, "learning_rate", c.learning_rate);
  read_field(j, "weight_decay", c.weight_decay);
  read_field(j, "adam_beta1", c.adam_beta1);
  read_field(j, "adam_beta2", c.adam_beta2);
  read_field(j, "adam_eps", c.adam_eps);
  read_field(j, "r_mask", c.r_mask);
  read_field(j, "noise_variance", c.noise_variance);
  read_field(j, "seed", c.seed);
  read_field(j, "lm_finetune", c.lm_finetune);
  read_field(j, "warmup_steps", c.warmup_steps);
  std::string text;
  if (j.contains("mask_mode")) {
    read_field(j, "mask_mode", text);
    c.mask_mode = parse_mask_mode(text);
  }
  if (j.contains("lr_schedule")) {
    read_field(j, "lr_schedule", text);
    c.lr_schedule = parse_lr_schedule(text);
  }
  if (j.contains("objective")) {
    read_field(j, "objective", text);
    c.objective = parse_objective(text);
  }
  if (j.contains("prompt_order")) {
    read_field(j, "prompt_order", text);
    c.prompt_order = parse_prompt_order(text);
  }
  if (j.contains("hard_template")) {
    const auto& t = j.at("hard_template");
    if (t.is_string()) {
      c.hard_template = HardPromptTemplate::builtin(parse_template_id(t.get<std::string>()));
    } else if (t.is_object()) {
      const std::string id = t.value("id", std::string("custom"));
      if (id != "custom") {
        c.hard_template = HardPromptTemplate::builtin(parse_template_id(id));
      } else {
        c.hard_template = HardPromptTemplate::make_custom(
            t.value("prefix", std::string()), t.value("separator", std::string(", ")),
            t.value("suffix", std::string()));
      }
    } else {
      throw ConfigError("hard_template must be a template id or an object");
    }
  }
  return c;
}

AdamW::AdamW(double beta1, double beta2, double eps, double weight_decay)
    : beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {}

void AdamW::step(ag::ParameterStore& params, double learning_rate) {
  auto& all = params.all();
  if (first_moment_.size() != all.size()) {
    first_moment_.clear();
    second_moment_.clear();
    for (const auto& p : all) {
      first_moment_.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
      second_moment_.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
    }
  }
  ++steps_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
  for (std::size_t i = 0; i < all.size(); ++i) {
    auto& p = all[i];
    if (!p.trainable) continue;
    if (p.grad.size() == 0) p.zero_grad();
    auto& m = first_moment_[i];
    auto& v = second_moment_[i];
    m = beta1_ * m + (1.0 - beta1_) * p.grad;
    v = beta2_ * v + (1.0 - beta2_) * p.grad.cwiseAbs2();
    if (weight_decay_ > 0.0) p.value *= 1.0 - learning_rate * weight_decay_;
    p.value.array() -= learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + eps_);
  }
}

std::vector<PreparedCaption> prepare_corpus(std::span<const CaptionRecord> records,
                                            const CaptionModel& model, const Backbone& backbone,
                                            const EntityVocabulary& vocab) {
  std::vector<PreparedCaption> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    std::vector<int> tokens = model.tokenizer().encode(r.text);
    if (tokens.empty()) {
      spdlog::warn("skipping caption '{}': no tokens", r.id);
      continue;
    }
    tokens.push_back(WordTokenizer::kEos);
    out.push_back({r.id, r.text, backbone.embed_text(r.text), extract_nouns(r.text, vocab),
                   std::move(tokens)});
  }
  return out;
}

TrainingSample make_sample(const PreparedCaption& caption, const CaptionModel& model,
                           const TrainingConfig& config, std::mt19937_64& mask_rng,
                           std::mt19937_64& noise_rng) {
  TrainingSample s;
  s.noisy_embedding = inject_noise(caption.clean_embedding, config.noise_variance, noise_rng);
  s.hard_prompt = render_hard_prompt(mask_entities(caption.nouns, config.r_mask, mask_rng),
                                     config.hard_template);
  s.hard_tokens = model.encode_hard_prompt(s.hard_prompt);
  s.caption_tokens = caption.caption_tokens;

  // Keep the sequence inside the LM context: drop caption words first, then prompt words.
  const auto limit = static_cast<std::size_t>(model.lm().max_positions());
  const auto soft = static_cast<std::size_t>(model.soft_length());
  if (s.sequence_length(model.soft_length()) > limit) {
    const std::size_t room = limit > soft + s.hard_tokens.size() ? limit - soft - s.hard_tokens.size() : 0;
    if (room >= 2) {
      s.caption_tokens.resize(room - 1);
      s.caption_tokens.push_back(WordTokenizer::kEos);
    } else {
      s.hard_tokens.resize(limit - soft - std::min(limit - soft, s.caption_tokens.size()));
    }
    spdlog::debug("caption '{}' clipped to the LM context of {}", caption.id, limit);
  }
  return s;
}

ag::Var sample_loss(ag::Tape& tape, const CaptionModel& model, const TrainingSample& sample,
                    const TrainingConfig& config) {
  if (config.objective == Objective::kLanguageModel) {
    const int start[] = {WordTokenizer::kEos};
    return model.caption_nll(tape, model.lm().embed_tokens(tape, start), sample.caption_tokens);
  }
  const ag::Var soft = model.project(tape, sample.noisy_embedding);
  const ag::Var prefix = model.compose_prefix(tape, soft, sample.hard_tokens, config.prompt_order);
  return model.caption_nll(tape, prefix, sample.caption_tokens);
}

double batch_loss(CaptionModel& model, std::span<const TrainingSample> batch,
                  const TrainingConfig& config, bool accumulate_grads) {
  if (batch.empty()) throw InputError("empty training batch");
  const double weight = 1.0 / static_cast<double>(batch.size());
  double total = 0.0;
  for (const auto& sample : batch) {
    ag::Tape tape(accumulate_grads);
    const ag::Var loss = sample_loss(tape, model, sample, config);
    const double value = loss.value()(0, 0);
    total += value;
    if (accumulate_grads && std::isfinite(value)) tape.backward(ag::scale(loss, weight));
  }
  return total * weight;
}

double training_loss(CaptionModel& model, std::span<const CaptionRecord> batch,
                     const Backbone& backbone, const EntityVocabulary& vocab,
                     const TrainingConfig& config, std::mt19937_64& rng) {
  const auto prepared = prepare_corpus(batch, model, backbone, vocab);
  std::vector<TrainingSample> samples;
  samples.reserve(prepared.size());
  for (const auto& p : prepared) samples.push_back(make_sample(p, model, config, rng, rng));
  return batch_loss(model, samples, config, /*accumulate_grads=*/false);
}

TrainingResult train(CaptionModel& model, std::span<const CaptionRecord> corpus,
                     const Backbone& backbone, const EntityVocabulary& vocab,
                     const TrainingConfig& config,
                     const std::function<void(const EpochLog&)>& on_epoch,
                     const std::optional<std::filesystem::path>& divergence_dump) {
  config.validate();
  if (static_cast<std::size_t>(model.spec().projector.input_dim) != backbone.dim()) {
    throw ShapeError(fmt::format("model expects {}-d embeddings but backbone '{}' produces {}",
                                 model.spec().projector.input_dim, backbone.id(), backbone.dim()));
  }
  auto& params = model.parameters();
  params.set_trainable_prefix("projector.", config.objective == Objective::kCaption);
  params.set_trainable_prefix("lm.", config.lm_finetune || config.objective == Objective::kLanguageModel);

  const auto prepared = prepare_corpus(corpus, model, backbone, vocab);
  if (prepared.empty()) throw InputError("training corpus contains no usable captions");

  AdamW optimizer(config.adam_beta1, config.adam_beta2, config.adam_eps, config.weight_decay);
  TrainingResult result;
  const auto started = std::chrono::steady_clock::now();
  std::vector<std::size_t> order(prepared.size());
  const auto batch = static_cast<std::size_t>(config.batch_size);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto shuffle_rng = derived_rng(config.seed, static_cast<std::uint64_t>(epoch), 0, Stream::kShuffle);
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double epoch_loss = 0.0;
    std::size_t epoch_batches = 0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      std::vector<TrainingSample> samples;
      std::vector<std::string> ids;
      for (std::size_t i = start; i < end; ++i) {
        const std::size_t item = order[i];
        const auto mask_epoch = config.mask_mode == MaskMode::kFixed ? 0u : static_cast<std::uint64_t>(epoch) + 1;
        auto mask_rng = derived_rng(config.seed, mask_epoch, item, Stream::kMask);
        auto noise_rng = derived_rng(config.seed, static_cast<std::uint64_t>(epoch), item, Stream::kNoise);
        samples.push_back(make_sample(prepared[item], model, config, mask_rng, noise_rng));
        ids.push_back(prepared[item].id);
      }
      params.zero_grad();
      const double loss = batch_loss(model, samples, config, /*accumulate_grads=*/true);
      if (!std::isfinite(loss)) {
        if (divergence_dump) {
          write_divergence_dump(*divergence_dump, model, config, epoch, result.steps, loss, ids);
        }
        throw TrainingDiverged(fmt::format("non-finite loss at epoch {} step {}", epoch, result.steps));
      }
      optimizer.step(params, schedule_lr(config, result.steps));
      ++result.steps;
      epoch_loss += loss;
      ++epoch_batches;
    }
    EpochLog log;
    log.epoch = epoch;
    log.step = result.steps;
    log.loss = epoch_loss / static_cast<double>(epoch_batches);
    log.wall_clock_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    result.epochs.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  params.zero_grad();
  return result;
}

WordTokenizer build_caption_tokenizer(std::span<const CaptionRecord> corpus,
                                      const EntityVocabulary& vocab,
                                      const HardPromptTemplate& hard_template) {
  std::vector<std::string> texts;
  texts.reserve(corpus.size() + vocab.size() + 1);
  for (const auto& r : corpus) texts.push_back(r.text);
  // Every built-in template is covered so the prompt can be switched at inference time.
  std::vector<HardPromptTemplate> templates{hard_template};
  for (auto id : {TemplateId::kDefault, TemplateId::kVariant1, TemplateId::kVariant2, TemplateId::kVariant3}) {
    templates.push_back(HardPromptTemplate::builtin(id));
  }
  for (const auto& t : templates) texts.push_back(t.prefix + " " + t.separator + " " + t.suffix);
  for (const auto& name : vocab.names()) texts.push_back(name);
  return WordTokenizer::build(texts);
}

}  // namespace entcap
