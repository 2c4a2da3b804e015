#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "entcap/corpus.hpp"
#include "entcap/encoder.hpp"
#include "entcap/model.hpp"
#include "entcap/prompts.hpp"

namespace entcap {

enum class MaskMode { kPerStep, kFixed };
enum class LrSchedule { kConstant, kLinearWarmup };
/// kCaption trains projector (+LM) on prefixed captions; kLanguageModel trains the LM
/// alone on raw captions, producing a prefix-free continuation model.
enum class Objective { kCaption, kLanguageModel };

struct TrainingConfig {
  int epochs = 15;
  int batch_size = 80;
  double learning_rate = 2e-5;
  double weight_decay = 0.0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double r_mask = 0.4;
  MaskMode mask_mode = MaskMode::kPerStep;
  double noise_variance = 0.016;
  HardPromptTemplate hard_template = HardPromptTemplate::default_template();
  PromptOrder prompt_order = PromptOrder::kSoftThenHard;
  std::uint64_t seed = 0;
  bool lm_finetune = true;
  LrSchedule lr_schedule = LrSchedule::kConstant;
  int warmup_steps = 0;
  Objective objective = Objective::kCaption;

  void validate() const;
};

/// Per-dataset presets: coco, flickr30k, flickrstyle10k.
TrainingConfig training_preset(std::string_view name);
std::vector<std::string> training_preset_names();

nlohmann::ordered_json to_json(const TrainingConfig& config);
/// Overlays the keys present in `j` onto `base`.
TrainingConfig apply_json(TrainingConfig base, const nlohmann::ordered_json& j);

/// Adam with decoupled weight decay over the trainable parameters of a store.
class AdamW {
 public:
  AdamW(double beta1, double beta2, double eps, double weight_decay);
  void step(ag::ParameterStore& params, double learning_rate);
  long steps() const { return steps_; }

 private:
  double beta1_, beta2_, eps_, weight_decay_;
  long steps_ = 0;
  std::vector<Matrix> first_moment_;
  std::vector<Matrix> second_moment_;
};

/// A caption with everything that does not change between epochs precomputed.
struct PreparedCaption {
  std::string id;
  std::string text;
  Embedding clean_embedding;
  std::vector<Entity> nouns;
  std::vector<int> caption_tokens;  // ends in <eos>
};

/// Records whose caption tokenises to nothing are skipped with a warning.
std::vector<PreparedCaption> prepare_corpus(std::span<const CaptionRecord> records,
                                            const CaptionModel& model, const Backbone& backbone,
                                            const EntityVocabulary& vocab);

/// One stochastic view of a caption: noisy embedding and masked hard prompt.
struct TrainingSample {
  Embedding noisy_embedding;
  HardPrompt hard_prompt;
  std::vector<int> hard_tokens;
  std::vector<int> caption_tokens;

  /// LM input length L + n + |w| for a soft prompt of `soft_length` rows.
  std::size_t sequence_length(int soft_length) const {
    return static_cast<std::size_t>(soft_length) + hard_tokens.size() + caption_tokens.size();
  }
};

TrainingSample make_sample(const PreparedCaption& caption, const CaptionModel& model,
                           const TrainingConfig& config, std::mt19937_64& mask_rng,
                           std::mt19937_64& noise_rng);

/// Loss of one sample on `tape` under the configured objective.
ag::Var sample_loss(ag::Tape& tape, const CaptionModel& model, const TrainingSample& sample,
                    const TrainingConfig& config);

/// Mean over the batch of per-caption mean token NLL. With `accumulate_grads` the gradient
/// of that mean is added to the parameters' grad buffers.
double batch_loss(CaptionModel& model, std::span<const TrainingSample> batch,
                  const TrainingConfig& config, bool accumulate_grads);

/// Prepares records, samples them with the configured rngs and returns the batch loss.
double training_loss(CaptionModel& model, std::span<const CaptionRecord> batch,
                     const Backbone& backbone, const EntityVocabulary& vocab,
                     const TrainingConfig& config, std::mt19937_64& rng);

struct EpochLog {
  int epoch = 0;
  long step = 0;
  double loss = 0.0;
  double wall_clock_seconds = 0.0;
};

struct TrainingResult {
  std::vector<EpochLog> epochs;
  long steps = 0;
};

/// Runs epochs x batches of AdamW. The encoder is never touched; LM parameters are frozen
/// unless `lm_finetune`. A non-finite loss writes `divergence_dump` (when set) and throws
/// TrainingDiverged. Deterministic for a given seed.
TrainingResult train(CaptionModel& model, std::span<const CaptionRecord> corpus,
                     const Backbone& backbone, const EntityVocabulary& vocab,
                     const TrainingConfig& config,
                     const std::function<void(const EpochLog&)>& on_epoch = {},
                     const std::optional<std::filesystem::path>& divergence_dump = {});

/// Tokenizer covering corpus words, hard-prompt template words and vocabulary names.
WordTokenizer build_caption_tokenizer(std::span<const CaptionRecord> corpus,
                                      const EntityVocabulary& vocab,
                                      const HardPromptTemplate& hard_template);

}  // namespace entcap
