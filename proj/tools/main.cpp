// entcap command-line interface: train, caption, evaluate, diagnose, retrieve.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "entcap/commands.hpp"
#include "entcap/errors.hpp"

namespace {

using entcap::Json;

struct Common {
  std::optional<std::string> config;
  std::optional<std::string> preset;
  std::optional<long long> seed;
  std::optional<std::string> out;
};

void add_common(CLI::App* app, Common& c, bool with_preset, bool with_out) {
  app->add_option("--config", c.config, "JSON config file layered over the preset");
  if (with_preset) app->add_option("--preset", c.preset, "named preset");
  app->add_option("--seed", c.seed, "random seed (default 0)");
  if (with_out) app->add_option("--out", c.out, "output directory");
}

// Collects flags that were given on the command line into a JSON override layer.
class Overrides {
 public:
  template <typename T>
  void bind(CLI::App* app, const std::string& flag, const std::string& key, std::string help) {
    auto value = std::make_shared<std::optional<T>>();
    app->add_option(flag, *value, std::move(help));
    setters_.push_back([value, key](Json& j) {
      if (*value) set_path(j, key, Json(**value));
    });
    holders_.push_back(value);
  }
  void flag(CLI::App* app, const std::string& name, const std::string& key, std::string help) {
    auto value = std::make_shared<bool>(false);
    app->add_flag(name, *value, std::move(help));
    setters_.push_back([value, key](Json& j) {
      if (*value) set_path(j, key, true);
    });
    holders_.push_back(value);
  }
  Json build(const Common& c) const {
    Json j = Json::object();
    for (const auto& s : setters_) s(j);
    if (c.seed) j["seed"] = *c.seed;
    if (c.out) j["out"] = *c.out;
    return j;
  }

 private:
  static void set_path(Json& j, const std::string& key, Json value) {
    const auto dot = key.find('.');
    if (dot == std::string::npos) {
      j[key] = std::move(value);
    } else {
      set_path(j[key.substr(0, dot)], key.substr(dot + 1), std::move(value));
    }
  }
  std::vector<std::function<void(Json&)>> setters_;
  std::vector<std::shared_ptr<void>> holders_;
};

void add_generation_flags(CLI::App* app, Overrides& o) {
  o.bind<std::string>(app, "--checkpoint", "checkpoint", "trained captioner checkpoint");
  o.bind<std::string>(app, "--images", "images", "image file or directory");
  o.bind<std::string>(app, "--embeddings", "embeddings", "JSON-lines of {id, embedding}");
  o.bind<std::string>(app, "--texts", "texts", "caption lines embedded with the text encoder");
  o.bind<std::string>(app, "--vocab", "vocabulary", "entity vocabulary file");
  o.bind<int>(app, "--beam", "beam", "beam size");
  o.bind<int>(app, "--max-len", "max_len", "maximum caption tokens");
  o.bind<std::string>(app, "--template", "template", "hard prompt template id");
  o.bind<std::string>(app, "--prompt-order", "prompt_order", "soft_then_hard or hard_then_soft");
  o.bind<int>(app, "--k", "retrieval.k", "maximum retrieved entities");
  o.bind<double>(app, "--p-thres", "retrieval.p_thres", "entity probability threshold");
  o.bind<double>(app, "--tau", "retrieval.tau", "retrieval softmax temperature");
  o.flag(app, "--ensemble", "ensemble", "prompt-ensembled class embeddings");
  o.bind<std::string>(app, "--embedding-cache", "embedding_cache", "vocabulary embedding cache dir");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Entity-aware zero-shot captioning toolkit"};
  app.require_subcommand(1);
  spdlog::set_level(spdlog::level::warn);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "log progress");

  Common train_c, caption_c, eval_c, diag_c, retr_c;
  Overrides train_o, caption_o, eval_o, diag_o, retr_o;

  auto* train = app.add_subcommand("train", "train a captioner (or a pure LM) on a caption corpus");
  add_common(train, train_c, true, true);
  train_o.bind<std::string>(train, "--corpus", "corpus", "caption corpus");
  train_o.bind<std::string>(train, "--corpus-format", "corpus_format", "auto, karpathy_json or plain_lines");
  train_o.bind<std::string>(train, "--vocab", "vocabulary", "entity vocabulary file");
  train_o.bind<std::string>(train, "--backbone", "backbone", "encoder backbone id");
  train_o.bind<std::string>(train, "--model", "model", "model size preset");
  train_o.bind<int>(train, "--soft-len", "soft_len", "soft prompt length L");
  train_o.bind<double>(train, "--mask-rate", "training.r_mask", "entity masking rate");
  train_o.bind<std::string>(train, "--template", "training.hard_template", "hard prompt template id");
  train_o.bind<int>(train, "--epochs", "training.epochs", "training epochs");
  train_o.bind<int>(train, "--batch-size", "training.batch_size", "batch size");
  train_o.bind<double>(train, "--lr", "training.learning_rate", "learning rate");
  train_o.bind<double>(train, "--noise-variance", "training.noise_variance", "embedding noise variance");
  train_o.bind<std::string>(train, "--objective", "training.objective", "caption or language_model");
  train_o.bind<std::string>(train, "--lm-init", "lm_init", "checkpoint to initialise LM weights from");

  auto* caption = app.add_subcommand("caption", "caption images or precomputed embeddings");
  add_common(caption, caption_c, true, true);
  add_generation_flags(caption, caption_o);
  caption_o.flag(caption, "--timing", "timing", "record per-stage wall-clock");

  auto* evaluate = app.add_subcommand("evaluate", "score captions against references");
  add_common(evaluate, eval_c, false, true);
  eval_o.bind<std::string>(evaluate, "--captions", "captions", "captions JSON-lines");
  eval_o.bind<std::string>(evaluate, "--references", "references", "JSON object id -> [references]");
  eval_o.bind<std::string>(evaluate, "--image-embeddings", "image_embeddings", "JSON-lines for CLIP-S");
  eval_o.bind<std::string>(evaluate, "--domain-tags", "domain_tags", "JSON object id -> in|near|out");
  eval_o.bind<std::string>(evaluate, "--vocab", "vocabulary", "vocabulary for entity precision");
  eval_o.bind<std::string>(evaluate, "--backbone", "backbone", "encoder backbone id");

  auto* diagnose = app.add_subcommand("diagnose", "visual-guidance curve G_vis(m)");
  add_common(diagnose, diag_c, true, true);
  add_generation_flags(diagnose, diag_o);
  diag_o.bind<std::string>(diagnose, "--lm", "lm", "pure language model checkpoint");
  diag_o.bind<std::string>(diagnose, "--references", "references", "JSON object id -> [references]");
  diag_o.bind<std::string>(diagnose, "--captions", "captions", "pre-generated captions JSON-lines");
  std::optional<std::string> m_list;
  diagnose->add_option("--m", m_list, "comma-separated word counts, 'full' for whole captions");

  auto* retrieve = app.add_subcommand("retrieve", "show entity retrieval for one image or text");
  add_common(retrieve, retr_c, true, false);
  retr_o.bind<std::string>(retrieve, "--image", "image", "image file");
  retr_o.bind<std::string>(retrieve, "--text", "text", "text query instead of an image");
  retr_o.bind<std::string>(retrieve, "--vocab", "vocabulary", "entity vocabulary file");
  retr_o.bind<std::string>(retrieve, "--backbone", "backbone", "encoder backbone id");
  retr_o.bind<int>(retrieve, "--k", "retrieval.k", "maximum retrieved entities");
  retr_o.bind<double>(retrieve, "--p-thres", "retrieval.p_thres", "entity probability threshold");
  retr_o.bind<double>(retrieve, "--tau", "retrieval.tau", "retrieval softmax temperature");
  retr_o.bind<int>(retrieve, "--top", "top", "number of ranked classes to print");
  retr_o.flag(retrieve, "--ensemble", "ensemble", "prompt-ensembled class embeddings");

  CLI11_PARSE(app, argc, argv);
  if (verbose) spdlog::set_level(spdlog::level::info);

  try {
    auto run = [](const char* name, const Common& c, const Json& overrides) {
      const std::optional<std::filesystem::path> file =
          c.config ? std::optional<std::filesystem::path>(*c.config) : std::nullopt;
      Json cfg = entcap::resolve_config(name, c.preset, file, overrides);
      std::cerr << "resolved config: " << cfg.dump() << "\n";
      return cfg;
    };
    if (train->parsed()) return entcap::cmd_train(run("train", train_c, train_o.build(train_c)));
    if (caption->parsed()) return entcap::cmd_caption(run("caption", caption_c, caption_o.build(caption_c)));
    if (evaluate->parsed()) return entcap::cmd_evaluate(run("evaluate", eval_c, eval_o.build(eval_c)));
    if (diagnose->parsed()) {
      Json o = diag_o.build(diag_c);
      if (m_list) {
        Json ms = Json::array();
        std::string item;
        std::stringstream ss(*m_list);
        while (std::getline(ss, item, ',')) {
          if (item.empty()) continue;
          if (item == "full") {
            ms.push_back(item);
          } else {
            try {
              ms.push_back(std::stoi(item));
            } catch (const std::exception&) {
              throw entcap::ConfigError("m: '" + item + "' is not a word count");
            }
          }
        }
        o["m"] = ms;
      }
      return entcap::cmd_diagnose(run("diagnose", diag_c, o));
    }
    if (retrieve->parsed()) return entcap::cmd_retrieve(run("retrieve", retr_c, retr_o.build(retr_c)), std::cout);
  } catch (const entcap::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return entcap::kExitInvalidConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return entcap::kExitFailure;
  }
  return entcap::kExitFailure;
}
