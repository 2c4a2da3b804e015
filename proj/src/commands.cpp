#include "entcap/commands.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <map>
#include <ostream>
#include <set>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "entcap/checkpoint.hpp"
#include "entcap/corpus.hpp"
#include "entcap/decoding.hpp"
#include "entcap/diagnostics.hpp"
#include "entcap/errors.hpp"
#include "entcap/image.hpp"
#include "entcap/metrics.hpp"
#include "entcap/nouns.hpp"
#include "entcap/retrieval.hpp"
#include "entcap/training.hpp"

namespace entcap {

namespace fs = std::filesystem;

namespace {

bool has(const Json& cfg, const char* field) { return cfg.contains(field) && !cfg.at(field).is_null(); }

template <typename T>
T get(const Json& cfg, const char* field) {
  if (!has(cfg, field)) throw ConfigError(fmt::format("{}: required field is missing", field));
  try {
    return cfg.at(field).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(fmt::format("{}: unexpected value {}", field, cfg.at(field).dump()));
  }
}

fs::path existing_path(const Json& cfg, const char* field) {
  const fs::path p = get<std::string>(cfg, field);
  if (p.empty()) throw ConfigError(fmt::format("{}: required path is empty", field));
  if (!fs::exists(p)) throw ConfigError(fmt::format("{}: path '{}' does not exist", field, p.string()));
  return p;
}

std::optional<fs::path> optional_path(const Json& cfg, const char* field) {
  if (!has(cfg, field)) return std::nullopt;
  return existing_path(cfg, field);
}

fs::path output_dir(const Json& cfg) {
  const fs::path out = get<std::string>(cfg, "out");
  if (out.empty()) throw ConfigError("out: required path is empty");
  fs::create_directories(out);
  return out;
}

void write_text_file(const std::string& text, const fs::path& path) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(fmt::format("cannot write '{}'", path.string()));
    out << text;
    if (!out) throw IoError(fmt::format("write to '{}' failed", path.string()));
  }
  fs::rename(tmp, path);
}

RetrievalConfig retrieval_from(const Json& cfg) {
  RetrievalConfig r;
  const Json& j = cfg.contains("retrieval") ? cfg.at("retrieval") : Json::object();
  try {
    r.tau = j.value("tau", r.tau);
    r.k = j.value("k", r.k);
    r.p_thres = j.value("p_thres", r.p_thres);
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(fmt::format("retrieval: unexpected value {}", j.dump()));
  }
  r.ensemble = has(cfg, "ensemble") && get<bool>(cfg, "ensemble");
  try {
    r.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(fmt::format("retrieval: {}", e.what()));
  }
  return r;
}

Json retrieval_json(const RetrievalConfig& r) {
  return {{"k", r.k}, {"p_thres", r.p_thres}, {"tau", r.tau}};
}

HardPromptTemplate template_from(const Json& value, const HardPromptTemplate& fallback) {
  if (value.is_null()) return fallback;
  try {
    return apply_json(TrainingConfig{}, Json{{"hard_template", value}}).hard_template;
  } catch (const ConfigError& e) {
    throw ConfigError(fmt::format("template: {}", e.what()));
  }
}

Json entities_json(const std::vector<Entity>& entities) {
  Json out = Json::array();
  for (const auto& e : entities) {
    Json item{{"name", e.name}};
    if (e.score) item["score"] = *e.score;
    out.push_back(std::move(item));
  }
  return out;
}

EntityVocabulary vocabulary_from(const Json& cfg) {
  const bool single = has(cfg, "single_word_only") && get<bool>(cfg, "single_word_only");
  return load_vocabulary(existing_path(cfg, "vocabulary"), single);
}

/// Input item for captioning: either an already computed embedding or an image file.
struct CaptionInput {
  std::string id;
  std::optional<Embedding> embedding;
  std::optional<std::string> text;
  fs::path image;
};

std::vector<CaptionInput> caption_inputs(const Json& cfg) {
  const bool images = has(cfg, "images");
  const bool embeddings = has(cfg, "embeddings");
  const bool texts = has(cfg, "texts");
  if (int(images) + int(embeddings) + int(texts) != 1) {
    throw ConfigError("images: exactly one of 'images', 'embeddings' or 'texts' is required");
  }
  std::vector<CaptionInput> inputs;
  if (embeddings) {
    for (auto& [id, e] : load_embeddings(existing_path(cfg, "embeddings"))) {
      inputs.push_back({id, std::move(e), std::nullopt, {}});
    }
    return inputs;
  }
  if (texts) {
    for (auto& r : load_corpus(existing_path(cfg, "texts"), CorpusFormat::kPlainLines)) {
      inputs.push_back({r.id, std::nullopt, std::move(r.text), {}});
    }
    return inputs;
  }
  const fs::path root = existing_path(cfg, "images");
  if (fs::is_directory(root)) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(root)) {
      if (entry.is_regular_file()) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) inputs.push_back({f.filename().string(), std::nullopt, std::nullopt, f});
  } else {
    inputs.push_back({root.filename().string(), std::nullopt, std::nullopt, root});
  }
  return inputs;
}

double elapsed_ms(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - since).count();
}

/// Captions every input; failures become records with an "error" field.
std::vector<Json> run_captioning(const Json& cfg, const LoadedCheckpoint& ckpt) {
  const auto backbone = load_backbone(ckpt.info.backbone_id, ckpt.info.backbone_checksum);
  const EntityVocabulary vocab = vocabulary_from(cfg);
  const RetrievalConfig retrieval = retrieval_from(cfg);

  GenerationOptions opts;
  opts.beam_size = get<int>(cfg, "beam");
  opts.max_len = get<int>(cfg, "max_len");
  if (opts.beam_size < 1) throw ConfigError("beam: must be >= 1");
  if (opts.max_len < 1) throw ConfigError("max_len: must be >= 1");
  opts.retrieval = retrieval;
  opts.hard_template = template_from(cfg.value("template", Json()), ckpt.info.training.hard_template);
  opts.order = has(cfg, "prompt_order") ? parse_prompt_order(get<std::string>(cfg, "prompt_order"))
                                        : ckpt.info.training.prompt_order;
  const bool timing = has(cfg, "timing") && get<bool>(cfg, "timing");
  const auto inputs = caption_inputs(cfg);

  std::shared_ptr<const VocabularyEmbeddings> classes;
  if (has(cfg, "embedding_cache")) {
    EmbeddingCache cache(get<std::string>(cfg, "embedding_cache"));
    classes = cache.get(vocab, *backbone, retrieval.ensemble);
  } else {
    classes = std::make_shared<const VocabularyEmbeddings>(embed_vocabulary(vocab, *backbone, retrieval.ensemble));
  }

  const Json retrieval_echo = [&] {
    Json j = retrieval_json(retrieval);
    j["preset"] = cfg.value("preset", Json());
    j["ensemble"] = retrieval.ensemble;
    return j;
  }();

  std::vector<Json> records;
  for (const auto& input : inputs) {
    Json rec{{"id", input.id}};
    try {
      auto t0 = std::chrono::steady_clock::now();
      const Embedding embedding = input.embedding ? *input.embedding
                                  : input.text    ? backbone->embed_text(*input.text)
                                                  : backbone->embed_image(load_image(input.image));
      const double encode_ms = elapsed_ms(t0);
      t0 = std::chrono::steady_clock::now();
      const auto entities = classify_entities(embedding, *classes, retrieval);
      const double retrieve_ms = elapsed_ms(t0);
      t0 = std::chrono::steady_clock::now();
      const GenerationResult result = generate_with_entities(ckpt.model, embedding, entities, opts);
      const double decode_ms = elapsed_ms(t0);
      rec["caption"] = result.caption;
      rec["entities"] = entities_json(result.entities);
      rec["hard_prompt"] = result.hard_prompt.text;
      rec["prefix_length"] = result.prefix_length;
      rec["retrieval"] = retrieval_echo;
      if (timing) rec["timing_ms"] = {{"encode", encode_ms}, {"retrieve", retrieve_ms}, {"decode", decode_ms}};
    } catch (const Error& e) {
      spdlog::warn("{}: {}", input.id, e.what());
      rec["error"] = e.what();
    }
    records.push_back(std::move(rec));
  }
  return records;
}

Json without_out(Json cfg) {
  cfg.erase("out");
  return cfg;
}

using ReferenceMap = std::map<std::string, std::vector<std::string>>;

ReferenceMap load_references(const fs::path& path) {
  const Json j = read_json_file(path);
  if (!j.is_object()) throw ParseError(fmt::format("{}: references must be an object of id -> [captions]", path.string()));
  ReferenceMap refs;
  for (const auto& [id, list] : j.items()) {
    if (!list.is_array() || list.empty()) throw ParseError(fmt::format("references for '{}' must be a non-empty array", id));
    refs[id] = list.get<std::vector<std::string>>();
  }
  return refs;
}

/// (id, caption) pairs from a captions file, plus the ids whose captioning failed.
std::pair<std::vector<std::pair<std::string, std::string>>, std::vector<std::string>> load_captions(
    const fs::path& path) {
  std::vector<std::pair<std::string, std::string>> ok;
  std::vector<std::string> failed;
  std::set<std::string> seen;
  for (const auto& rec : read_json_lines(path)) {
    const auto id = rec.at("id").get<std::string>();
    if (!seen.insert(id).second) throw InputError(fmt::format("duplicate caption id '{}'", id));
    if (rec.contains("error")) {
      failed.push_back(id);
    } else {
      ok.emplace_back(id, rec.at("caption").get<std::string>());
    }
  }
  return {ok, failed};
}

void check_join(const std::vector<std::pair<std::string, std::string>>& captions,
                const std::vector<std::string>& failed, const ReferenceMap& refs) {
  std::vector<std::string> orphans;
  std::set<std::string> ids(failed.begin(), failed.end());
  for (const auto& [id, c] : captions) {
    ids.insert(id);
    if (refs.count(id) == 0) orphans.push_back(fmt::format("caption '{}' has no references", id));
  }
  for (const auto& [id, r] : refs) {
    if (ids.count(id) == 0) orphans.push_back(fmt::format("references '{}' have no caption", id));
  }
  if (!orphans.empty()) {
    std::string msg = "unjoinable ids:";
    for (const auto& o : orphans) msg += "\n  " + o;
    throw InputError(msg);
  }
}

Json metric_block(const std::vector<std::size_t>& items,
                  const std::vector<std::pair<std::string, std::string>>& captions,
                  const ReferenceMap& refs, const std::map<std::string, Embedding>* images,
                  const Backbone* backbone, const EntityVocabulary* vocab) {
  std::vector<std::string> cands;
  ReferenceSets ref_sets;
  for (auto i : items) {
    cands.push_back(captions[i].second);
    ref_sets.push_back(refs.at(captions[i].first));
  }
  Json block{{"count", items.size()}};
  if (items.empty()) return block;
  const BleuScores b = bleu_scores(cands, ref_sets);
  for (int n = 1; n <= 4; ++n) block[fmt::format("bleu_{}", n)] = b.bleu[static_cast<std::size_t>(n - 1)];
  block["cider"] = cider(cands, ref_sets);
  block["meteor"] = nullptr;
  block["spice"] = nullptr;
  if (images != nullptr && backbone != nullptr) {
    std::vector<Embedding> image_embs;
    for (auto i : items) image_embs.push_back(images->at(captions[i].first));
    block["clip_s"] = clip_score(image_embs, cands, *backbone);
  }
  if (vocab != nullptr) {
    std::vector<std::vector<std::string>> gold;
    for (const auto& rs : ref_sets) {
      std::vector<std::string> names;
      for (const auto& r : rs) {
        for (const auto& e : extract_nouns(r, *vocab)) {
          if (std::find(names.begin(), names.end(), e.name) == names.end()) names.push_back(e.name);
        }
      }
      gold.push_back(std::move(names));
    }
    const EntityPrecision p = entity_precision(cands, gold, *vocab);
    block["entity_precision"] = {{"value", p.value()}, {"correct", p.correct}, {"total", p.total}};
  }
  return block;
}

std::string format_number(double v) { return fmt::format("{}", v); }

}  // namespace

std::vector<Json> read_json_lines(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot open '{}'", path.string()));
  std::vector<Json> rows;
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (normalize_whitespace(line).empty()) continue;
    try {
      rows.push_back(Json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(fmt::format("{}:{}: {}", path.string(), n, e.what()));
    }
  }
  return rows;
}

Json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot open '{}'", path.string()));
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

void write_json_file(const Json& value, const fs::path& path) {
  write_text_file(value.dump(2) + "\n", path);
}

std::vector<std::pair<std::string, Embedding>> load_embeddings(const fs::path& path) {
  std::vector<std::pair<std::string, Embedding>> rows;
  for (const auto& j : read_json_lines(path)) {
    try {
      const auto values = j.at("embedding").get<std::vector<double>>();
      Eigen::VectorXd v = Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
      if (v.norm() == 0.0) throw ParseError(fmt::format("embedding '{}' is zero", j.at("id").dump()));
      rows.emplace_back(j.at("id").get<std::string>(), normalized(std::move(v)));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(fmt::format("{}: {}", path.string(), e.what()));
    }
  }
  return rows;
}

void save_embeddings(const std::vector<std::pair<std::string, Embedding>>& rows, const fs::path& path) {
  std::string text;
  for (const auto& [id, e] : rows) {
    Json j{{"id", id}, {"embedding", std::vector<double>(e.values.begin(), e.values.end())}};
    text += j.dump() + "\n";
  }
  write_text_file(text, path);
}

Json resolve_config(std::string_view command, const std::optional<std::string>& preset,
                    const std::optional<fs::path>& config_file, const Json& overrides) {
  Json cfg;
  Json file = Json::object();
  if (config_file) {
    if (!fs::exists(*config_file)) {
      throw ConfigError(fmt::format("config: path '{}' does not exist", config_file->string()));
    }
    file = read_json_file(*config_file);
    if (!file.is_object()) throw ConfigError("config: file must hold a JSON object");
  }
  const Json retrieval_defaults = retrieval_json(retrieval_preset("cross_domain"));
  if (command == "train") {
    cfg = {{"command", "train"}, {"preset", "coco"}, {"seed", 0}, {"corpus", nullptr},
           {"corpus_format", "auto"}, {"vocabulary", nullptr}, {"single_word_only", false},
           {"backbone", "hashclip-b32"}, {"model", "tiny"}, {"soft_len", nullptr},
           {"lm_init", nullptr}, {"training", to_json(TrainingConfig{})}, {"out", nullptr}};
  } else if (command == "caption" || command == "diagnose") {
    cfg = {{"command", std::string(command)}, {"preset", "cross_domain"}, {"seed", 0},
           {"checkpoint", nullptr}};
    if (command == "diagnose") {
      cfg["lm"] = nullptr;
      cfg["references"] = nullptr;
      cfg["captions"] = nullptr;
      cfg["m"] = Json::array();
    }
    cfg.update(Json{{"images", nullptr}, {"embeddings", nullptr}, {"texts", nullptr}, {"vocabulary", nullptr},
                    {"single_word_only", false}, {"ensemble", false}, {"retrieval", retrieval_defaults},
                    {"beam", 5}, {"max_len", 30}, {"template", nullptr}, {"prompt_order", nullptr},
                    {"timing", false}, {"embedding_cache", nullptr}, {"out", nullptr}});
  } else if (command == "evaluate") {
    cfg = {{"command", "evaluate"}, {"seed", 0}, {"captions", nullptr}, {"references", nullptr},
           {"image_embeddings", nullptr}, {"domain_tags", nullptr}, {"vocabulary", nullptr},
           {"single_word_only", false}, {"backbone", "hashclip-b32"}, {"out", nullptr}};
  } else if (command == "retrieve") {
    cfg = {{"command", "retrieve"}, {"preset", "cross_domain"}, {"seed", 0}, {"image", nullptr},
           {"text", nullptr}, {"vocabulary", nullptr}, {"single_word_only", false},
           {"backbone", "hashclip-b32"}, {"ensemble", false}, {"retrieval", retrieval_defaults},
           {"top", 10}};
  } else {
    throw ConfigError(fmt::format("command: unknown command '{}'", command));
  }

  std::optional<std::string> preset_name = preset;
  if (!preset_name && file.contains("preset")) {
    if (!file.at("preset").is_string()) throw ConfigError("preset: expected a preset name");
    preset_name = file.at("preset").get<std::string>();
  }
  if (preset_name && !cfg.contains("preset")) {
    throw ConfigError(fmt::format("preset: '{}' takes no preset", command));
  }
  if (!preset_name && cfg.contains("preset")) preset_name = cfg.at("preset").get<std::string>();
  if (preset_name) {
    Json layer;
    try {
      if (command == "train") {
        const TrainingConfig t = training_preset(*preset_name);
        layer = {{"training", {{"epochs", t.epochs}, {"batch_size", t.batch_size},
                               {"learning_rate", t.learning_rate}, {"r_mask", t.r_mask}}}};
      } else {
        layer = {{"retrieval", retrieval_json(retrieval_preset(*preset_name))}};
      }
    } catch (const ConfigError& e) {
      throw ConfigError(fmt::format("preset: {}", e.what()));
    }
    cfg.merge_patch(layer);
  }
  cfg.merge_patch(file);
  cfg.merge_patch(overrides);
  if (preset_name) cfg["preset"] = *preset_name;
  cfg["command"] = std::string(command);
  if (!cfg.at("seed").is_number_unsigned() && !cfg.at("seed").is_number_integer()) {
    throw ConfigError(fmt::format("seed: expected an integer, got {}", cfg.at("seed").dump()));
  }
  if (cfg.contains("training")) cfg["training"]["seed"] = cfg.at("seed");
  return cfg;
}

int cmd_train(const Json& cfg) {
  const fs::path corpus_path = existing_path(cfg, "corpus");
  std::string format = get<std::string>(cfg, "corpus_format");
  if (format == "auto") format = corpus_path.extension() == ".json" ? "karpathy_json" : "plain_lines";
  const CorpusFormat corpus_format = [&] {
    try {
      return parse_corpus_format(format);
    } catch (const ConfigError& e) {
      throw ConfigError(fmt::format("corpus_format: {}", e.what()));
    }
  }();
  const EntityVocabulary vocab = vocabulary_from(cfg);
  TrainingConfig training;
  try {
    training = apply_json(TrainingConfig{}, cfg.at("training"));
    training.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(fmt::format("training: {}", e.what()));
  }
  const auto backbone = load_backbone(get<std::string>(cfg, "backbone"));
  ModelSpec spec = [&] {
    try {
      return model_preset(get<std::string>(cfg, "model"), static_cast<int>(backbone->dim()));
    } catch (const ConfigError& e) {
      throw ConfigError(fmt::format("model: {}", e.what()));
    }
  }();
  if (has(cfg, "soft_len")) {
    spec.projector.query_count = get<int>(cfg, "soft_len");
    if (spec.projector.query_count < 1) throw ConfigError("soft_len: must be >= 1");
  }
  const std::optional<fs::path> lm_init = optional_path(cfg, "lm_init");
  const fs::path out = output_dir(cfg);
  write_json_file(cfg, out / "config.json");

  std::vector<CaptionRecord> corpus;
  for (auto& r : load_corpus(corpus_path, corpus_format)) {
    if (r.split == Split::kTrain) corpus.push_back(std::move(r));
  }
  if (corpus.empty()) throw InputError("corpus: no training captions");

  CaptionModel model(spec, build_caption_tokenizer(corpus, vocab, training.hard_template), training.seed);
  if (lm_init) {
    const LoadedCheckpoint init = load_checkpoint(*lm_init);
    if (init.model.tokenizer().tokens() != model.tokenizer().tokens()) {
      throw ConfigError("lm_init: tokenizer differs from the one built for this corpus");
    }
    for (auto& p : model.parameters().all()) {
      if (p.name.rfind("lm.", 0) != 0) continue;
      const ag::Parameter* src = init.model.parameters().find(p.name);
      if (src == nullptr || src->value.rows() != p.value.rows() || src->value.cols() != p.value.cols()) {
        throw ConfigError(fmt::format("lm_init: tensor '{}' missing or mis-shaped", p.name));
      }
      p.value = src->value;
    }
  }

  const fs::path log_path = out / "train_log.jsonl";
  std::ofstream log(log_path, std::ios::trunc);
  if (!log) throw IoError(fmt::format("cannot write '{}'", log_path.string()));
  train(model, corpus, *backbone, vocab, training,
        [&](const EpochLog& e) {
          const Json line{{"epoch", e.epoch}, {"step", e.step}, {"loss", e.loss},
                          {"wall_clock", e.wall_clock_seconds}};
          log << line.dump() << "\n" << std::flush;
          spdlog::info("epoch {} step {} loss {:.6f}", e.epoch, e.step, e.loss);
        },
        out / "divergence.json");

  CheckpointInfo info;
  info.backbone_id = backbone->id();
  info.backbone_checksum = backbone->checksum();
  info.vocab_checksum = vocab.checksum();
  info.vocab_label = vocab.source_label();
  info.training = training;
  info.lm_finetuned = training.lm_finetune || training.objective == Objective::kLanguageModel;
  info.extra = {{"config", without_out(cfg)}};
  save_checkpoint(model, info, out / "checkpoint.bin");
  return kExitOk;
}

int cmd_caption(const Json& cfg) {
  const LoadedCheckpoint ckpt = load_checkpoint(existing_path(cfg, "checkpoint"));
  const fs::path out = output_dir(cfg);
  const auto records = run_captioning(cfg, ckpt);
  write_json_file(cfg, out / "config.json");
  std::string text;
  for (const auto& r : records) text += r.dump() + "\n";
  write_text_file(text, out / "captions.jsonl");
  return kExitOk;
}

int cmd_evaluate(const Json& cfg) {
  const auto [captions, failed] = load_captions(existing_path(cfg, "captions"));
  const ReferenceMap refs = load_references(existing_path(cfg, "references"));
  const auto image_path = optional_path(cfg, "image_embeddings");
  const auto tags_path = optional_path(cfg, "domain_tags");
  std::optional<EntityVocabulary> vocab;
  if (has(cfg, "vocabulary")) vocab = vocabulary_from(cfg);
  const fs::path out = output_dir(cfg);

  ReferenceMap scored_refs = refs;
  for (const auto& id : failed) scored_refs.erase(id);
  check_join(captions, failed, refs);

  std::unique_ptr<Backbone> backbone;
  std::map<std::string, Embedding> images;
  if (image_path) {
    backbone = load_backbone(get<std::string>(cfg, "backbone"));
    for (auto& [id, e] : load_embeddings(*image_path)) images.emplace(id, std::move(e));
    for (const auto& [id, c] : captions) {
      if (images.count(id) == 0) throw InputError(fmt::format("image_embeddings: no embedding for '{}'", id));
    }
  }

  std::vector<std::size_t> all(captions.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const auto* images_ptr = image_path ? &images : nullptr;
  const auto* vocab_ptr = vocab ? &*vocab : nullptr;

  Json report;
  report["schema_version"] = kReportSchemaVersion;
  report["config"] = without_out(cfg);
  report["overall"] = metric_block(all, captions, refs, images_ptr, backbone.get(), vocab_ptr);
  if (tags_path) {
    const Json tags = read_json_file(*tags_path);
    std::map<std::string, std::vector<std::size_t>> by_domain;
    for (std::size_t i = 0; i < captions.size(); ++i) {
      const auto& id = captions[i].first;
      if (!tags.contains(id)) throw InputError(fmt::format("domain_tags: no tag for '{}'", id));
      by_domain[std::string(to_string(parse_domain_tag(tags.at(id).get<std::string>())))].push_back(i);
    }
    Json domains = Json::object();
    for (const char* d : {"in", "near", "out"}) {
      if (by_domain.count(d) != 0) {
        domains[d] = metric_block(by_domain[d], captions, refs, images_ptr, backbone.get(), vocab_ptr);
      }
    }
    report["domains"] = domains;
  }
  report["failed"] = failed;
  Json samples = Json::array();
  for (const auto& [id, c] : captions) samples.push_back({{"id", id}, {"caption", c}, {"references", refs.at(id)}});
  report["samples"] = samples;
  write_json_file(report, out / "report.json");
  return kExitOk;
}

int cmd_diagnose(const Json& cfg) {
  const ReferenceMap refs = load_references(existing_path(cfg, "references"));
  const LoadedCheckpoint lm = load_checkpoint(existing_path(cfg, "lm"));
  if (lm.info.training.objective != Objective::kLanguageModel) {
    throw ConfigError("lm: checkpoint was not trained with the language_model objective");
  }
  const int max_len = get<int>(cfg, "max_len");
  if (max_len < 1) throw ConfigError("max_len: must be >= 1");

  std::vector<std::pair<std::string, std::string>> captions;
  std::vector<std::string> failed;
  std::optional<fs::path> captions_path = optional_path(cfg, "captions");
  std::optional<LoadedCheckpoint> captioner;
  if (!captions_path) captioner.emplace(load_checkpoint(existing_path(cfg, "checkpoint")));
  if (!cfg.at("m").is_array()) throw ConfigError("m: expected a list of word counts");
  const fs::path out = output_dir(cfg);
  write_json_file(cfg, out / "config.json");

  if (captions_path) {
    std::tie(captions, failed) = load_captions(*captions_path);
  } else {
    for (const auto& rec : run_captioning(cfg, *captioner)) {
      if (rec.contains("error")) {
        failed.push_back(rec.at("id").get<std::string>());
      } else {
        captions.emplace_back(rec.at("id").get<std::string>(), rec.at("caption").get<std::string>());
      }
    }
  }
  check_join(captions, failed, refs);

  std::vector<std::string> cands;
  ReferenceSets ref_sets;
  std::size_t longest = 0;
  for (const auto& [id, c] : captions) {
    cands.push_back(c);
    ref_sets.push_back(refs.at(id));
    longest = std::max(longest, word_count(c));
  }
  std::vector<int> m_values;
  for (const auto& m : cfg.at("m")) {
    if (m.is_string() && m.get<std::string>() == "full") {
      m_values.push_back(static_cast<int>(longest));
    } else if (m.is_number_integer() && m.get<int>() >= 0) {
      m_values.push_back(m.get<int>());
    } else {
      throw ConfigError(fmt::format("m: entries must be non-negative integers or \"full\", got {}", m.dump()));
    }
  }

  const std::string header = "m,cider_m,g_vis,g_lang\n";
  Json result{{"schema_version", kReportSchemaVersion}, {"config", without_out(cfg)}, {"failed", failed}};
  if (m_values.empty()) {
    result["rows"] = Json::array();
    write_json_file(result, out / "gvis.json");
    write_text_file(header, out / "gvis.csv");
    return kExitOk;
  }
  if (cands.empty()) throw InputError("no captions to diagnose");
  const LmContinuer continuer(lm.model, max_len);
  try {
    const GuidanceCurve curve = visual_guidance_curve(cands, ref_sets, continuer, m_values);
    std::string csv = header;
    Json rows = Json::array();
    for (const auto& r : curve.rows) {
      rows.push_back({{"m", r.m}, {"cider_m", r.cider_m}, {"g_vis", r.g_vis}, {"g_lang", r.g_lang}});
      csv += fmt::format("{},{},{},{}\n", r.m, format_number(r.cider_m), format_number(r.g_vis),
                         format_number(r.g_lang));
    }
    result["cider_model"] = curve.cider_model;
    result["rows"] = rows;
    write_json_file(result, out / "gvis.json");
    write_text_file(csv, out / "gvis.csv");
    return kExitOk;
  } catch (const DomainError& e) {
    result["error"] = e.what();
    result["rows"] = Json::array({{{"m", nullptr}, {"error", e.what()}}});
    write_json_file(result, out / "gvis.json");
    write_text_file(header + fmt::format("error,,,\"{}\"\n", e.what()), out / "gvis.csv");
    spdlog::error("{}", e.what());
    return kExitFailure;
  }
}

int cmd_retrieve(const Json& cfg, std::ostream& out) {
  const EntityVocabulary vocab = vocabulary_from(cfg);
  const RetrievalConfig retrieval = retrieval_from(cfg);
  const int top = get<int>(cfg, "top");
  if (top < 0) throw ConfigError("top: must be >= 0");
  const bool image = has(cfg, "image");
  if (image == has(cfg, "text")) throw ConfigError("image: exactly one of 'image' or 'text' is required");
  const auto backbone = load_backbone(get<std::string>(cfg, "backbone"));
  const Embedding query = image ? backbone->embed_image(load_image(existing_path(cfg, "image")))
                                : backbone->embed_text(get<std::string>(cfg, "text"));
  const VocabularyEmbeddings classes = embed_vocabulary(vocab, *backbone, retrieval.ensemble);
  const Eigen::VectorXd probs = retrieval_probabilities(query, classes, retrieval.tau);
  std::vector<std::size_t> order(static_cast<std::size_t>(probs.size()));
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return probs(static_cast<Eigen::Index>(a)) > probs(static_cast<Eigen::Index>(b));
  });
  Json ranked = Json::array();
  for (std::size_t i = 0; i < order.size() && static_cast<int>(i) < top; ++i) {
    ranked.push_back({{"name", vocab.names()[order[i]]}, {"probability", probs(static_cast<Eigen::Index>(order[i]))}});
  }
  Json echo = retrieval_json(retrieval);
  echo["preset"] = cfg.value("preset", Json());
  echo["ensemble"] = retrieval.ensemble;
  const Json result{{"input", image ? cfg.at("image") : cfg.at("text")},
                    {"backbone", backbone->id()},
                    {"retrieval", echo},
                    {"entities", entities_json(classify_entities(query, classes, retrieval))},
                    {"top", ranked}};
  out << result.dump(2) << "\n";
  return kExitOk;
}

}  // namespace entcap
