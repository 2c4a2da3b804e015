#include "entcap/checkpoint.hpp"

#include <fmt/format.h>

#include "entcap/errors.hpp"

namespace entcap {

namespace {
constexpr int kFormatVersion = 1;
}

TensorArchive checkpoint_archive(const CaptionModel& model, const CheckpointInfo& info) {
  TensorArchive archive;
  auto& m = archive.manifest;
  m["kind"] = "caption_model";
  m["format_version"] = kFormatVersion;
  m["model"] = to_json(model.spec());
  m["tokenizer"] = model.tokenizer().to_json();
  m["backbone"] = {{"id", info.backbone_id}, {"checksum", info.backbone_checksum}};
  m["vocabulary"] = {{"checksum", info.vocab_checksum}, {"label", info.vocab_label}};
  m["training"] = to_json(info.training);
  m["lm_finetuned"] = info.lm_finetuned;
  m["extra"] = info.extra;
  for (const auto& p : model.parameters().all()) archive.tensors.push_back({p.name, p.value});
  return archive;
}

void save_checkpoint(const CaptionModel& model, const CheckpointInfo& info,
                     const std::filesystem::path& path) {
  write_archive(checkpoint_archive(model, info), path);
}

LoadedCheckpoint checkpoint_from_archive(const TensorArchive& archive) {
  const auto& m = archive.manifest;
  try {
    if (m.at("kind").get<std::string>() != "caption_model") {
      throw ParseError("archive is not a caption model checkpoint");
    }
    if (m.at("format_version").get<int>() != kFormatVersion) {
      throw ParseError(fmt::format("unsupported checkpoint format {}", m.at("format_version").dump()));
    }
    CheckpointInfo info;
    info.backbone_id = m.at("backbone").at("id").get<std::string>();
    info.backbone_checksum = m.at("backbone").at("checksum").get<std::string>();
    info.vocab_checksum = m.at("vocabulary").at("checksum").get<std::string>();
    info.vocab_label = m.at("vocabulary").at("label").get<std::string>();
    info.training = apply_json(TrainingConfig{}, m.at("training"));
    info.lm_finetuned = m.at("lm_finetuned").get<bool>();
    info.extra = m.value("extra", nlohmann::ordered_json::object());

    CaptionModel model(model_spec_from_json(m.at("model")), WordTokenizer::from_json(m.at("tokenizer")),
                       0);
    for (auto& p : model.parameters().all()) {
      const NamedTensor* t = archive.find(p.name);
      if (t == nullptr) throw ShapeError(fmt::format("checkpoint lacks tensor '{}'", p.name));
      if (t->value.rows() != p.value.rows() || t->value.cols() != p.value.cols()) {
        throw ShapeError(fmt::format("tensor '{}' is {}x{}, model expects {}x{}", p.name,
                                     t->value.rows(), t->value.cols(), p.value.rows(),
                                     p.value.cols()));
      }
      p.value = t->value;
      p.zero_grad();
    }
    if (archive.tensors.size() != model.parameters().all().size()) {
      throw ShapeError("checkpoint holds tensors the model does not use");
    }
    return {std::move(model), std::move(info)};
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(fmt::format("malformed checkpoint manifest: {}", e.what()));
  }
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  return checkpoint_from_archive(read_archive(path));
}

}  // namespace entcap
