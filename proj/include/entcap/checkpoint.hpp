#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "entcap/model.hpp"
#include "entcap/training.hpp"

namespace entcap {

/// Everything recorded next to the weights. Contains no timestamps so that identical
/// training runs produce byte-identical files.
struct CheckpointInfo {
  std::string backbone_id;
  std::string backbone_checksum;
  std::string vocab_checksum;
  std::string vocab_label;
  TrainingConfig training;
  bool lm_finetuned = true;
  nlohmann::ordered_json extra = nlohmann::ordered_json::object();
};

TensorArchive checkpoint_archive(const CaptionModel& model, const CheckpointInfo& info);
void save_checkpoint(const CaptionModel& model, const CheckpointInfo& info,
                     const std::filesystem::path& path);

struct LoadedCheckpoint {
  CaptionModel model;
  CheckpointInfo info;
};

/// Rebuilds the model from the manifest and copies every tensor back. Missing or
/// mis-shaped tensors raise ShapeError; a corrupt file raises ParseError.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);
LoadedCheckpoint checkpoint_from_archive(const TensorArchive& archive);

}  // namespace entcap
