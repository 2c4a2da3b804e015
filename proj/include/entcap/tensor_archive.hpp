#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

namespace entcap {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct NamedTensor {
  std::string name;
  RowMatrix value;
};

/// Single-file archive: magic, JSON manifest, then named row-major float64 tensors.
///
/// Layout (little-endian):
///   "ENTCAPT1" | u64 manifest_bytes | manifest (UTF-8 JSON) | u64 tensor_count |
///   per tensor: u32 name_bytes | name | u64 rows | u64 cols | rows*cols f64
/// The manifest gains a "payload_sha256" field covering everything after it.
struct TensorArchive {
  nlohmann::ordered_json manifest;
  std::vector<NamedTensor> tensors;

  const NamedTensor* find(const std::string& name) const;
};

std::string serialize_archive(const TensorArchive& archive);
TensorArchive deserialize_archive(const std::string& bytes);

/// Writes through a temporary file and rename so readers never see a partial archive.
void write_archive(const TensorArchive& archive, const std::filesystem::path& path);
TensorArchive read_archive(const std::filesystem::path& path);

}  // namespace entcap
