#include "entcap/encoder.hpp"

#include <array>
#include <cmath>
#include <cstdlib>
#include <filesystem>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "entcap/errors.hpp"
#include "entcap/hash.hpp"
#include "entcap/nouns.hpp"

namespace entcap {

namespace {

constexpr std::array<double, 3> kPixelMean = {0.48145466, 0.4578275, 0.40821073};
constexpr std::array<double, 3> kPixelStd = {0.26862954, 0.26130258, 0.27577711};

std::uint64_t fnv1a(std::string_view text, std::uint64_t seed) {
  std::uint64_t hash = 1469598103934665603ULL ^ seed;
  for (unsigned char c : text) {
    hash ^= c;
    hash *= 1099511628211ULL;
  }
  return hash;
}

RowMatrix gaussian_matrix(Eigen::Index rows, Eigen::Index cols, double stddev,
                          std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, stddev);
  RowMatrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  return m;
}

}  // namespace

Embedding normalized(Eigen::VectorXd values) {
  const double norm = values.norm();
  if (norm > 0.0) values /= norm;
  return Embedding{std::move(values), norm > 0.0};
}

double cosine_similarity(const Embedding& a, const Embedding& b) {
  if (a.dim() != b.dim()) throw ShapeError("cosine of embeddings with different dimensions");
  const double denom = a.values.norm() * b.values.norm();
  if (denom == 0.0) return 0.0;
  return a.values.dot(b.values) / denom;
}

HashedBackbone::HashedBackbone(Spec spec) : spec_(std::move(spec)) {
  std::mt19937_64 rng(spec_.seed);
  const auto dim = static_cast<Eigen::Index>(spec_.dim);
  const Eigen::Index pixels = 3 * spec_.image_grid * spec_.image_grid;
  text_table_ = gaussian_matrix(static_cast<Eigen::Index>(spec_.text_buckets), dim, 1.0, rng);
  image_projection_ = gaussian_matrix(dim, pixels, 1.0 / std::sqrt(static_cast<double>(pixels)), rng);
  compute_checksum();
}

HashedBackbone::HashedBackbone(Spec spec, RowMatrix text_table, RowMatrix image_projection)
    : spec_(std::move(spec)),
      text_table_(std::move(text_table)),
      image_projection_(std::move(image_projection)) {
  const auto dim = static_cast<Eigen::Index>(spec_.dim);
  if (text_table_.rows() != static_cast<Eigen::Index>(spec_.text_buckets) ||
      text_table_.cols() != dim || image_projection_.rows() != dim ||
      image_projection_.cols() != 3 * spec_.image_grid * spec_.image_grid) {
    throw ShapeError(fmt::format("backbone '{}' weight shapes do not match its spec", spec_.id));
  }
  compute_checksum();
}

void HashedBackbone::compute_checksum() {
  std::string bytes(reinterpret_cast<const char*>(text_table_.data()),
                    static_cast<std::size_t>(text_table_.size()) * sizeof(double));
  bytes.append(reinterpret_cast<const char*>(image_projection_.data()),
               static_cast<std::size_t>(image_projection_.size()) * sizeof(double));
  checksum_ = sha256_hex(bytes);
}

Embedding HashedBackbone::embed_text(std::string_view text) const {
  std::vector<std::string> tokens = word_tokenize(text);
  if (tokens.empty()) throw DomainError("cannot embed empty text");
  if (tokens.size() > spec_.context_tokens) {
    const std::size_t count = truncations_.fetch_add(1) + 1;
    spdlog::warn("{}: text of {} tokens truncated to {} (truncation #{})", spec_.id, tokens.size(),
                 spec_.context_tokens, count);
    tokens.resize(spec_.context_tokens);
  }
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(spec_.dim));
  const auto buckets = spec_.text_buckets;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const auto row = static_cast<Eigen::Index>(fnv1a("u:" + tokens[i], spec_.seed) % buckets);
    sum += text_table_.row(row).transpose();
    if (i + 1 < tokens.size()) {
      const auto bigram = fnv1a("b:" + tokens[i] + ' ' + tokens[i + 1], spec_.seed) % buckets;
      sum += 0.5 * text_table_.row(static_cast<Eigen::Index>(bigram)).transpose();
    }
  }
  return normalized(std::move(sum));
}

Embedding HashedBackbone::embed_image(const Image& image) const {
  if (image.width <= 0 || image.height <= 0 ||
      image.rgb.size() != static_cast<std::size_t>(image.width) * image.height * 3) {
    throw ShapeError("malformed image raster");
  }
  const int grid = spec_.image_grid;
  Eigen::VectorXd pixels(3 * grid * grid);
  for (int gy = 0; gy < grid; ++gy) {
    const int y0 = gy * image.height / grid;
    const int y1 = std::max(y0 + 1, (gy + 1) * image.height / grid);
    for (int gx = 0; gx < grid; ++gx) {
      const int x0 = gx * image.width / grid;
      const int x1 = std::max(x0 + 1, (gx + 1) * image.width / grid);
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int y = y0; y < y1; ++y) {
          for (int x = x0; x < x1; ++x) acc += image.at(x, y, c);
        }
        const double mean = acc / static_cast<double>((y1 - y0) * (x1 - x0));
        pixels((c * grid + gy) * grid + gx) = (mean - kPixelMean[c]) / kPixelStd[c];
      }
    }
  }
  return normalized(image_projection_ * pixels);
}

TensorArchive HashedBackbone::to_archive() const {
  TensorArchive archive;
  archive.manifest["kind"] = "backbone";
  archive.manifest["id"] = spec_.id;
  archive.manifest["dim"] = spec_.dim;
  archive.manifest["text_buckets"] = spec_.text_buckets;
  archive.manifest["image_grid"] = spec_.image_grid;
  archive.manifest["context_tokens"] = spec_.context_tokens;
  archive.manifest["seed"] = spec_.seed;
  archive.manifest["weights_sha256"] = checksum_;
  archive.tensors.push_back({"text_table", text_table_});
  archive.tensors.push_back({"image_projection", image_projection_});
  return archive;
}

HashedBackbone HashedBackbone::from_archive(const TensorArchive& archive) {
  const auto& m = archive.manifest;
  if (m.value("kind", "") != "backbone") throw ParseError("archive is not a backbone export");
  Spec spec;
  spec.id = m.at("id").get<std::string>();
  spec.dim = m.at("dim").get<std::size_t>();
  spec.text_buckets = m.at("text_buckets").get<std::size_t>();
  spec.image_grid = m.at("image_grid").get<int>();
  spec.context_tokens = m.at("context_tokens").get<std::size_t>();
  spec.seed = m.at("seed").get<std::uint64_t>();
  const auto* text = archive.find("text_table");
  const auto* image = archive.find("image_projection");
  if (text == nullptr || image == nullptr) throw ParseError("backbone archive missing tensors");
  return HashedBackbone(std::move(spec), text->value, image->value);
}

HashedBackbone::Spec backbone_spec(std::string_view id) {
  if (id == "hashclip-b32") return {std::string(id), 512, 4096, 32, 75, 0x0b32};
  if (id == "hashclip-mini") return {std::string(id), 64, 1024, 8, 75, 0x0064};
  throw ConfigError(fmt::format("unknown backbone '{}'", id));
}

std::unique_ptr<Backbone> load_backbone(std::string_view id,
                                        const std::optional<std::string>& expected_checksum) {
  const HashedBackbone::Spec spec = backbone_spec(id);
  std::unique_ptr<HashedBackbone> backbone;
  if (const char* cache = std::getenv(kBackboneCacheEnv); cache != nullptr && *cache != '\0') {
    const std::filesystem::path file = std::filesystem::path(cache) / (spec.id + ".bin");
    if (std::filesystem::exists(file)) {
      backbone = std::make_unique<HashedBackbone>(HashedBackbone::from_archive(read_archive(file)));
    } else {
      backbone = std::make_unique<HashedBackbone>(spec);
      std::filesystem::create_directories(file.parent_path());
      write_archive(backbone->to_archive(), file);
    }
  } else {
    backbone = std::make_unique<HashedBackbone>(spec);
  }
  if (expected_checksum && !expected_checksum->empty() && *expected_checksum != backbone->checksum()) {
    throw ConfigError(fmt::format("backbone '{}' checksum mismatch: expected {}, found {}", id,
                                  *expected_checksum, backbone->checksum()));
  }
  return backbone;
}

Eigen::VectorXd sample_noise(Eigen::Index dim, double variance, std::mt19937_64& rng) {
  if (!(variance >= 0.0)) throw DomainError(fmt::format("noise variance {} is negative", variance));
  Eigen::VectorXd noise(dim);
  std::normal_distribution<double> normal(0.0, std::sqrt(variance));
  for (Eigen::Index i = 0; i < dim; ++i) noise(i) = normal(rng);
  return noise;
}

Embedding inject_noise(const Embedding& embedding, double variance, std::mt19937_64& rng) {
  if (!(variance >= 0.0)) throw DomainError(fmt::format("noise variance {} is negative", variance));
  if (variance == 0.0) return embedding;
  return normalized(embedding.values + sample_noise(embedding.dim(), variance, rng));
}

}  // namespace entcap
