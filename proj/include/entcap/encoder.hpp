#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <string_view>

#include <Eigen/Core>

#include "entcap/image.hpp"
#include "entcap/tensor_archive.hpp"

namespace entcap {

struct Embedding {
  Eigen::VectorXd values;
  bool normalized = false;

  Eigen::Index dim() const { return values.size(); }
};

Embedding normalized(Eigen::VectorXd values);
double cosine_similarity(const Embedding& a, const Embedding& b);

/// Frozen dual encoder: maps text and images into one embedding space.
/// Implementations are read-only after construction and safe to call concurrently.
class Backbone {
 public:
  virtual ~Backbone() = default;

  virtual const std::string& id() const = 0;
  virtual std::size_t dim() const = 0;
  /// Hex SHA-256 of the weight tensors.
  virtual const std::string& checksum() const = 0;

  virtual Embedding embed_text(std::string_view text) const = 0;
  virtual Embedding embed_image(const Image& image) const = 0;

  /// Number of embed_text calls that truncated their input to the context window.
  virtual std::size_t truncation_count() const = 0;
};

/// Self-contained dual encoder whose weights are derived from a seed.
///
/// Text: lowercase word and bigram features hashed into rows of a fixed Gaussian table,
/// summed and L2-normalised. Images: box-resampled to a fixed grid, channel-standardised
/// and sent through a fixed Gaussian projection. Deterministic, frozen, and with no
/// learned cross-modal alignment.
class HashedBackbone final : public Backbone {
 public:
  struct Spec {
    std::string id;
    std::size_t dim = 512;
    std::size_t text_buckets = 4096;
    int image_grid = 32;
    std::size_t context_tokens = 75;
    std::uint64_t seed = 0;
  };

  explicit HashedBackbone(Spec spec);
  HashedBackbone(Spec spec, RowMatrix text_table, RowMatrix image_projection);
  HashedBackbone(HashedBackbone&& other) noexcept
      : spec_(std::move(other.spec_)),
        text_table_(std::move(other.text_table_)),
        image_projection_(std::move(other.image_projection_)),
        checksum_(std::move(other.checksum_)),
        truncations_(other.truncations_.load()) {}

  const std::string& id() const override { return spec_.id; }
  std::size_t dim() const override { return spec_.dim; }
  const std::string& checksum() const override { return checksum_; }
  Embedding embed_text(std::string_view text) const override;
  Embedding embed_image(const Image& image) const override;
  std::size_t truncation_count() const override { return truncations_.load(); }

  const Spec& spec() const { return spec_; }
  TensorArchive to_archive() const;
  static HashedBackbone from_archive(const TensorArchive& archive);

 private:
  void compute_checksum();

  Spec spec_;
  RowMatrix text_table_;        // text_buckets x dim
  RowMatrix image_projection_;  // dim x (3 * grid * grid)
  std::string checksum_;
  mutable std::atomic<std::size_t> truncations_{0};
};

/// Known backbone ids: "hashclip-b32" (512-d) and "hashclip-mini" (64-d, for fast tests).
HashedBackbone::Spec backbone_spec(std::string_view id);

/// Name of the environment variable holding the backbone weight cache directory.
inline constexpr const char* kBackboneCacheEnv = "ENTCAP_BACKBONE_CACHE";

/// Resolves a backbone by id. When the cache directory variable is set, weights are read
/// from (or exported to) `<dir>/<id>.bin`. A supplied checksum must match the weights.
std::unique_ptr<Backbone> load_backbone(std::string_view id,
                                        const std::optional<std::string>& expected_checksum = {});

/// Zero-mean i.i.d. Gaussian vector with the given per-component variance.
Eigen::VectorXd sample_noise(Eigen::Index dim, double variance, std::mt19937_64& rng);

/// Adds `sample_noise` to the embedding and re-normalises. Variance 0 returns the input
/// unchanged. Throws DomainError for negative variance.
Embedding inject_noise(const Embedding& embedding, double variance, std::mt19937_64& rng);

}  // namespace entcap
