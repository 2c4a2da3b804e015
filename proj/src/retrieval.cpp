#include "entcap/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <mutex>
#include <numeric>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "entcap/errors.hpp"
#include "entcap/hash.hpp"

namespace entcap {

void RetrievalConfig::validate() const {
  if (!(tau > 0.0)) throw ConfigError(fmt::format("retrieval tau must be > 0 (got {})", tau));
  if (k < 1) throw ConfigError(fmt::format("retrieval k must be >= 1 (got {})", k));
  if (!(p_thres >= 0.0 && p_thres <= 1.0)) {
    throw ConfigError(fmt::format("retrieval p_thres must lie in [0, 1] (got {})", p_thres));
  }
}

RetrievalConfig retrieval_preset(std::string_view name) {
  if (name == "cross_domain") return {0.01, 3, 0.2, false};
  if (name == "coco") return {0.01, 3, 0.4, false};
  if (name == "flickr30k") return {0.01, 3, 0.3, false};
  if (name == "flickrstyle10k") return {0.007, 2, 0.1, false};
  throw ConfigError(fmt::format("unknown retrieval preset '{}'", name));
}

std::vector<std::string> retrieval_preset_names() {
  return {"cross_domain", "coco", "flickr30k", "flickrstyle10k"};
}

VocabularyEmbeddings embed_vocabulary(const EntityVocabulary& vocab, const Backbone& backbone,
                                      bool ensemble, const EntityQueryTemplates& templates) {
  if (vocab.empty()) throw ConfigError("cannot embed an empty vocabulary");
  VocabularyEmbeddings out{vocab, RowMatrix(static_cast<Eigen::Index>(vocab.size()),
                                            static_cast<Eigen::Index>(backbone.dim())),
                           ensemble, backbone.id()};
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    const auto queries = build_inference_entity_query(vocab.names()[i], ensemble, templates);
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(backbone.dim()));
    for (const auto& q : queries) sum += backbone.embed_text(q).values;
    out.matrix.row(static_cast<Eigen::Index>(i)) = normalized(std::move(sum)).values.transpose();
  }
  return out;
}

EmbeddingCache::EmbeddingCache(std::filesystem::path directory) : directory_(std::move(directory)) {}

std::string EmbeddingCache::key(const EntityVocabulary& vocab, const Backbone& backbone,
                                bool ensemble) {
  return sha256_hex(fmt::format("{}|{}|{}|{}", vocab.checksum(), ensemble ? 1 : 0, backbone.id(),
                                backbone.checksum()))
      .substr(0, 24);
}

std::shared_ptr<const VocabularyEmbeddings> EmbeddingCache::get(const EntityVocabulary& vocab,
                                                                const Backbone& backbone,
                                                                bool ensemble) {
  const std::string k = key(vocab, backbone, ensemble);
  {
    std::shared_lock lock(mutex_);
    if (auto it = memory_.find(k); it != memory_.end()) return it->second;
  }
  std::unique_lock lock(mutex_);
  if (auto it = memory_.find(k); it != memory_.end()) return it->second;

  const auto tensor_path = directory_ / (k + ".bin");
  const auto manifest_path = directory_ / (k + ".json");
  std::shared_ptr<const VocabularyEmbeddings> entry;
  if (std::filesystem::exists(tensor_path)) {
    TensorArchive archive = read_archive(tensor_path);
    const auto* matrix = archive.find("class_embeddings");
    if (matrix == nullptr || matrix->value.rows() != static_cast<Eigen::Index>(vocab.size()) ||
        archive.manifest.value("vocabulary_sha256", "") != vocab.checksum()) {
      throw ParseError(fmt::format("embedding cache entry '{}' is inconsistent", tensor_path.string()));
    }
    entry = std::make_shared<VocabularyEmbeddings>(
        VocabularyEmbeddings{vocab, matrix->value, ensemble, backbone.id()});
  } else {
    auto built = std::make_shared<VocabularyEmbeddings>(embed_vocabulary(vocab, backbone, ensemble));
    nlohmann::ordered_json manifest;
    manifest["kind"] = "vocabulary_embeddings";
    manifest["vocabulary_sha256"] = vocab.checksum();
    manifest["vocabulary_size"] = vocab.size();
    manifest["vocabulary_label"] = vocab.source_label();
    manifest["ensemble"] = ensemble;
    manifest["backbone_id"] = backbone.id();
    manifest["backbone_sha256"] = backbone.checksum();
    std::filesystem::create_directories(directory_);
    write_archive(TensorArchive{manifest, {{"class_embeddings", built->matrix}}}, tensor_path);
    std::ofstream sidecar(manifest_path, std::ios::trunc);
    sidecar << manifest.dump(2) << '\n';
    entry = std::move(built);
  }
  memory_.emplace(k, entry);
  return entry;
}

Eigen::VectorXd retrieval_probabilities(const Embedding& image, const VocabularyEmbeddings& classes,
                                        double tau) {
  if (classes.matrix.rows() == 0) throw ConfigError("retrieval over an empty vocabulary");
  if (image.dim() != classes.matrix.cols()) {
    throw ShapeError(fmt::format("image embedding has dimension {}, class embeddings {}",
                                 image.dim(), classes.matrix.cols()));
  }
  if (!(tau > 0.0)) throw ConfigError("retrieval tau must be > 0");
  const double norm = image.values.norm();
  Eigen::VectorXd logits = classes.matrix * image.values;
  if (norm > 0.0) logits /= norm;
  logits /= tau;
  const double max_logit = logits.maxCoeff();
  Eigen::VectorXd p = (logits.array() - max_logit).exp().matrix();
  p /= p.sum();
  return p;
}

std::vector<Entity> classify_entities(const Embedding& image, const VocabularyEmbeddings& classes,
                                      const RetrievalConfig& config) {
  config.validate();
  const Eigen::VectorXd p = retrieval_probabilities(image, classes, config.tau);
  std::vector<Eigen::Index> order;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (p(i) > config.p_thres) order.push_back(i);
  }
  std::stable_sort(order.begin(), order.end(),
                   [&p](Eigen::Index a, Eigen::Index b) { return p(a) > p(b); });
  if (order.size() > static_cast<std::size_t>(config.k)) order.resize(static_cast<std::size_t>(config.k));
  std::vector<Entity> out;
  out.reserve(order.size());
  for (auto i : order) {
    out.push_back(Entity{classes.vocab.names()[static_cast<std::size_t>(i)], p(i)});
  }
  return out;
}

}  // namespace entcap
