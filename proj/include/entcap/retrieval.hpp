#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "entcap/corpus.hpp"
#include "entcap/encoder.hpp"
#include "entcap/prompts.hpp"

namespace entcap {

struct RetrievalConfig {
  double tau = 0.01;
  int k = 3;
  double p_thres = 0.2;
  bool ensemble = false;

  void validate() const;
};

/// Named (k, p_thres, tau) triples: cross_domain, coco, flickr30k, flickrstyle10k.
RetrievalConfig retrieval_preset(std::string_view name);
std::vector<std::string> retrieval_preset_names();

/// Class-name text embeddings for one vocabulary, one row per name, rows L2-normalised.
struct VocabularyEmbeddings {
  EntityVocabulary vocab;
  RowMatrix matrix;
  bool ensemble = false;
  std::string backbone_id;
};

/// Embeds "A photo of {name}" per class, or the normalised mean of the ensemble-template
/// embeddings re-normalised when `ensemble` is set.
VocabularyEmbeddings embed_vocabulary(const EntityVocabulary& vocab, const Backbone& backbone,
                                      bool ensemble,
                                      const EntityQueryTemplates& templates =
                                          EntityQueryTemplates::standard());

/// Disk cache of vocabulary embeddings keyed by (vocabulary checksum, ensemble, backbone).
/// Each entry is a tensor archive plus a JSON sidecar manifest. Lookups take a shared lock;
/// builds and file writes take the exclusive lock.
class EmbeddingCache {
 public:
  explicit EmbeddingCache(std::filesystem::path directory);

  std::shared_ptr<const VocabularyEmbeddings> get(const EntityVocabulary& vocab,
                                                  const Backbone& backbone, bool ensemble);

  static std::string key(const EntityVocabulary& vocab, const Backbone& backbone, bool ensemble);
  const std::filesystem::path& directory() const { return directory_; }

 private:
  std::filesystem::path directory_;
  std::shared_mutex mutex_;
  std::map<std::string, std::shared_ptr<const VocabularyEmbeddings>> memory_;
};

/// Softmax over cosine(image, class)/tau for every class, computed with max-subtraction.
Eigen::VectorXd retrieval_probabilities(const Embedding& image, const VocabularyEmbeddings& classes,
                                        double tau);

/// At most k classes with probability above p_thres, by descending probability; ties keep
/// vocabulary order. Throws ConfigError for an empty vocabulary.
std::vector<Entity> classify_entities(const Embedding& image, const VocabularyEmbeddings& classes,
                                      const RetrievalConfig& config);

}  // namespace entcap
