#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace entcap {

enum class Split { kTrain, kVal, kTest };
enum class DomainTag { kIn, kNear, kOut };

std::string_view to_string(Split split);
std::string_view to_string(DomainTag tag);
Split parse_split(std::string_view text);
DomainTag parse_domain_tag(std::string_view text);

struct CaptionRecord {
  std::string id;
  std::string text;
  std::optional<std::string> image_ref;
  Split split = Split::kTrain;
  std::optional<DomainTag> domain_tag;
};

enum class CorpusFormat { kKarpathyJson, kPlainLines };

CorpusFormat parse_corpus_format(std::string_view text);

/// Collapses runs of whitespace to single spaces and trims both ends.
std::string normalize_whitespace(std::string_view text);

/// Loads caption records in source order.
///
/// karpathy_json: `{"images": [{"filepath", "filename", "split", "sentences": [{"raw", "sentid"}], "domain"?}]}`.
/// The Karpathy "restval" split is folded into train. plain_lines: one caption per
/// non-blank line, all records in the train split.
std::vector<CaptionRecord> load_corpus(const std::filesystem::path& path, CorpusFormat format);

/// Ordered set of unique lowercase class names. Immutable once built.
class EntityVocabulary {
 public:
  EntityVocabulary() = default;
  EntityVocabulary(std::vector<std::string> names, std::string source_label,
                   bool single_word_only = false);

  const std::vector<std::string>& names() const { return names_; }
  std::size_t size() const { return names_.size(); }
  bool empty() const { return names_.empty(); }
  const std::string& source_label() const { return source_label_; }
  bool single_word_only() const { return single_word_only_; }

  bool contains(std::string_view name) const;
  std::optional<std::size_t> index_of(std::string_view name) const;
  /// Largest number of whitespace-separated words in any name.
  std::size_t max_name_words() const { return max_name_words_; }

  /// SHA-256 hex over the newline-joined names; identifies the vocabulary in manifests.
  std::string checksum() const;

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, std::size_t> index_;
  std::string source_label_;
  bool single_word_only_ = false;
  std::size_t max_name_words_ = 0;
};

/// One class name per line, '#' comment lines and blank lines ignored. Names are
/// lowercased and deduplicated (first occurrence wins). Throws ConfigError when
/// nothing survives.
EntityVocabulary load_vocabulary(const std::filesystem::path& path, bool single_word_only);
EntityVocabulary make_vocabulary(const std::vector<std::string>& lines, bool single_word_only,
                                 std::string source_label = "inline");
void save_vocabulary(const EntityVocabulary& vocab, const std::filesystem::path& path);

struct Entity {
  std::string name;
  std::optional<double> score;

  friend bool operator==(const Entity&, const Entity&) = default;
};

std::vector<std::string> entity_names(const std::vector<Entity>& entities);

}  // namespace entcap
