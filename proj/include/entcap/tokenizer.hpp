#pragma once

#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

namespace entcap {

/// Closed word-level vocabulary for the caption language model. Text is lowercased and
/// split with word_tokenize; unseen words map to <unk>.
class WordTokenizer {
 public:
  static constexpr int kPad = 0;
  static constexpr int kEos = 1;
  static constexpr int kUnk = 2;

  WordTokenizer();
  explicit WordTokenizer(std::vector<std::string> tokens);

  /// Words ordered by descending frequency, then lexicographically.
  static WordTokenizer build(const std::vector<std::string>& texts);

  std::vector<int> encode(std::string_view text) const;
  std::string decode(const std::vector<int>& ids) const;

  int id(std::string_view token) const;
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  int size() const { return static_cast<int>(tokens_.size()); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  nlohmann::ordered_json to_json() const;
  static WordTokenizer from_json(const nlohmann::ordered_json& j);

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

/// Canonical spacing for comparing captions: lowercased tokens re-joined by decode().
std::string canonical_caption(std::string_view text);

}  // namespace entcap
