#include "entcap/tokenizer.hpp"

#include <algorithm>
#include <map>

#include <fmt/format.h>

#include "entcap/errors.hpp"
#include "entcap/nouns.hpp"

namespace entcap {

namespace {

bool attaches_left(std::string_view token) {
  return token == "." || token == "," || token == "!" || token == "?" || token == ";" ||
         token == ":" || token == ")" || (token.size() > 1 && token.front() == '\'');
}

std::string join_tokens(const std::vector<std::string>& words) {
  std::string out;
  for (const auto& w : words) {
    if (!out.empty() && !attaches_left(w) && out.back() != '(') out += ' ';
    out += w;
  }
  return out;
}

}  // namespace

WordTokenizer::WordTokenizer() : WordTokenizer(std::vector<std::string>{}) {}

WordTokenizer::WordTokenizer(std::vector<std::string> tokens) {
  tokens_ = {"<pad>", "<eos>", "<unk>"};
  for (auto& t : tokens) {
    if (t == "<pad>" || t == "<eos>" || t == "<unk>") continue;
    tokens_.push_back(std::move(t));
  }
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], static_cast<int>(i)).second) {
      throw ConfigError(fmt::format("duplicate tokenizer entry '{}'", tokens_[i]));
    }
  }
}

WordTokenizer WordTokenizer::build(const std::vector<std::string>& texts) {
  std::map<std::string, std::size_t> counts;
  for (const auto& text : texts) {
    for (auto& w : word_tokenize(text)) ++counts[w];
  }
  std::vector<std::pair<std::string, std::size_t>> ordered(counts.begin(), counts.end());
  std::stable_sort(ordered.begin(), ordered.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tokens;
  tokens.reserve(ordered.size());
  for (auto& [word, count] : ordered) tokens.push_back(word);
  return WordTokenizer(std::move(tokens));
}

int WordTokenizer::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

std::vector<int> WordTokenizer::encode(std::string_view text) const {
  std::vector<int> ids;
  for (const auto& w : word_tokenize(text)) ids.push_back(id(w));
  return ids;
}

std::string WordTokenizer::decode(const std::vector<int>& ids) const {
  std::vector<std::string> words;
  for (int i : ids) {
    if (i == kEos) break;
    if (i == kPad) continue;
    words.push_back(token(i));
  }
  return join_tokens(words);
}

nlohmann::ordered_json WordTokenizer::to_json() const {
  return nlohmann::ordered_json{{"kind", "word"}, {"tokens", tokens_}};
}

WordTokenizer WordTokenizer::from_json(const nlohmann::ordered_json& j) {
  if (j.value("kind", "") != "word") throw ParseError("unsupported tokenizer kind");
  auto tokens = j.at("tokens").get<std::vector<std::string>>();
  if (tokens.size() < 3 || tokens[0] != "<pad>" || tokens[1] != "<eos>" || tokens[2] != "<unk>") {
    throw ParseError("tokenizer table must start with <pad>, <eos>, <unk>");
  }
  return WordTokenizer(std::move(tokens));
}

std::string canonical_caption(std::string_view text) { return join_tokens(word_tokenize(text)); }

}  // namespace entcap
