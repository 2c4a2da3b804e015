#include "entcap/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "entcap/errors.hpp"
#include "entcap/hash.hpp"

namespace entcap {

namespace {

std::string lowercase(std::string_view text) {
  std::string out(text);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot open '{}'", path.string()));
  std::ostringstream buffer;
  buffer << in.rdbuf();
  if (in.bad()) throw IoError(fmt::format("read failed for '{}'", path.string()));
  return buffer.str();
}

std::vector<CaptionRecord> parse_karpathy(const std::string& content) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(content);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(fmt::format("karpathy_json: {}", e.what()));
  }
  if (!doc.is_object() || !doc.contains("images") || !doc["images"].is_array()) {
    throw ParseError("karpathy_json: top-level 'images' array missing");
  }
  std::vector<CaptionRecord> records;
  const auto& images = doc["images"];
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto& image = images[i];
    try {
      if (!image.is_object() || !image.contains("sentences") || !image["sentences"].is_array()) {
        throw ParseError("missing 'sentences' array");
      }
      std::string split_text = image.value("split", "train");
      if (split_text == "restval") split_text = "train";
      const Split split = parse_split(split_text);
      std::optional<std::string> image_ref;
      if (image.contains("filename")) {
        std::string ref = image.at("filename").get<std::string>();
        if (image.contains("filepath")) {
          ref = (std::filesystem::path(image.at("filepath").get<std::string>()) / ref).string();
        }
        image_ref = ref;
      }
      std::optional<DomainTag> domain;
      if (image.contains("domain") && split != Split::kTrain) {
        domain = parse_domain_tag(image.at("domain").get<std::string>());
      }
      const std::string image_id = image.contains("imgid")
                                       ? image.at("imgid").dump()
                                       : std::to_string(i);
      const auto& sentences = image["sentences"];
      for (std::size_t s = 0; s < sentences.size(); ++s) {
        const auto& sentence = sentences[s];
        std::string raw = sentence.at("raw").get<std::string>();
        std::string text = normalize_whitespace(raw);
        if (text.empty()) throw ParseError(fmt::format("sentence {} is empty", s));
        CaptionRecord record;
        record.id = sentence.contains("sentid") ? sentence.at("sentid").dump()
                                                : fmt::format("{}:{}", image_id, s);
        record.text = std::move(text);
        record.image_ref = image_ref;
        record.split = split;
        record.domain_tag = domain;
        records.push_back(std::move(record));
      }
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(fmt::format("karpathy_json: malformed image entry at index {}: {}", i, e.what()));
    } catch (const Error& e) {
      throw ParseError(fmt::format("karpathy_json: malformed image entry at index {}: {}", i, e.what()));
    }
  }
  return records;
}

std::vector<CaptionRecord> parse_plain_lines(const std::string& content) {
  std::vector<CaptionRecord> records;
  std::istringstream in(content);
  std::string line;
  std::size_t index = 0;
  while (std::getline(in, line)) {
    std::string text = normalize_whitespace(line);
    if (text.empty()) continue;
    CaptionRecord record;
    record.id = std::to_string(index++);
    record.text = std::move(text);
    records.push_back(std::move(record));
  }
  return records;
}

std::size_t word_count(std::string_view name) {
  std::size_t words = 0;
  bool in_word = false;
  for (char c : name) {
    const bool space = std::isspace(static_cast<unsigned char>(c)) != 0;
    if (!space && !in_word) ++words;
    in_word = !space;
  }
  return words;
}

}  // namespace

std::string_view to_string(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "train";
}

std::string_view to_string(DomainTag tag) {
  switch (tag) {
    case DomainTag::kIn: return "in";
    case DomainTag::kNear: return "near";
    case DomainTag::kOut: return "out";
  }
  return "in";
}

Split parse_split(std::string_view text) {
  if (text == "train") return Split::kTrain;
  if (text == "val") return Split::kVal;
  if (text == "test") return Split::kTest;
  throw ParseError(fmt::format("unknown split '{}'", text));
}

DomainTag parse_domain_tag(std::string_view text) {
  if (text == "in" || text == "in-domain") return DomainTag::kIn;
  if (text == "near" || text == "near-domain") return DomainTag::kNear;
  if (text == "out" || text == "out-domain" || text == "out-of-domain") return DomainTag::kOut;
  throw ParseError(fmt::format("unknown domain tag '{}'", text));
}

CorpusFormat parse_corpus_format(std::string_view text) {
  if (text == "karpathy_json") return CorpusFormat::kKarpathyJson;
  if (text == "plain_lines") return CorpusFormat::kPlainLines;
  throw ConfigError(fmt::format("unknown corpus format '{}'", text));
}

std::string normalize_whitespace(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(c);
  }
  return out;
}

std::vector<CaptionRecord> load_corpus(const std::filesystem::path& path, CorpusFormat format) {
  const std::string content = read_file(path);
  switch (format) {
    case CorpusFormat::kKarpathyJson: return parse_karpathy(content);
    case CorpusFormat::kPlainLines: return parse_plain_lines(content);
  }
  return {};
}

EntityVocabulary::EntityVocabulary(std::vector<std::string> names, std::string source_label,
                                   bool single_word_only)
    : names_(std::move(names)),
      source_label_(std::move(source_label)),
      single_word_only_(single_word_only) {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i].empty()) throw ConfigError("vocabulary name must be non-empty");
    if (!index_.emplace(names_[i], i).second) {
      throw ConfigError(fmt::format("duplicate vocabulary name '{}'", names_[i]));
    }
    max_name_words_ = std::max(max_name_words_, word_count(names_[i]));
  }
}

bool EntityVocabulary::contains(std::string_view name) const {
  return index_.find(std::string(name)) != index_.end();
}

std::optional<std::size_t> EntityVocabulary::index_of(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::string EntityVocabulary::checksum() const {
  std::string joined;
  for (const auto& name : names_) {
    joined += name;
    joined += '\n';
  }
  return sha256_hex(joined);
}

EntityVocabulary make_vocabulary(const std::vector<std::string>& lines, bool single_word_only,
                                 std::string source_label) {
  std::vector<std::string> names;
  std::unordered_map<std::string, bool> seen;
  for (const auto& line : lines) {
    std::string name = lowercase(normalize_whitespace(line));
    if (name.empty() || name.front() == '#') continue;
    if (single_word_only && name.find(' ') != std::string::npos) continue;
    if (seen.emplace(name, true).second) names.push_back(std::move(name));
  }
  if (names.empty()) {
    throw ConfigError(fmt::format("vocabulary '{}' is empty after filtering", source_label));
  }
  return EntityVocabulary(std::move(names), std::move(source_label), single_word_only);
}

EntityVocabulary load_vocabulary(const std::filesystem::path& path, bool single_word_only) {
  const std::string content = read_file(path);
  std::vector<std::string> lines;
  std::istringstream in(content);
  std::string line;
  while (std::getline(in, line)) {
    // Comments are recognised before whitespace normalisation so "  # x" is also a comment.
    const std::string trimmed = normalize_whitespace(line);
    if (!trimmed.empty() && trimmed.front() == '#') continue;
    lines.push_back(trimmed);
  }
  return make_vocabulary(lines, single_word_only, path.stem().string());
}

void save_vocabulary(const EntityVocabulary& vocab, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(fmt::format("cannot write '{}'", path.string()));
  for (const auto& name : vocab.names()) out << name << '\n';
}

std::vector<std::string> entity_names(const std::vector<Entity>& entities) {
  std::vector<std::string> names;
  names.reserve(entities.size());
  for (const auto& e : entities) names.push_back(e.name);
  return names;
}

}  // namespace entcap
