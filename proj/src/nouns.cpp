#include "entcap/nouns.hpp"

#include <algorithm>
#include <cctype>
#include <optional>
#include <unordered_map>
#include <unordered_set>

namespace entcap {

namespace {

using Lexicon = std::unordered_map<std::string_view, PosTag>;

const Lexicon& closed_lexicon() {
  static const Lexicon lexicon = [] {
    Lexicon lex;
    for (auto w : {"a", "an", "the", "this", "that", "these", "those", "each", "every", "some",
                   "any", "no", "another", "both", "all", "either", "neither", "which", "what"}) {
      lex.emplace(w, PosTag::kDeterminer);
    }
    for (auto w : {"in", "on", "at", "of", "with", "by", "from", "into", "onto", "over", "under",
                   "near", "next", "to", "behind", "beside", "besides", "between", "through",
                   "across", "along", "around", "up", "down", "out", "off", "above", "below",
                   "inside", "outside", "during", "for", "about", "against", "toward", "towards",
                   "past", "beneath", "underneath", "upon", "via", "while", "atop", "like", "as",
                   "than", "amongst", "among", "without", "within", "after", "before", "if"}) {
      lex.emplace(w, PosTag::kPreposition);
    }
    for (auto w : {"and", "or", "but", "nor", "yet", "so", "&"}) lex.emplace(w, PosTag::kConjunction);
    for (auto w : {"i", "you", "he", "she", "it", "we", "they", "me", "him", "her", "us", "them",
                   "his", "their", "our", "my", "your", "its", "who", "whom", "whose", "itself",
                   "themselves", "someone", "something", "one's"}) {
      lex.emplace(w, PosTag::kPronoun);
    }
    lex.emplace("there", PosTag::kExistential);
    for (auto w : {"can", "could", "will", "would", "should", "may", "might", "must", "shall"}) {
      lex.emplace(w, PosTag::kModal);
    }
    for (auto w : {"is", "are", "was", "were", "be", "been", "being", "am", "has", "have", "had",
                   "do", "does", "did", "'s", "appears", "seems", "sits", "stands", "lies",
                   "looks", "waits", "rests"}) {
      lex.emplace(w, PosTag::kVerb);
    }
    for (auto w : {"very", "not", "also", "just", "too", "together", "still", "here", "away",
                   "back", "almost", "really", "quite", "nearby", "outdoors", "indoors",
                   "closely", "then", "there's", "where", "when", "how", "why", "only", "even"}) {
      lex.emplace(w, PosTag::kAdverb);
    }
    for (auto w : {"one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
                   "eleven", "twelve", "dozen", "several", "many", "few", "multiple", "couple"}) {
      lex.emplace(w, PosTag::kNumber);
    }
    return lex;
  }();
  return lexicon;
}

const std::unordered_set<std::string_view>& adjective_lexicon() {
  static const std::unordered_set<std::string_view> words = {
      "red", "blue", "green", "yellow", "black", "white", "brown", "orange", "pink", "purple",
      "gray", "grey", "silver", "golden", "big", "small", "large", "little", "tall", "short",
      "long", "huge", "tiny", "old", "young", "new", "empty", "full", "open", "wooden", "other",
      "different", "busy", "clear", "dark", "bright", "hot", "cold", "wet", "dry", "sunny",
      "cloudy", "grassy", "snowy", "sandy", "colorful", "pretty", "beautiful", "cute", "fresh",
      "various", "same", "single", "double", "narrow", "wide", "high", "low", "giant", "close",
      "great", "good", "nice", "modern", "metal", "plastic", "dirty", "clean", "adult", "baby",
      "stuffed", "tan", "striped", "electric", "fluffy", "furry", "shiny", "light", "heavy",
      "steep", "calm", "rocky", "muddy", "paved", "crowded", "outdoor", "indoor", "ripe",
      "delicious", "elderly", "professional", "male", "female", "asian", "vintage", "antique"};
  return words;
}

// Base-form verbs that are only verbal after a subject, modal or "to"; elsewhere nouns.
const std::unordered_set<std::string_view>& base_verb_lexicon() {
  static const std::unordered_set<std::string_view> words = {
      "sit", "stand", "hold", "look", "ride", "fly", "play", "eat", "walk", "run", "lay", "lie",
      "wait", "carry", "show", "wear", "watch", "swing", "throw", "catch", "hit", "kick", "drive",
      "pull", "push", "stare", "graze", "sleep", "talk", "prepare", "cut", "use", "make", "take",
      "go", "get", "sail", "surf", "ski", "skate", "pose", "smile", "climb", "jump", "fill"};
  return words;
}

bool is_punct_token(std::string_view token) {
  return std::none_of(token.begin(), token.end(),
                      [](unsigned char c) { return std::isalnum(c) != 0; });
}

bool is_number_token(std::string_view token) {
  return !token.empty() && std::all_of(token.begin(), token.end(), [](unsigned char c) {
    return std::isdigit(c) != 0 || c == '.' || c == ',';
  });
}

bool ends_with(std::string_view word, std::string_view suffix) {
  return word.size() >= suffix.size() && word.substr(word.size() - suffix.size()) == suffix;
}

bool is_subject_like(PosTag tag) {
  return is_noun(tag) || tag == PosTag::kPronoun;
}

bool is_noun_phrase_opener(PosTag tag) {
  return tag == PosTag::kDeterminer || tag == PosTag::kAdjective || tag == PosTag::kNumber ||
         tag == PosTag::kPronoun;
}

bool starts_object(std::optional<PosTag> tag) {
  if (!tag) return false;
  return *tag == PosTag::kDeterminer || *tag == PosTag::kPreposition ||
         *tag == PosTag::kNumber || *tag == PosTag::kPronoun || *tag == PosTag::kAdjective ||
         *tag == PosTag::kAdverb;
}

std::optional<PosTag> lexical_tag(std::string_view token) {
  if (is_punct_token(token)) return PosTag::kPunctuation;
  if (is_number_token(token)) return PosTag::kNumber;
  const auto& closed = closed_lexicon();
  if (auto it = closed.find(token); it != closed.end()) return it->second;
  if (adjective_lexicon().count(token)) return PosTag::kAdjective;
  return std::nullopt;
}

}  // namespace

bool is_noun(PosTag tag) { return tag == PosTag::kNoun || tag == PosTag::kPluralNoun; }

std::vector<std::string> word_tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) tokens.push_back(std::move(current));
    current.clear();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const unsigned char c = static_cast<unsigned char>(text[i]);
    if (std::isspace(c)) {
      flush();
    } else if (std::isalnum(c) || c >= 0x80) {
      current.push_back(static_cast<char>(std::tolower(c)));
    } else if ((c == '-' || c == '\'') && !current.empty() && i + 1 < text.size() &&
               std::isalnum(static_cast<unsigned char>(text[i + 1]))) {
      // Keep intra-word hyphens and apostrophes ("t-shirt", "man's" splits below).
      if (c == '\'') {
        flush();
        current.push_back('\'');
      } else {
        current.push_back('-');
      }
    } else {
      flush();
      tokens.emplace_back(1, static_cast<char>(c));
    }
  }
  flush();
  return tokens;
}

std::vector<PosTag> RuleBasedTagger::tag(const std::vector<std::string>& tokens) const {
  const std::size_t n = tokens.size();
  std::vector<std::optional<PosTag>> lexical(n);
  for (std::size_t i = 0; i < n; ++i) lexical[i] = lexical_tag(tokens[i]);

  std::vector<PosTag> tags(n, PosTag::kNoun);
  for (std::size_t i = 0; i < n; ++i) {
    const std::string_view word = tokens[i];
    const std::optional<PosTag> prev = i > 0 ? std::optional<PosTag>(tags[i - 1]) : std::nullopt;
    const std::optional<PosTag> next = i + 1 < n ? lexical[i + 1] : std::nullopt;
    const bool after_opener = prev && is_noun_phrase_opener(*prev);

    if (lexical[i]) {
      PosTag tag = *lexical[i];
      // "an orange ." / "the white" : an adjective closing a noun phrase is the head noun.
      if (tag == PosTag::kAdjective && after_opener && i + 1 < n &&
          (next == PosTag::kPunctuation || next == PosTag::kVerb ||
           next == PosTag::kPreposition || next == PosTag::kConjunction)) {
        tag = PosTag::kNoun;
      }
      if (tag == PosTag::kAdjective && after_opener && i + 1 == n) tag = PosTag::kNoun;
      tags[i] = tag;
      continue;
    }

    const bool after_subject = prev && is_subject_like(*prev);
    const bool after_aux = prev && (*prev == PosTag::kVerb || *prev == PosTag::kModal);
    const bool after_to = i > 0 && tokens[i - 1] == "to";

    if (base_verb_lexicon().count(word) && (after_subject || after_to || (prev && *prev == PosTag::kModal))) {
      tags[i] = PosTag::kVerb;
    } else if (word.size() > 4 && ends_with(word, "ing")) {
      tags[i] = after_opener ? PosTag::kNoun : PosTag::kVerb;
    } else if (word.size() > 3 && ends_with(word, "ed")) {
      tags[i] = prev == PosTag::kDeterminer ? PosTag::kAdjective : PosTag::kVerb;
    } else if (word.size() > 4 && ends_with(word, "ly") && !after_opener) {
      tags[i] = PosTag::kAdverb;
    } else if (word.size() > 2 && ends_with(word, "s") && !ends_with(word, "ss") &&
               !ends_with(word, "us") && !ends_with(word, "is") && !ends_with(word, "'s")) {
      const bool verbal = (after_subject && (starts_object(next) || i + 1 == n ||
                                             next == PosTag::kPunctuation)) ||
                          (after_subject && *prev == PosTag::kPronoun);
      tags[i] = verbal && !after_aux ? PosTag::kVerb : PosTag::kPluralNoun;
    } else {
      tags[i] = PosTag::kNoun;
    }
  }
  return tags;
}

std::vector<std::string> singular_candidates(std::string_view word) {
  static const std::unordered_map<std::string_view, std::string_view> irregular = {
      {"men", "man"},        {"women", "woman"},   {"children", "child"}, {"people", "person"},
      {"mice", "mouse"},     {"geese", "goose"},   {"teeth", "tooth"},    {"feet", "foot"},
      {"oxen", "ox"},        {"knives", "knife"},  {"wives", "wife"},     {"leaves", "leaf"},
      {"loaves", "loaf"},    {"wolves", "wolf"},   {"halves", "half"},    {"shelves", "shelf"},
      {"calves", "calf"},    {"scarves", "scarf"}, {"lives", "life"},     {"thieves", "thief"},
      {"policemen", "policeman"}, {"firemen", "fireman"}, {"cacti", "cactus"},
      {"buses", "bus"},      {"gases", "gas"},     {"lenses", "lens"},    {"skis", "ski"}};
  std::vector<std::string> out;
  auto add = [&out](std::string candidate) {
    if (!candidate.empty() && std::find(out.begin(), out.end(), candidate) == out.end()) {
      out.push_back(std::move(candidate));
    }
  };
  const std::string w(word);
  if (auto it = irregular.find(word); it != irregular.end()) add(std::string(it->second));
  if (ends_with(w, "men") && w.size() > 4) add(w.substr(0, w.size() - 3) + "man");
  if (ends_with(w, "ies") && w.size() > 4) {
    add(w.substr(0, w.size() - 3) + "y");
    add(w.substr(0, w.size() - 1));
  } else if (ends_with(w, "ves") && w.size() > 4) {
    add(w.substr(0, w.size() - 1));
    add(w.substr(0, w.size() - 3) + "f");
    add(w.substr(0, w.size() - 3) + "fe");
  } else if (ends_with(w, "oes")) {
    add(w.substr(0, w.size() - 2));
    add(w.substr(0, w.size() - 1));
  } else if (ends_with(w, "ches") || ends_with(w, "shes") || ends_with(w, "sses") ||
             ends_with(w, "xes") || ends_with(w, "zzes")) {
    add(w.substr(0, w.size() - 2));
  } else if (ends_with(w, "ses") || ends_with(w, "zes")) {
    add(w.substr(0, w.size() - 1));
    add(w.substr(0, w.size() - 2));
  } else if (ends_with(w, "s") && !ends_with(w, "ss") && !ends_with(w, "us") &&
             !ends_with(w, "is") && w.size() > 2) {
    add(w.substr(0, w.size() - 1));
  }
  add(w);
  return out;
}

std::string lemmatize_noun(std::string_view word, const EntityVocabulary* vocab) {
  const auto candidates = singular_candidates(word);
  if (vocab != nullptr) {
    for (const auto& c : candidates) {
      if (vocab->contains(c)) return c;
    }
  }
  return candidates.front();
}

std::vector<Entity> extract_nouns(std::string_view caption, const EntityVocabulary& vocab,
                                  const PosTagger& tagger) {
  const auto tokens = word_tokenize(caption);
  const auto tags = tagger.tag(tokens);
  std::vector<Entity> entities;
  std::unordered_set<std::string> seen;
  auto emit = [&](const std::string& name) {
    if (seen.insert(name).second) entities.push_back(Entity{name, std::nullopt});
  };

  const std::size_t max_words = std::max<std::size_t>(1, vocab.max_name_words());
  std::size_t i = 0;
  while (i < tokens.size()) {
    bool matched = false;
    for (std::size_t len = std::min(max_words, tokens.size() - i); len >= 2; --len) {
      const std::size_t last = i + len - 1;
      // A multi-word vocabulary name is specific enough to override a verb reading of its
      // head ("traffic lights", "wine glasses on").
      if (!is_noun(tags[last]) && tags[last] != PosTag::kVerb) continue;
      bool clean = true;
      std::string head;
      for (std::size_t j = i; j < last; ++j) {
        if (tags[j] == PosTag::kPunctuation) {
          clean = false;
          break;
        }
        head += tokens[j];
        head += ' ';
      }
      if (!clean) continue;
      for (const auto& candidate : singular_candidates(tokens[last])) {
        const std::string phrase = head + candidate;
        if (vocab.contains(phrase)) {
          emit(phrase);
          matched = true;
          break;
        }
      }
      if (matched) {
        i += len;
        break;
      }
    }
    if (matched) continue;
    if (is_noun(tags[i])) {
      const std::string lemma = lemmatize_noun(tokens[i], &vocab);
      if (vocab.contains(lemma)) emit(lemma);
    }
    ++i;
  }
  return entities;
}

std::vector<Entity> extract_nouns(std::string_view caption, const EntityVocabulary& vocab) {
  static const RuleBasedTagger tagger;
  return extract_nouns(caption, vocab, tagger);
}

}  // namespace entcap
