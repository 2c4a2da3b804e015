#pragma once

#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "entcap/corpus.hpp"

namespace entcap {

/// Coarse Penn-style part-of-speech tags; only the noun/non-noun split matters downstream.
enum class PosTag {
  kNoun,         // NN
  kPluralNoun,   // NNS
  kVerb,         // VB, VBD, VBG, VBN, VBP, VBZ
  kAdjective,    // JJ
  kAdverb,       // RB
  kDeterminer,   // DT, PDT, WDT
  kPreposition,  // IN, TO, RP
  kConjunction,  // CC
  kPronoun,      // PRP, PRP$, WP
  kNumber,       // CD
  kExistential,  // EX
  kModal,        // MD
  kPunctuation,
};

bool is_noun(PosTag tag);

/// Lowercases and splits a sentence into word and punctuation tokens.
std::vector<std::string> word_tokenize(std::string_view text);

class PosTagger {
 public:
  virtual ~PosTagger() = default;
  virtual std::vector<PosTag> tag(const std::vector<std::string>& tokens) const = 0;
};

/// Lexicon plus suffix/context rules tuned for short descriptive captions.
class RuleBasedTagger final : public PosTagger {
 public:
  std::vector<PosTag> tag(const std::vector<std::string>& tokens) const override;
};

/// Singular candidates for a (possibly plural) lowercase noun, most likely first.
/// The word itself is always the last candidate.
std::vector<std::string> singular_candidates(std::string_view word);

/// Picks the first singular candidate accepted by `vocab`, falling back to the rule-based form.
std::string lemmatize_noun(std::string_view word, const EntityVocabulary* vocab = nullptr);

/// Nouns present in `vocab`, lemmatized to singular lowercase, deduplicated in order of
/// first occurrence. Multi-word names are matched as contiguous token runs ending in a noun.
std::vector<Entity> extract_nouns(std::string_view caption, const EntityVocabulary& vocab,
                                  const PosTagger& tagger);
std::vector<Entity> extract_nouns(std::string_view caption, const EntityVocabulary& vocab);

}  // namespace entcap
