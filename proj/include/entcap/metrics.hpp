#pragma once

#include <array>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "entcap/corpus.hpp"
#include "entcap/encoder.hpp"

namespace entcap {

/// Lowercased word tokens with punctuation-only tokens dropped. All text metrics score
/// these tokens joined by single spaces.
std::vector<std::string> metric_tokens(std::string_view text);
std::string metric_text(std::string_view text);

using ReferenceSets = std::vector<std::vector<std::string>>;

struct BleuScores {
  std::array<double, 4> bleu{};  // BLEU@1..BLEU@4
  long hypothesis_length = 0;
  long reference_length = 0;
};

/// Corpus-level BLEU in the COCO caption-evaluation convention: clipped n-gram counts
/// pooled over the corpus, per-item closest reference length (ties to the shorter),
/// brevity penalty exp(1 - r/c) when c < r. Any zero n-gram precision gives 0 for that
/// order and above. Throws InputError on mismatched or empty reference lists.
BleuScores bleu_scores(std::span<const std::string> candidates, const ReferenceSets& references);
double bleu(std::span<const std::string> candidates, const ReferenceSets& references, int n);

struct CiderScores {
  double corpus = 0.0;
  std::vector<double> per_item;
};

/// CIDEr-D (n = 1..4, sigma = 6, scaled by 10) with document frequencies taken over the
/// reference sets of the scored corpus. Mirrors the widely used COCO scorer, including its
/// use of the bigram count as the length in the Gaussian penalty.
CiderScores cider_d(std::span<const std::string> candidates, const ReferenceSets& references);
double cider(std::span<const std::string> candidates, const ReferenceSets& references);

/// Mean of 2.5 * max(cos(image, caption), 0) over the pairs.
double clip_score(std::span<const Embedding> images, std::span<const Embedding> captions);
double clip_score(std::span<const Embedding> images, std::span<const std::string> captions,
                  const Backbone& backbone);

struct EntityPrecision {
  long correct = 0;
  long total = 0;
  /// correct / total, or 0 when no caption mentions any entity.
  double value() const { return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total); }
};

/// Micro-averaged over captions; each caption's entities are deduplicated by extract_nouns.
EntityPrecision entity_precision(std::span<const std::string> captions,
                                 const std::vector<std::vector<std::string>>& gold_entities,
                                 const EntityVocabulary& vocab);

}  // namespace entcap
