#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "entcap/metrics.hpp"
#include "entcap/model.hpp"

namespace entcap {

/// Completes a caption from its first words without looking at the image.
class PrefixContinuer {
 public:
  virtual ~PrefixContinuer() = default;
  /// Returns the full text: the given prefix words followed by the continuation.
  virtual std::string continue_text(std::string_view prefix_words) const = 0;
};

/// Greedy continuation with a language model trained without visual input. The LM is
/// primed with <eos> as a start token and stops at <eos> or after `max_len` caption tokens.
class LmContinuer final : public PrefixContinuer {
 public:
  LmContinuer(const CaptionModel& lm, int max_len);
  std::string continue_text(std::string_view prefix_words) const override;

 private:
  const CaptionModel& lm_;
  int max_len_;
  Matrix start_row_;
};

struct GuidanceRow {
  int m = 0;
  double cider_m = 0.0;
  double g_vis = 0.0;
  double g_lang = 0.0;
};

struct GuidanceCurve {
  double cider_model = 0.0;
  std::vector<GuidanceRow> rows;
};

/// For each m, keeps the first m whitespace words of every model caption, lets `continuer`
/// finish it and scores the result with CIDEr. Captions of at most m words are scored
/// unchanged, so m at or beyond the caption length gives G_vis = 0 exactly.
/// G_vis = 1 - CIDEr(m) / CIDEr_model and G_lang = CIDEr(m) / CIDEr_model.
/// Throws DomainError when CIDEr_model is 0 and for negative m.
GuidanceCurve visual_guidance_curve(std::span<const std::string> model_captions,
                                    const ReferenceSets& references,
                                    const PrefixContinuer& continuer, std::span<const int> m_values);

/// First m whitespace-delimited words joined by single spaces.
std::string first_words(std::string_view text, int m);
std::size_t word_count(std::string_view text);

}  // namespace entcap
