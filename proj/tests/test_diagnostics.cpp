#include <gtest/gtest.h>

#include "entcap/commands.hpp"
#include "entcap/diagnostics.hpp"
#include "entcap/errors.hpp"
#include "support.hpp"

using namespace entcap;

namespace {

class FillerContinuer final : public PrefixContinuer {
 public:
  explicit FillerContinuer(std::string filler) : filler_(std::move(filler)) {}
  std::string continue_text(std::string_view prefix) const override {
    return prefix.empty() ? filler_ : std::string(prefix) + " " + filler_;
  }

 private:
  std::string filler_;
};

struct Corpus {
  std::vector<std::string> captions;
  ReferenceSets references;
  std::vector<int> m;
  std::string filler;
};

Corpus gvis_corpus() {
  const Json j = read_json_file(test_support::fixture("gvis_corpus.json"));
  Corpus c;
  c.filler = j.at("filler").get<std::string>();
  c.m = j.at("m").get<std::vector<int>>();
  for (const auto& [id, refs] : j.at("references").items()) {
    c.references.push_back(refs.get<std::vector<std::string>>());
    c.captions.push_back(c.references.back().front());
  }
  return c;
}

// Rows frozen from tests/oracles/gvis_oracle.py.
constexpr double kCiderModel = 5.361463819200;
constexpr double kOracle[][2] = {{0, 0.000000000000},      {1, 0.041091963198}, {2, 0.655866897691},
                                 {3, 1.214907839248},      {4, 1.885697845980}, {6, 3.111098623620},
                                 {9, 5.361463819200}};

}  // namespace

TEST(VisualGuidance, MatchesHandSimulation) {
  const auto c = gvis_corpus();
  const FillerContinuer lm(c.filler);
  const auto curve = visual_guidance_curve(c.captions, c.references, lm, c.m);
  EXPECT_NEAR(curve.cider_model, kCiderModel, 1e-9);
  ASSERT_EQ(curve.rows.size(), std::size(kOracle));
  for (std::size_t i = 0; i < curve.rows.size(); ++i) {
    EXPECT_EQ(curve.rows[i].m, static_cast<int>(kOracle[i][0]));
    EXPECT_NEAR(curve.rows[i].cider_m, kOracle[i][1], 1e-9) << "m=" << curve.rows[i].m;
    EXPECT_NEAR(curve.rows[i].g_vis, 1.0 - kOracle[i][1] / kCiderModel, 1e-9);
  }
}

TEST(VisualGuidance, Identities) {
  const auto c = gvis_corpus();
  const FillerContinuer lm(c.filler);
  const auto curve = visual_guidance_curve(c.captions, c.references, lm, c.m);
  for (const auto& row : curve.rows) EXPECT_NEAR(row.g_vis + row.g_lang, 1.0, 1e-15);
  EXPECT_EQ(curve.rows.back().g_vis, 0.0);
  EXPECT_EQ(curve.rows.front().g_vis, 1.0);  // continuation shares nothing with the references
  for (std::size_t i = 1; i < curve.rows.size(); ++i) {
    EXPECT_LE(curve.rows[i].g_vis, curve.rows[i - 1].g_vis);
  }
}

TEST(VisualGuidance, ZeroModelScoreIsAnError) {
  const FillerContinuer lm("x");
  const std::vector<std::string> caps{"purple elephants", "quiet violins"};
  const std::vector<int> m{1};
  EXPECT_THROW(visual_guidance_curve(caps, {{"a cat"}, {"a dog"}}, lm, m), DomainError);
}

TEST(VisualGuidance, WordHelpers) {
  EXPECT_EQ(first_words("  a  dog runs ", 2), "a dog");
  EXPECT_EQ(first_words("a dog", 5), "a dog");
  EXPECT_EQ(word_count(" a dog  runs"), 3u);
}
