#include <gtest/gtest.h>

#include "entcap/errors.hpp"
#include "entcap/prompts.hpp"

using namespace entcap;

namespace {

std::vector<Entity> ents(std::initializer_list<const char*> names) {
  std::vector<Entity> out;
  for (const char* n : names) out.push_back({n, std::nullopt});
  return out;
}

std::size_t occurrences(const std::string& text, const std::string& word) {
  std::size_t n = 0;
  for (auto pos = text.find(word); pos != std::string::npos; pos = text.find(word, pos + 1)) ++n;
  return n;
}

}  // namespace

TEST(Render, Templates) {
  const auto d = HardPromptTemplate::default_template();
  EXPECT_EQ(render_hard_prompt(ents({"dog", "ball"}), d).text, "There are dog, ball in the image.");
  EXPECT_EQ(render_hard_prompt(ents({"dog"}), d).text, "There are dog in the image.");
  EXPECT_EQ(render_hard_prompt(ents({"jay"}), HardPromptTemplate::builtin(TemplateId::kVariant2)).text,
            "A photo of jay, a caption to describe this image is");
  EXPECT_EQ(render_hard_prompt(ents({"cat"}), HardPromptTemplate::builtin(TemplateId::kVariant1)).text,
            "There are cat in the scene. The image shows");
  const auto custom = HardPromptTemplate::make_custom("Objects: ", " and ", ".");
  EXPECT_EQ(render_hard_prompt(ents({"a", "b"}), custom).text, "Objects: a and b.");
  EXPECT_THROW(HardPromptTemplate::builtin(TemplateId::kCustom), ConfigError);
  EXPECT_EQ(parse_template_id("variant3"), TemplateId::kVariant3);
  EXPECT_THROW(parse_template_id("nope"), ConfigError);
}

TEST(Render, EmptyEntitiesGiveEmptyPrompt) {
  const auto p = render_hard_prompt({}, HardPromptTemplate::default_template());
  EXPECT_TRUE(p.empty());
  EXPECT_TRUE(p.entities_used.empty());
}

TEST(Render, EveryEntityOnceInOrder) {
  const auto e = ents({"zebra", "umbrella", "oven", "kite"});
  for (auto id : {TemplateId::kDefault, TemplateId::kVariant1, TemplateId::kVariant2, TemplateId::kVariant3}) {
    const auto p = render_hard_prompt(e, HardPromptTemplate::builtin(id));
    EXPECT_EQ(p.entities_used, e);
    EXPECT_EQ(p.text.find('\n'), std::string::npos);
    std::size_t last = 0;
    for (const auto& x : e) {
      EXPECT_EQ(occurrences(p.text, x.name), 1u) << p.text;
      const auto pos = p.text.find(x.name);
      EXPECT_GE(pos, last);
      last = pos;
    }
  }
}

TEST(Mask, IdentityAndEmpty) {
  const auto e = ents({"a", "b", "c", "d"});
  std::mt19937_64 rng(1);
  EXPECT_EQ(mask_entities(e, 0.0, rng), e);
  EXPECT_TRUE(mask_entities(e, 1.0, rng).empty());
  const auto d = HardPromptTemplate::default_template();
  EXPECT_EQ(render_hard_prompt(mask_entities(e, 0.0, rng), d).text, render_hard_prompt(e, d).text);
}

TEST(Mask, RejectsOutOfRangeRates) {
  std::mt19937_64 rng(1);
  EXPECT_THROW(mask_entities({}, -0.1, rng), DomainError);
  EXPECT_THROW(mask_entities({}, 1.5, rng), DomainError);
}

TEST(Mask, SurvivorsKeepOrderAndSeedReproduces) {
  const auto e = ents({"a", "b", "c", "d", "e", "f", "g", "h"});
  std::mt19937_64 r1(42), r2(42);
  for (int t = 0; t < 100; ++t) {
    const auto m1 = mask_entities(e, 0.5, r1);
    EXPECT_EQ(m1, mask_entities(e, 0.5, r2));
    std::size_t j = 0;
    for (const auto& x : m1) {
      while (j < e.size() && !(e[j] == x)) ++j;
      ASSERT_LT(j, e.size()) << "survivor out of order";
    }
  }
}

TEST(Mask, MonteCarloMean) {
  const auto e = ents({"a", "b", "c", "d", "e", "f", "g", "h", "i", "j"});
  std::mt19937_64 rng(2024);
  double total = 0;
  for (int t = 0; t < 10000; ++t) total += static_cast<double>(mask_entities(e, 0.4, rng).size());
  EXPECT_NEAR(total / 10000.0, 6.0, 0.15);
}

TEST(EntityQuery, Variants) {
  EXPECT_EQ(build_inference_entity_query("dog", false), std::vector<std::string>{"A photo of dog"});
  const EntityQueryTemplates three{{"a photo of a {}.", "a drawing of a {}.", "{} in the wild."}};
  const auto q = build_inference_entity_query("dog", true, three);
  ASSERT_EQ(q.size(), 3u);
  for (const auto& s : q) EXPECT_NE(s.find("dog"), std::string::npos);
  EXPECT_THROW(build_inference_entity_query("", false), DomainError);
  EXPECT_THROW(build_inference_entity_query("", true), DomainError);
}
