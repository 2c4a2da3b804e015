#include <cstdlib>
#include <fstream>
#include <random>

#include <gtest/gtest.h>

#include "entcap/encoder.hpp"
#include "entcap/errors.hpp"
#include "entcap/image.hpp"
#include "support.hpp"

using namespace entcap;
using entcap::test_support::TempDir;

namespace {

Image gradient_image(int w, int h) {
  std::vector<float> v;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) v.push_back(static_cast<float>((x + 2 * y + 5 * c) % 17) / 16.0f);
  return make_image(w, h, 3, std::move(v));
}

// Restores the cache variable on scope exit.
class CacheEnv {
 public:
  explicit CacheEnv(const std::string& dir) {
    if (const char* old = std::getenv(kBackboneCacheEnv)) old_ = old;
    setenv(kBackboneCacheEnv, dir.c_str(), 1);
  }
  ~CacheEnv() {
    if (old_) setenv(kBackboneCacheEnv, old_->c_str(), 1);
    else unsetenv(kBackboneCacheEnv);
  }

 private:
  std::optional<std::string> old_;
};

}  // namespace

TEST(Text, DeterministicNormalisedAndFullWidth) {
  const auto b = load_backbone("hashclip-b32");
  EXPECT_EQ(b->dim(), 512u);
  const auto a1 = b->embed_text("a dog");
  const auto a2 = b->embed_text("a dog");
  EXPECT_EQ(a1.dim(), 512);
  EXPECT_TRUE(a1.normalized);
  EXPECT_NEAR(a1.values.norm(), 1.0, 1e-5);
  EXPECT_EQ(a1.values, a2.values);
  EXPECT_DOUBLE_EQ(cosine_similarity(a1, a2), 1.0);
  EXPECT_LT(cosine_similarity(a1, b->embed_text("a red bus on the street")), 0.9);
}

TEST(Text, OverLengthInputIsTruncatedAndCounted) {
  HashedBackbone b(backbone_spec("hashclip-mini"));
  std::string longer;
  for (int i = 0; i < 200; ++i) longer += "word" + std::to_string(i) + " ";
  EXPECT_EQ(b.truncation_count(), 0u);
  const auto e = b.embed_text(longer);
  EXPECT_NEAR(e.values.norm(), 1.0, 1e-5);
  EXPECT_EQ(b.truncation_count(), 1u);
  b.embed_text("short text");
  EXPECT_EQ(b.truncation_count(), 1u);
}

TEST(Image, DeterministicAndGreyscaleReplicated) {
  const auto b = load_backbone("hashclip-b32");
  const auto img = gradient_image(40, 30);
  const auto e1 = b->embed_image(img);
  EXPECT_EQ(e1.dim(), 512);
  EXPECT_NEAR(e1.values.norm(), 1.0, 1e-5);
  EXPECT_EQ(e1.values, b->embed_image(img).values);

  std::vector<float> grey(20 * 10);
  for (std::size_t i = 0; i < grey.size(); ++i) grey[i] = static_cast<float>(i % 7) / 6.0f;
  const Image g = make_image(20, 10, 1, grey);
  ASSERT_EQ(g.rgb.size(), grey.size() * 3);
  EXPECT_EQ(g.at(3, 2, 0), g.at(3, 2, 2));
  EXPECT_NEAR(b->embed_image(g).values.norm(), 1.0, 1e-5);
}

TEST(Image, FilesRoundTripAndBadFilesThrow) {
  TempDir dir("enc");
  const auto img = gradient_image(9, 7);
  save_ppm(img, dir / "a.ppm");
  const auto back = load_image(dir / "a.ppm");
  ASSERT_EQ(back.width, 9);
  ASSERT_EQ(back.height, 7);
  for (std::size_t i = 0; i < img.rgb.size(); ++i) EXPECT_NEAR(back.rgb[i], img.rgb[i], 1.0 / 255.0);

  {
    std::ofstream f(dir / "g.pgm");
    f << "P2\n2 2\n255\n0 255\n128 64\n";
  }
  const auto g = load_image(dir / "g.pgm");
  EXPECT_EQ(g.width, 2);
  EXPECT_FLOAT_EQ(g.at(1, 0, 1), 1.0f);

  {
    std::ofstream f(dir / "bad.ppm");
    f << "not an image";
  }
  EXPECT_THROW(load_image(dir / "bad.ppm"), IoError);
  EXPECT_THROW(load_image(dir / "missing.png"), IoError);
  EXPECT_TRUE(is_supported_image("x.PNG"));
  EXPECT_FALSE(is_supported_image("x.txt"));
}

TEST(Noise, ZeroVarianceIsIdentityAndNegativeThrows) {
  const auto b = load_backbone("hashclip-mini");
  const auto e = b->embed_text("a cat on a mat");
  std::mt19937_64 rng(3);
  EXPECT_EQ(inject_noise(e, 0.0, rng).values, e.values);
  EXPECT_THROW(inject_noise(e, -0.1, rng), DomainError);
  EXPECT_THROW(sample_noise(4, -1.0, rng), DomainError);
}

TEST(Noise, SeededAndRenormalised) {
  const auto b = load_backbone("hashclip-b32");
  const auto e = b->embed_text("a cat on a mat");
  std::mt19937_64 r1(11), r2(11);
  const auto n1 = inject_noise(e, 0.016, r1);
  const auto n2 = inject_noise(e, 0.016, r2);
  EXPECT_EQ(n1.values, n2.values);
  EXPECT_NEAR(n1.values.norm(), 1.0, 1e-5);
  EXPECT_NE(n1.values, e.values);
}

TEST(Noise, MonteCarloVarianceMatchesConfigured) {
  // 10,000 draws of one component; the sample variance of a Gaussian with 10k samples has
  // a relative standard error of about 1.4%, so 5% is a 3.5-sigma band.
  std::mt19937_64 rng(2024);
  const int draws = 10000;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < draws; ++i) {
    const double x = sample_noise(1, 0.016, rng)(0);
    sum += x;
    sq += x * x;
  }
  const double mean = sum / draws;
  const double var = (sq - draws * mean * mean) / (draws - 1);
  EXPECT_NEAR(var, 0.016, 0.016 * 0.05);
  EXPECT_NEAR(mean, 0.0, 4.0 * std::sqrt(0.016 / draws));
}

TEST(Backbone, CacheRoundTripAndChecksum) {
  TempDir dir("cache");
  CacheEnv env(dir.path().string());
  const auto first = load_backbone("hashclip-mini");
  EXPECT_TRUE(std::filesystem::exists(dir / "hashclip-mini.bin"));
  const auto second = load_backbone("hashclip-mini", first->checksum());
  EXPECT_EQ(first->checksum(), second->checksum());
  EXPECT_EQ(first->embed_text("two dogs").values, second->embed_text("two dogs").values);
  EXPECT_EQ(first->checksum().size(), 64u);
  EXPECT_THROW(load_backbone("hashclip-mini", std::string(64, '0')), ConfigError);
  EXPECT_THROW(load_backbone("no-such-backbone"), ConfigError);
}
