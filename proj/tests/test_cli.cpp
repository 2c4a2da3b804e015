#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "entcap/commands.hpp"
#include "entcap/errors.hpp"
#include "entcap/image.hpp"
#include "support.hpp"

#ifndef ENTCAP_CLI_PATH
#error "ENTCAP_CLI_PATH must name the entcap executable"
#endif

using namespace entcap;
using entcap::test_support::fixture;
using entcap::test_support::TempDir;

namespace {

int run_cli(const std::string& args, const std::filesystem::path& log) {
  const std::string cmd = std::string(ENTCAP_CLI_PATH) + " " + args + " > '" + log.string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write(const std::filesystem::path& p, const std::string& text) {
  std::ofstream(p, std::ios::binary) << text;
}

std::string q(const std::filesystem::path& p) { return "'" + p.string() + "'"; }

// Writes a ten-caption corpus and trains a small model once for the whole suite.
class TrainedModel : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir("cli");
    std::ifstream in(fixture("overfit_captions.txt"));
    std::string line, text;
    for (int i = 0; i < 10 && std::getline(in, line); ++i) text += line + "\n";
    write(*dir_ / "corpus.txt", text);
    const int rc = run_cli(fmt::format("train --corpus {} --vocab {} --backbone hashclip-mini --epochs 2 "
                                       "--batch-size 5 --lr 1e-3 --seed 4 --out {}",
                                       q(*dir_ / "corpus.txt"), q(fixture("coco80.txt")), q(*dir_ / "run")),
                           *dir_ / "train.log");
    ASSERT_EQ(rc, 0) << slurp(*dir_ / "train.log");
  }
  static void TearDownTestSuite() {
    delete dir_;
    dir_ = nullptr;
  }
  static const TempDir& dir() { return *dir_; }

 private:
  static inline TempDir* dir_ = nullptr;
};

}  // namespace

TEST(Config, PresetsExpandAndLayersOverride) {
  const Json train = resolve_config("train", std::string("coco"), std::nullopt, Json::object());
  EXPECT_EQ(train["training"]["epochs"], 15);
  EXPECT_EQ(train["training"]["batch_size"], 80);
  EXPECT_DOUBLE_EQ(train["training"]["learning_rate"].get<double>(), 2e-5);
  EXPECT_DOUBLE_EQ(train["training"]["r_mask"].get<double>(), 0.4);
  EXPECT_EQ(train["preset"], "coco");
  EXPECT_EQ(train["seed"], 0);

  const Json cap = resolve_config("caption", std::nullopt, std::nullopt, Json::object());
  EXPECT_EQ(cap["preset"], "cross_domain");
  EXPECT_EQ(cap["retrieval"]["k"], 3);
  EXPECT_DOUBLE_EQ(cap["retrieval"]["p_thres"].get<double>(), 0.2);
  EXPECT_DOUBLE_EQ(cap["retrieval"]["tau"].get<double>(), 0.01);
  EXPECT_EQ(cap["beam"], 5);

  TempDir dir("cfg");
  write(dir / "c.json", R"({"preset": "flickr30k", "seed": 9, "training": {"r_mask": 0.6, "epochs": 7}})");
  const Json layered = resolve_config("train", std::nullopt, dir / "c.json",
                                      Json{{"training", {{"epochs", 3}}}});
  EXPECT_EQ(layered["preset"], "flickr30k");
  EXPECT_EQ(layered["training"]["epochs"], 3);
  EXPECT_DOUBLE_EQ(layered["training"]["r_mask"].get<double>(), 0.6);
  EXPECT_EQ(layered["training"]["seed"], 9);

  EXPECT_THROW(resolve_config("train", std::string("nope"), std::nullopt, Json::object()), ConfigError);
  EXPECT_THROW(resolve_config("evaluate", std::string("coco"), std::nullopt, Json::object()), ConfigError);
  EXPECT_THROW(resolve_config("train", std::nullopt, dir / "missing.json", Json::object()), ConfigError);
}

TEST(ExitCodes, InvalidConfigIsTwoRuntimeFailureIsOne) {
  TempDir dir("exit");
  EXPECT_EQ(run_cli("train --corpus /nonexistent/corpus.txt --out " + q(dir / "o"), dir / "a.log"), 2);
  EXPECT_NE(slurp(dir / "a.log").find("corpus:"), std::string::npos);
  EXPECT_EQ(run_cli("caption --preset bogus --checkpoint x --out " + q(dir / "o"), dir / "b.log"), 2);
  EXPECT_EQ(run_cli("train --config " + q(dir / "none.json"), dir / "c.log"), 2);
  write(dir / "bad.bin", "garbage");
  write(dir / "t.txt", "a dog\n");
  EXPECT_EQ(run_cli("caption --checkpoint " + q(dir / "bad.bin") + " --texts " + q(dir / "t.txt") +
                        " --out " + q(dir / "o"),
                    dir / "d.log"),
            1);
  EXPECT_NE(run_cli("frobnicate", dir / "e.log"), 0);
}

TEST_F(TrainedModel, TrainEchoesConfigAndLogsEpochs) {
  const Json cfg = read_json_file(dir() / "run" / "config.json");
  EXPECT_EQ(cfg["seed"], 4);
  EXPECT_EQ(cfg["preset"], "coco");
  EXPECT_EQ(cfg["training"]["epochs"], 2);
  EXPECT_EQ(cfg["training"]["seed"], 4);
  const auto log = read_json_lines(dir() / "run" / "train_log.jsonl");
  ASSERT_EQ(log.size(), 2u);
  for (const char* key : {"epoch", "step", "loss", "wall_clock"}) EXPECT_TRUE(log[0].contains(key)) << key;
  EXPECT_TRUE(std::filesystem::exists(dir() / "run" / "checkpoint.bin"));
}

TEST_F(TrainedModel, CaptionThreeImagesGivesThreeRecords) {
  TempDir work("img");
  std::filesystem::create_directories(work / "images");
  for (int i = 0; i < 3; ++i) {
    std::vector<float> px(16 * 12 * 3);
    for (std::size_t k = 0; k < px.size(); ++k) px[k] = static_cast<float>((k * (i + 3)) % 11) / 10.0f;
    save_ppm(make_image(16, 12, 3, px), work / "images" / fmt::format("img{}.ppm", i));
  }
  const int rc = run_cli(fmt::format("caption --checkpoint {} --images {} --vocab {} --beam 2 --max-len 8 "
                                     "--timing --out {}",
                                     q(dir() / "run" / "checkpoint.bin"), q(work / "images"),
                                     q(fixture("coco80.txt")), q(work / "out")),
                         work / "c.log");
  ASSERT_EQ(rc, 0) << slurp(work / "c.log");
  const auto recs = read_json_lines(work / "out" / "captions.jsonl");
  ASSERT_EQ(recs.size(), 3u);
  for (int i = 0; i < 3; ++i) {
    EXPECT_EQ(recs[static_cast<std::size_t>(i)]["id"], fmt::format("img{}.ppm", i));
    for (const char* key : {"caption", "entities", "hard_prompt", "prefix_length", "retrieval", "timing_ms"})
      EXPECT_TRUE(recs[static_cast<std::size_t>(i)].contains(key)) << key;
  }
  EXPECT_EQ(read_json_file(work / "out" / "config.json")["beam"], 2);

  // An unreadable image becomes an error record; the rest still caption.
  write(work / "images" / "broken.ppm", "P6 nonsense");
  ASSERT_EQ(run_cli(fmt::format("caption --checkpoint {} --images {} --vocab {} --max-len 4 --out {}",
                                q(dir() / "run" / "checkpoint.bin"), q(work / "images"),
                                q(fixture("coco80.txt")), q(work / "out2")),
                    work / "c2.log"),
            0)
      << slurp(work / "c2.log");
  const auto recs2 = read_json_lines(work / "out2" / "captions.jsonl");
  ASSERT_EQ(recs2.size(), 4u);
  EXPECT_TRUE(recs2[0].contains("error"));
}

TEST_F(TrainedModel, PromptFlagsReachTheRecords) {
  TempDir work("flags");
  write(work / "t.txt", "a man riding a horse on a dirt road\na cat sleeping on a wooden bench\n");
  ASSERT_EQ(run_cli(fmt::format("caption --checkpoint {} --texts {} --vocab {} --p-thres 1 --max-len 6 --out {}",
                                q(dir() / "run" / "checkpoint.bin"), q(work / "t.txt"),
                                q(fixture("coco80.txt")), q(work / "out")),
                    work / "c.log"),
            0)
      << slurp(work / "c.log");
  for (const auto& r : read_json_lines(work / "out" / "captions.jsonl")) {
    EXPECT_EQ(r["hard_prompt"], "");
    EXPECT_EQ(r["prefix_length"], 10);
    EXPECT_TRUE(r["entities"].empty());
  }
  ASSERT_EQ(run_cli(fmt::format("caption --checkpoint {} --texts {} --vocab {} --template variant2 --p-thres 0 "
                                "--max-len 6 --out {}",
                                q(dir() / "run" / "checkpoint.bin"), q(work / "t.txt"),
                                q(fixture("coco80.txt")), q(work / "out2")),
                    work / "c2.log"),
            0)
      << slurp(work / "c2.log");
  for (const auto& r : read_json_lines(work / "out2" / "captions.jsonl")) {
    EXPECT_EQ(r["hard_prompt"].get<std::string>().rfind("A photo of", 0), 0u) << r.dump();
  }
}

TEST(Evaluate, IdentityScoresAndDomainBlocks) {
  TempDir dir("eval");
  write(dir / "caps.jsonl",
        "{\"id\": \"a\", \"caption\": \"a dog runs across the green field\"}\n"
        "{\"id\": \"b\", \"caption\": \"two cats sleep on a red couch\"}\n"
        "{\"id\": \"c\", \"error\": \"image unreadable\"}\n");
  write(dir / "refs.json",
        R"({"a": ["a dog runs across the green field"], "b": ["two cats sleep on a red couch"], "c": ["x y z"]})");
  write(dir / "tags.json", R"({"a": "in", "b": "out"})");
  ASSERT_EQ(run_cli(fmt::format("evaluate --captions {} --references {} --domain-tags {} --vocab {} --out {}",
                                q(dir / "caps.jsonl"), q(dir / "refs.json"), q(dir / "tags.json"),
                                q(fixture("coco80.txt")), q(dir / "out")),
                    dir / "e.log"),
            0)
      << slurp(dir / "e.log");
  const Json report = read_json_file(dir / "out" / "report.json");
  EXPECT_EQ(report["schema_version"], kReportSchemaVersion);
  EXPECT_NEAR(report["overall"]["bleu_4"].get<double>(), 1.0, 1e-12);
  EXPECT_EQ(report["overall"]["count"], 2);
  EXPECT_TRUE(report["overall"]["meteor"].is_null());
  EXPECT_EQ(report["failed"], Json::array({"c"}));
  ASSERT_TRUE(report["domains"].contains("in"));
  ASSERT_TRUE(report["domains"].contains("out"));
  EXPECT_FALSE(report["domains"].contains("near"));
  EXPECT_EQ(report["domains"]["out"]["count"], 1);
  EXPECT_TRUE(report["overall"].contains("entity_precision"));

  write(dir / "refs2.json", R"({"a": ["a dog"], "b": ["two cats"], "c": ["x"], "zz": ["orphan"]})");
  EXPECT_EQ(run_cli(fmt::format("evaluate --captions {} --references {} --out {}", q(dir / "caps.jsonl"),
                                q(dir / "refs2.json"), q(dir / "out2")),
                    dir / "e2.log"),
            1);
  EXPECT_NE(slurp(dir / "e2.log").find("zz"), std::string::npos);
}

TEST_F(TrainedModel, DiagnoseWithEmptyMListWritesHeaderOnly) {
  TempDir work("diag");
  ASSERT_EQ(run_cli(fmt::format("train --corpus {} --vocab {} --backbone hashclip-mini --epochs 1 "
                                "--batch-size 5 --objective language_model --out {}",
                                q(dir() / "corpus.txt"), q(fixture("coco80.txt")), q(work / "lm")),
                    work / "lm.log"),
            0)
      << slurp(work / "lm.log");
  // CIDEr needs more than one item: with a single reference set every idf is zero.
  write(work / "caps.jsonl",
        "{\"id\": \"a\", \"caption\": \"a dog on a bench\"}\n"
        "{\"id\": \"b\", \"caption\": \"two cats playing in the grass\"}\n"
        "{\"id\": \"c\", \"caption\": \"a red bus on the street\"}\n");
  write(work / "refs.json",
        R"({"a": ["a dog on a bench"], "b": ["two cats playing in the grass"], "c": ["a red bus on the street"]})");
  ASSERT_EQ(run_cli(fmt::format("diagnose --lm {} --captions {} --references {} --out {}",
                                q(work / "lm" / "checkpoint.bin"), q(work / "caps.jsonl"),
                                q(work / "refs.json"), q(work / "out")),
                    work / "d.log"),
            0)
      << slurp(work / "d.log");
  EXPECT_EQ(slurp(work / "out" / "gvis.csv"), "m,cider_m,g_vis,g_lang\n");

  ASSERT_EQ(run_cli(fmt::format("diagnose --lm {} --captions {} --references {} --m 0,2,full --out {}",
                                q(work / "lm" / "checkpoint.bin"), q(work / "caps.jsonl"),
                                q(work / "refs.json"), q(work / "out2")),
                    work / "d2.log"),
            0)
      << slurp(work / "d2.log");
  const Json g = read_json_file(work / "out2" / "gvis.json");
  ASSERT_EQ(g["rows"].size(), 3u);
  EXPECT_EQ(g["rows"][2]["g_vis"].get<double>(), 0.0);

  // The captioner checkpoint is not a pure LM.
  EXPECT_EQ(run_cli(fmt::format("diagnose --lm {} --captions {} --references {} --out {}",
                                q(dir() / "run" / "checkpoint.bin"), q(work / "caps.jsonl"),
                                q(work / "refs.json"), q(work / "out3")),
                    work / "d3.log"),
            2);
}

TEST(Retrieve, PrintsEntitiesAndRanking) {
  std::ostringstream out;
  Json cfg = resolve_config("retrieve", std::nullopt, std::nullopt,
                            Json{{"text", "A photo of giraffe"},
                                 {"vocabulary", fixture("coco80.txt").string()},
                                 {"backbone", "hashclip-mini"},
                                 {"top", 5}});
  ASSERT_EQ(cmd_retrieve(cfg, out), kExitOk);
  const Json r = Json::parse(out.str());
  ASSERT_EQ(r["top"].size(), 5u);
  EXPECT_EQ(r["top"][0]["name"], "giraffe");
  EXPECT_EQ(r["entities"][0]["name"], "giraffe");
  EXPECT_EQ(r["retrieval"]["k"], 3);
}
