#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include <unistd.h>

#include "apnt/archive.hpp"
#include "apnt/config.hpp"
#include "apnt/dataset.hpp"
#include "apnt/evaluation.hpp"
#include "apnt/training.hpp"
#include "cli.hpp"

using namespace apnt;
namespace fs = std::filesystem;

namespace {

int run(std::vector<std::string> args) {
  args.insert(args.begin(), "apnt");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  return {std::istreambuf_iterator<char>(in), {}};
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = fs::temp_directory_path() / ("apnt_cli_test_" + std::to_string(::getpid()));
    fs::remove_all(root_);
    Manifest m;
    for (int i = 0; i < 3; ++i) {
      SyntheticSceneOptions o;
      o.height = o.width = 32;
      o.seed = static_cast<std::uint64_t>(i);
      o.motion_dx = 1;
      const std::string name = i < 2 ? "train_" + std::to_string(i) : "test_0";
      save_scene(synthesize_scene(o), root_ / "data" / name);
      (i < 2 ? m.train : m.test).push_back(root_ / "data" / name);
    }
    write_manifest(root_ / "data" / "manifest.txt", m);
    std::ofstream(root_ / "config.json") << R"({
      "features": "handcrafted",
      "network": {"base_channels": 8, "cab_count_mef": 1, "cab_count_codec": 1, "cab_reduction": 4},
      "training": {"learning_rate": 0.001, "crop": 16, "max_steps": 2, "checkpoint_every": 1, "seed": 3},
      "paths": {"manifest": ")" + (root_ / "data" / "manifest.txt").string() + R"(", "out_dir": ")" +
                                        (root_ / "train").string() + R"("}
    })";
    ASSERT_EQ(run({"train", "--config", (root_ / "config.json").string()}), 0);
  }

  static void TearDownTestSuite() { fs::remove_all(root_); }

  static std::string config() { return (root_ / "config.json").string(); }
  static std::string ckpt() { return (root_ / "train" / checkpoint_name(2)).string(); }

  static fs::path root_;
};
fs::path Cli::root_;

}  // namespace

TEST_F(Cli, TrainWritesCheckpointsLogAndEffectiveConfig) {
  for (int s = 0; s <= 2; ++s) EXPECT_TRUE(fs::exists(root_ / "train" / checkpoint_name(s)));
  EXPECT_TRUE(fs::exists(root_ / "train" / "loss_log.csv"));
  const RunConfig eff = load_run_config(root_ / "train" / "effective_config.json");
  EXPECT_EQ(eff.network.base_channels, 8);
  EXPECT_EQ(eff.training.max_steps, 2);
}

TEST_F(Cli, EffectiveConfigReDrivesIdenticalRun) {
  const fs::path eff = root_ / "train" / "effective_config.json";
  ASSERT_EQ(run({"train", "--config", eff.string(), "--out", (root_ / "rerun").string()}), 0);
  EXPECT_TRUE(load_checkpoint(root_ / "rerun" / checkpoint_name(2)).params ==
              load_checkpoint(ckpt()).params);
  ASSERT_EQ(run({"train", "--config", eff.string(), "--out", (root_ / "reseed").string(),
                 "--seed", "9"}),
            0);
  EXPECT_FALSE(load_checkpoint(root_ / "reseed" / checkpoint_name(2)).params ==
               load_checkpoint(ckpt()).params);
  EXPECT_EQ(load_run_config(root_ / "reseed" / "effective_config.json").training.seed, 9u);
}

TEST_F(Cli, EvalHappyPath) {
  const fs::path out = root_ / "eval";
  EXPECT_EQ(run({"eval", "--config", config(), "--checkpoint", ckpt(), "--manifest",
                 (root_ / "data" / "manifest.txt").string(), "--out", out.string()}),
            0);
  const auto rows = MetricsReport::read_csv(out / "metrics.csv");
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].scene_id, "test_0");
  EXPECT_TRUE(std::isfinite(rows[0].psnr_mu));
  EXPECT_TRUE(fs::exists(out / "metrics.json"));
  EXPECT_TRUE(fs::exists(out / "effective_config.json"));
}

TEST_F(Cli, InferAndSweep) {
  const fs::path out = root_ / "infer";
  EXPECT_EQ(run({"infer", "--config", config(), "--checkpoint", ckpt(), "--out", out.string()}), 0);
  EXPECT_TRUE(fs::exists(out / "test_0.hdr"));
  EXPECT_TRUE(fs::exists(out / "test_0_preview.png"));
  const fs::path sw = root_ / "sweep";
  EXPECT_EQ(run({"sweep-translation", "--config", config(), "--checkpoint", ckpt(), "--out",
                 sw.string(), "--delta-list", "0,2,4"}),
            0);
  EXPECT_EQ(slurp(sw / "translation_sweep.csv").substr(0, 14), "delta,psnr_mu\n");
}

TEST_F(Cli, MatchDebugMetadata) {
  const fs::path a = root_ / "md_a", b = root_ / "md_b";
  EXPECT_EQ(run({"match-debug", "--config", config(), "--scene", "test_0", "--out", a.string(),
                 "--no-ms-hdr"}),
            0);
  EXPECT_EQ(run({"match-debug", "--config", config(), "--scene", "test_0", "--out", b.string()}),
            0);
  const std::string unmasked = slurp(a / "test_0_matches.csv");
  const std::string masked = slurp(b / "test_0_matches.csv");
  EXPECT_NE(unmasked.find("# matching_domain=short_unmasked"), std::string::npos);
  EXPECT_NE(masked.find("# matching_domain=ms_hdr"), std::string::npos);
  EXPECT_TRUE(fs::exists(b / "test_0_ms_hdr.hdr"));
  EXPECT_NE(run({"match-debug", "--config", config(), "--out", a.string()}), 0);
}

TEST_F(Cli, Errors) {
  EXPECT_NE(run({"frobnicate"}), 0);
  EXPECT_NE(run({}), 0);
  std::ofstream(root_ / "bad.json") << R"({"network": {"bogus": 1}})";
  testing::internal::CaptureStderr();
  EXPECT_NE(run({"train", "--config", (root_ / "bad.json").string()}), 0);
  EXPECT_NE(testing::internal::GetCapturedStderr().find("network.bogus"), std::string::npos);

  std::ofstream(root_ / "vgg.json") << R"({"features": "backbone", "paths": {"manifest": ")" +
                                           (root_ / "data" / "manifest.txt").string() + R"("}})";
  testing::internal::CaptureStderr();
  EXPECT_NE(run({"train", "--config", (root_ / "vgg.json").string(), "--out",
                 (root_ / "vgg").string()}),
            0);
  EXPECT_NE(testing::internal::GetCapturedStderr().find("backbone"), std::string::npos);

  EXPECT_NE(run({"eval", "--config", config(), "--checkpoint", (root_ / "nope.apnt").string()}), 0);
  EXPECT_NE(run({"eval", "--config", config(), "--variants", "x"}), 0);
  EXPECT_NE(run({"sweep-translation", "--config", config(), "--checkpoint", ckpt(),
                 "--delta-list", "1,a"}),
            0);
}
