#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>
#include <json.hpp>

#include "curation_fixture.hpp"
#include "dscomp/cli.hpp"
#include "dscomp/image_io.hpp"

namespace fs = std::filesystem;
using namespace dscomp;

namespace {

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    root_ = fs::temp_directory_path() / ("dscomp_cli_" + std::to_string(::getpid()));
    fs::remove_all(root_);
    fs::create_directories(root_);
    ::setenv("DSCOMP_RUNS_ROOT", (root_ / "runs").c_str(), 1);
  }
  void TearDown() override { fs::remove_all(root_); }

  int run(std::vector<std::string> args) {
    args.insert(args.begin(), "dscomp");
    std::vector<char*> argv;
    for (auto& a : args) argv.push_back(a.data());
    return run_cli(static_cast<int>(argv.size()), argv.data());
  }
  fs::path runs() const { return root_ / "runs"; }

  fs::path root_;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<fs::path> listing(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) out.push_back(fs::relative(e.path(), dir));
  std::sort(out.begin(), out.end());
  return out;
}

int line_count(const fs::path& p) {
  std::ifstream in(p);
  int n = 0;
  for (std::string line; std::getline(in, line);) ++n;
  return n;
}

}  // namespace

TEST_F(Cli, GenIsByteIdenticalAcrossRuns) {
  ASSERT_EQ(run({"gen", "--count", "6", "--seed", "5", "--augment", "--name", "a"}), kExitOk);
  ASSERT_EQ(run({"gen", "--count", "6", "--seed", "5", "--augment", "--name", "b"}), kExitOk);
  const auto a = runs() / "a" / "dataset", b = runs() / "b" / "dataset";
  const auto files = listing(a);
  ASSERT_EQ(files, listing(b));
  EXPECT_GT(files.size(), 30u);
  for (const auto& f : files) {
    if (fs::is_directory(a / f)) continue;
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  }
  EXPECT_EQ(line_count(a / "augmented" / "augment.jsonl"), 6);
  EXPECT_FALSE(fs::exists(runs() / "a" / ".lock"));
  EXPECT_TRUE(fs::exists(runs() / "a" / "config.json"));
}

TEST_F(Cli, ConfigFileWithFlagOverride) {
  nlohmann::json cfg = {{"data", {{"seed", 9}, {"count", 3}}}};
  std::ofstream(root_ / "c.json") << cfg.dump();
  ASSERT_EQ(run({"gen", "--config", (root_ / "c.json").string(), "--count", "2", "--name", "c"}), kExitOk);
  EXPECT_EQ(line_count(runs() / "c" / "dataset" / "manifest.jsonl"), 2);
  const auto echoed = nlohmann::json::parse(slurp(runs() / "c" / "config.json"));
  EXPECT_EQ(echoed.at("data").at("seed").get<int>(), 9);
  EXPECT_EQ(echoed.at("data").at("count").get<int>(), 2);

  // The echoed config replays into a new run with the same data.
  ASSERT_EQ(run({"gen", "--config", (runs() / "c" / "config.json").string(), "--name", "replay"}), kExitOk);
  EXPECT_EQ(slurp(runs() / "c" / "dataset" / "manifest.jsonl"), slurp(runs() / "replay" / "dataset" / "manifest.jsonl"));
}

TEST_F(Cli, ExitCodes) {
  EXPECT_EQ(run({}), kExitUsage);
  EXPECT_EQ(run({"bogus"}), kExitUsage);
  EXPECT_EQ(run({"gen", "--count", "nope"}), kExitUsage);
  EXPECT_EQ(run({"--help"}), kExitOk);
  ASSERT_EQ(run({"gen", "--count", "1", "--name", "dup"}), kExitOk);
  EXPECT_EQ(run({"gen", "--count", "1", "--name", "dup"}), kExitUsage);
  // Contradictory configs.
  EXPECT_EQ(run({"train", "--backbone", "dit", "--patch", "3", "--steps", "1"}), kExitUsage);
  EXPECT_EQ(run({"train", "--variant", "triple", "--steps", "1"}), kExitUsage);
  EXPECT_EQ(run({"train", "--data", (runs() / "dup" / "dataset").string(), "--image-size", "48", "--steps", "1"}),
            kExitUsage);
  // Data errors.
  EXPECT_EQ(run({"train", "--data", (root_ / "absent").string(), "--steps", "1"}), kExitData);
  std::ofstream(root_ / "junk.ckpt") << "not a checkpoint";
  EXPECT_EQ(run({"sample", "--checkpoint", (root_ / "junk.ckpt").string()}), kExitData);
  fs::create_directories(root_ / "out");
  fs::create_directories(root_ / "gt");
  Tensor32 img({3, 4, 4});
  img.fill(3);
  write_ppm(root_ / "out" / "x_out.ppm", img);
  EXPECT_EQ(run({"metrics", "--outputs", (root_ / "out").string(), "--gt", (root_ / "gt").string()}), kExitData);
  // Divergent training.
  EXPECT_EQ(run({"train", "--image-size", "16", "--depth", "2", "--count", "2", "--lr", "1e30", "--steps", "5"}),
            kExitNumerical);
}

TEST_F(Cli, TrainSampleConlabAndMetrics) {
  ASSERT_EQ(run({"train", "--image-size", "16", "--depth", "2", "--count", "4", "--steps", "3", "--name", "t"}),
            kExitOk);
  const auto ckpt = (runs() / "t" / "model.ckpt").string();
  EXPECT_EQ(line_count(runs() / "t" / "loss.csv"), 4);

  ASSERT_EQ(run({"sample", "--checkpoint", ckpt, "--count", "4", "--samples", "2",
                 "--sample-steps", "4", "--name", "s"}),
            kExitOk);
  EXPECT_EQ(line_count(runs() / "s" / "samples.csv"), 3);
  const auto samples = slurp(runs() / "s" / "samples.csv");
  EXPECT_EQ(samples.find(",0,"), std::string::npos) << samples;

  const auto dir = (runs() / "s" / "samples").string();
  ASSERT_EQ(run({"metrics", "--outputs", dir, "--gt", dir, "--name", "m"}), kExitOk);
  EXPECT_EQ(line_count(runs() / "m" / "metrics.csv"), 4);

  // A missing comparison checkpoint is reported and its curve left out.
  ASSERT_EQ(run({"conlab", "--checkpoint", ckpt, "--frozen", (root_ / "absent.ckpt").string(), "--image-size", "16",
                 "--count", "4", "--draws", "3", "--name", "c"}),
            kExitOk);
  const auto report = nlohmann::json::parse(slurp(runs() / "c" / "report.json"));
  EXPECT_EQ(report.at("l2").size(), 1u);
}

TEST_F(Cli, AblateWritesOneRowPerLayerAndVariant) {
  ASSERT_EQ(run({"ablate", "--image-size", "16", "--depth", "2", "--count", "4", "--steps", "2", "--draws", "2",
                 "--name", "a"}),
            kExitOk);
  // Two interaction blocks: one encoder layer and one decoder layer.
  EXPECT_EQ(line_count(runs() / "a" / "l2_profile.csv"), 1 + 3 * 2);
  for (const char* v : {"shared", "dual_frozen", "dual_trainable"})
    EXPECT_TRUE(fs::exists(runs() / "a" / (std::string(v) + ".ckpt"))) << v;
}

TEST_F(Cli, CurateReproducesScriptedManifest) {
  // Record the scripted oracle's answers in a frame index, then curate from disk.
  const auto frames_dir = root_ / "frames";
  fs::create_directories(frames_dir);
  const auto script = dscomp::testing::ten_frame_script();
  const auto hooks = script.hooks();
  std::ofstream index(frames_dir / "frames.jsonl");
  for (auto& f : dscomp::testing::ten_frames()) {
    Tensor32 rgb({3, 16, 16});
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) rgb.at(c, y, x) = f.image.at(0, y, x);
    write_ppm(frames_dir / f.image_path, rgb);
    nlohmann::json dets = nlohmann::json::array();
    for (const auto& d : hooks.detect(f)) {
      write_mask(frames_dir / d.mask_path, d.mask);
      ObjectCrop crop{&f, &d, {}};
      nlohmann::json det;
      det["label"] = d.label;
      det["box"] = std::vector<int>{d.box.x0, d.box.y0, d.box.x1, d.box.y1};
      det["mask"] = d.mask_path;
      det["embedding"] = hooks.embed(crop);
      det["verified"] = static_cast<bool>(hooks.verify(crop));
      dets.push_back(det);
    }
    nlohmann::json record;
    record["source"] = f.source;
    record["frame"] = f.index;
    record["image"] = f.image_path;
    record["detections"] = dets;
    index << record.dump() << '\n';
  }
  index.close();
  ASSERT_EQ(run({"curate", "--frames", frames_dir.string(), "--name", "cur"}), kExitOk);
  EXPECT_EQ(slurp(runs() / "cur" / "pairs.jsonl"), dscomp::testing::expected_ten_frame_manifest());
  const auto stats = nlohmann::json::parse(slurp(runs() / "cur" / "curation_stats.json"));
  EXPECT_EQ(stats.at("pairs").get<int>(), 5);
  EXPECT_EQ(stats.at("blurry").get<int>(), 2);
  EXPECT_EQ(stats.at("rejected_by_verifier").get<int>(), 1);
  EXPECT_EQ(stats.at("rejected_by_mask").get<int>(), 1);
}
