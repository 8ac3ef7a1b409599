#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "commands.hpp"

using namespace introvae;
namespace fs = std::filesystem;

namespace {

int run(std::vector<std::string> args) {
  args.insert(args.begin(), "introvae");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return cli::run_cli(int(argv.size()), argv.data());
}

fs::path scratch(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("introvae_cli_" + name);
  fs::remove_all(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> small_run(const fs::path& out) {
  return {"--resolution", "16", "--synthetic-images", "40", "--batch-size", "8", "--epochs-pretrain", "1",
          "--epochs-adv", "1", "--steps", "6", "--seed", "3", "--out", out.string(), "--sample-every", "0"};
}

// Trains once and shares the checkpoint across the tests that need a model.
const fs::path& trained_model() {
  static const fs::path ckpt = [] {
    const auto out = scratch("model");
    auto args = small_run(out);
    args.insert(args.begin(), "train");
    if (run(args) != 0) throw std::runtime_error("training failed");
    return out / "checkpoint_final.ckpt";
  }();
  return ckpt;
}

int count_files(const fs::path& dir, const std::string& prefix) {
  int n = 0;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().filename().string().rfind(prefix, 0) == 0) ++n;
  return n;
}

}  // namespace

TEST(Cli, ConfigErrorsExitOne) {
  EXPECT_EQ(run({"train", "--margin", "abc", "--out", scratch("e1").string()}), 1);
  EXPECT_EQ(run({"train", "--no-such-flag", "1"}), 1);
  EXPECT_EQ(run({}), 1);
  const auto dir = scratch("e2");
  fs::create_directories(dir);
  std::ofstream(dir / "bad.cfg") << "margin = 3\nlearning_rate = 1\n";
  EXPECT_EQ(run({"train", "--config", (dir / "bad.cfg").string(), "--out", (dir / "o").string()}), 1);
  EXPECT_EQ(run({"verify-theory", "--m", "0", "--out", scratch("e3").string()}), 1);
}

TEST(Cli, CheckpointErrors) {
  EXPECT_EQ(run({"sample", "--checkpoint", "/nonexistent/model.ckpt", "--out", scratch("e4").string()}), 1);
  const auto dir = scratch("e5");
  fs::create_directories(dir);
  std::ofstream(dir / "corrupt.ckpt") << "not a checkpoint";
  EXPECT_EQ(run({"sample", "--checkpoint", (dir / "corrupt.ckpt").string(), "--out", (dir / "o").string()}), 2);
}

TEST(Cli, TrainEchoesConfigAndWritesArtifacts) {
  const auto ckpt = trained_model();
  const auto dir = ckpt.parent_path();
  EXPECT_TRUE(fs::exists(ckpt));
  EXPECT_TRUE(fs::exists(dir / "train_log.csv"));
  EXPECT_TRUE(fs::exists(dir / "samples_final.png"));
  const auto echoed = resolve_config(read_config_file(dir / "effective_config.txt"), {});
  EXPECT_EQ(echoed.net.resolution, 16);
  EXPECT_EQ(echoed.steps, 6);
  EXPECT_EQ(echoed.seed, 3u);
}

TEST(Cli, SampleWritesRequestedCountDeterministically) {
  const auto a = scratch("sa"), b = scratch("sb");
  const auto ck = trained_model().string();
  ASSERT_EQ(run({"sample", "--checkpoint", ck, "--n-samples", "5", "--seed", "2", "--out", a.string()}), 0);
  ASSERT_EQ(run({"sample", "--checkpoint", ck, "--n-samples", "5", "--seed", "2", "--out", b.string()}), 0);
  EXPECT_EQ(count_files(a, "sample_"), 5);
  for (int i = 0; i < 5; ++i) {
    const auto name = cli::indexed("sample_", i);
    EXPECT_EQ(read_image(a / name).pixels, read_image(b / name).pixels);
  }
}

TEST(Cli, ReconstructReportsRecomputableRmse) {
  const auto in = scratch("rin"), out = scratch("rout");
  fs::create_directories(in);
  SyntheticSpec spec;
  spec.n_images = 3;
  spec.resolution = 16;
  spec.seed = 77;
  const auto ds = generate_synthetic(spec);
  for (int i = 0; i < 3; ++i) write_png(in / cli::indexed("img_", i), from_planar<float>(ds.image(i), 3, 16, 16));
  ASSERT_EQ(run({"reconstruct", "--checkpoint", trained_model().string(), "--input", in.string(), "--out",
                 out.string()}),
            0);
  const auto st = from_checkpoint<float>(load_checkpoint(trained_model()));
  const auto x = load_folder(in, 16).all<float>();
  const auto xr = cli::reconstruct_all(st, x);
  const auto report = slurp(out / "reconstruct_metrics.csv");
  std::istringstream lines(report);
  std::string header, row;
  std::getline(lines, header);
  std::getline(lines, row);
  const auto value_col = [&] {
    std::istringstream h(header);
    std::string f;
    int i = 0;
    while (std::getline(h, f, ',')) {
      if (f == "value") return i;
      ++i;
    }
    return -1;
  }();
  ASSERT_GE(value_col, 0);
  std::istringstream r(row);
  std::string f;
  for (int i = 0; i <= value_col; ++i) std::getline(r, f, ',');
  EXPECT_NEAR(std::stod(f), rmse(x, xr), 1e-9);
  EXPECT_EQ(count_files(out, "reconstruction_"), 3);
}

TEST(Cli, InterpolateWritesEndpointsIncludedFrames) {
  const auto dir = scratch("interp");
  fs::create_directories(dir);
  SyntheticSpec spec;
  spec.n_images = 2;
  spec.resolution = 16;
  const auto ds = generate_synthetic(spec);
  write_png(dir / "a.png", from_planar<float>(ds.image(0), 3, 16, 16));
  write_png(dir / "b.png", from_planar<float>(ds.image(1), 3, 16, 16));
  ASSERT_EQ(run({"interpolate", "--checkpoint", trained_model().string(), "--image-a", (dir / "a.png").string(),
                 "--image-b", (dir / "b.png").string(), "--interp-steps", "5", "--out", (dir / "o").string()}),
            0);
  EXPECT_EQ(count_files(dir / "o", "frame_"), 5);
}

TEST(Cli, EvalWritesReportRows) {
  const auto out = scratch("eval");
  ASSERT_EQ(run({"eval", "--checkpoint", trained_model().string(), "--resolution", "16", "--synthetic-images", "40",
                 "--seed", "3", "--eval-samples", "20", "--n-pairs", "50", "--metrics", "pair_diversity,rmse,frechet",
                 "--out", out.string()}),
            0);
  const auto report = slurp(out / "eval_report.csv");
  EXPECT_NE(report.find("pair_diversity"), std::string::npos);
  EXPECT_NE(report.find("rmse"), std::string::npos);
  EXPECT_NE(report.find("frechet"), std::string::npos);
  EXPECT_EQ(run({"eval", "--checkpoint", trained_model().string(), "--resolution", "16", "--metrics", "fid",
                 "--out", out.string()}),
            1);
}

TEST(Cli, SweepTabulatesEveryCell) {
  const auto out = scratch("sweep");
  auto args = small_run(out);
  args.insert(args.begin(), "sweep");
  for (const auto& a : {"--sweep-margins", "5,10", "--sweep-betas", "0.5,1", "--eval-samples", "8", "--n-pairs", "10"})
    args.push_back(a);
  ASSERT_EQ(run(args), 0);
  std::istringstream table(slurp(out / "sweep.csv"));
  std::string line;
  int rows = -1;
  while (std::getline(table, line))
    if (!line.empty()) ++rows;
  EXPECT_EQ(rows, 4);
}

TEST(Cli, VerifyTheoryPasses) {
  const auto out = scratch("theory");
  EXPECT_EQ(run({"verify-theory", "--theory-games", "20", "--m", "3", "--out", out.string()}), 0);
  EXPECT_NE(slurp(out / "verify_theory.txt").find("PASS"), std::string::npos);
}
