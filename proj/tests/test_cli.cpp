#include "linerf/linerf.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sys/wait.h>

using namespace linerf;
using namespace linerf::test;
namespace fs = std::filesystem;

namespace {

// Runs the CLI with stdout/stderr captured to `log`; returns the exit code.
int cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(LINERF_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

void write_text_file(const fs::path& p, const std::string& s) {
  std::ofstream os(p, std::ios::binary);
  os << s;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

}  // namespace

TEST(Cli, GenDataContract) {
  const auto dir = scratch_dir("cli_gen");
  ASSERT_EQ(cli("gen-data --scene glossy --views 40 --res 64 --seed 7 --out " + q(dir / "a"), dir / "log"), 0)
      << slurp(dir / "log");
  EXPECT_TRUE(fs::exists(dir / "a" / "transforms_train.json"));
  EXPECT_TRUE(fs::exists(dir / "a" / "transforms_test.json"));
  std::size_t frames = 0;
  for (const auto& e : fs::directory_iterator(dir / "a" / "train")) frames += e.path().extension() == ".ppm";
  EXPECT_EQ(frames, 40u);
  const auto j = nlohmann::json::parse(slurp(dir / "a" / "transforms_train.json"));
  EXPECT_EQ(j["frames"].size(), 40u);
  const Image img = read_image((dir / "a" / "train" / "r_000.ppm").string());
  EXPECT_EQ(img.width, 64);

  ASSERT_EQ(cli("gen-data --scene glossy --views 40 --res 64 --seed 7 --out " + q(dir / "b"), dir / "log"), 0);
  EXPECT_TRUE(same_tree(dir / "a", dir / "b"));
}

TEST(Cli, ZeroViewsIsUsageError) {
  const auto dir = scratch_dir("cli_zero");
  const int code = cli("gen-data --scene matte --views 0 --out " + q(dir / "d"), dir / "log");
  EXPECT_EQ(code, 2);
  EXPECT_NE(slurp(dir / "log").find("--views"), std::string::npos);
}

TEST(Cli, UnknownConfigKeyNamed) {
  const auto dir = scratch_dir("cli_badkey");
  ASSERT_EQ(cli("gen-data --scene matte --views 2 --test-views 1 --res 8 --out " + q(dir / "data"), dir / "log"), 0);
  write_text_file(dir / "run.json", R"({"preset": "grid", "data": "data", "out": "run", "train": {"iterations": 1, "learning_rate": 1}})");
  EXPECT_EQ(cli("train --config " + q(dir / "run.json"), dir / "log"), 2);
  EXPECT_NE(slurp(dir / "log").find("learning_rate"), std::string::npos);
  write_text_file(dir / "run.json", R"({"preset": "grid", "data": "data", "out": "run", "model": {"trunk_dpth": 3}})");
  EXPECT_EQ(cli("train --config " + q(dir / "run.json"), dir / "log"), 2);
  EXPECT_NE(slurp(dir / "log").find("trunk_dpth"), std::string::npos);
  write_text_file(dir / "run.json", R"({"preset": "grid", "data": "missing", "out": "run"})");
  EXPECT_EQ(cli("train --config " + q(dir / "run.json"), dir / "log"), 2);
  EXPECT_FALSE(fs::exists(dir / "run"));
}

TEST(Cli, RenderEmptyFieldIsBackground) {
  const auto dir = scratch_dir("cli_empty");
  FieldConfig cfg = small_grid();
  cfg.background.color = Vec3d(0.2, 0.4, 0.6);
  auto model = FieldModel<double>::create(cfg, 3);
  auto& last = model.density_head.layers.back();
  last.weight.setZero();
  last.bias.setConstant(-800.0);  // softplus underflows to exactly zero density
  save_model((dir / "empty.lnrf").string(), model, {{"renderer", "linerf"}});
  for (const char* r : {"classic", "linerf", "split:0"}) {
    const fs::path out = dir / (std::string(r[0] == 's' ? "split" : r) + ".ppm");
    ASSERT_EQ(cli("render --ckpt " + q(dir / "empty.lnrf") + " --renderer " + r + " --res 16 --out " + q(out), dir / "log"), 0)
        << slurp(dir / "log");
    const std::string bytes = slurp(out);
    const std::string header = "P6\n16 16\n255\n";
    ASSERT_EQ(bytes.substr(0, header.size()), header);
    for (std::size_t i = header.size(); i < bytes.size(); i += 3) {
      ASSERT_EQ(static_cast<unsigned char>(bytes[i]), linear_to_byte(0.2));
      ASSERT_EQ(static_cast<unsigned char>(bytes[i + 1]), linear_to_byte(0.4));
      ASSERT_EQ(static_cast<unsigned char>(bytes[i + 2]), linear_to_byte(0.6));
    }
  }
}

TEST(Cli, TrainEvalVerifyPipeline) {
  const auto dir = scratch_dir("cli_pipeline");
  ASSERT_EQ(cli("gen-data --scene matte --views 3 --test-views 2 --res 16 --seed 1 --out " + q(dir / "data"), dir / "log"), 0);
  write_text_file(dir / "run.json", R"({
    "preset": "grid",
    "model": {"position": {"num_levels": 2}, "trunk_width": 8, "feature_dim": 6, "color_hidden": [8]},
    "train": {"renderer": "linerf", "iterations": 4, "batch_size": 32, "samples_per_ray": 8, "seed": 2},
    "data": "data", "out": "run", "threads": 1})");
  const fs::path data_copy = dir / "data_before";
  fs::copy(dir / "data", data_copy, fs::copy_options::recursive);
  ASSERT_EQ(cli("train --config " + q(dir / "run.json"), dir / "log"), 0) << slurp(dir / "log");
  for (const char* f : {"model.lnrf", "checkpoint.lnrf", "loss.csv", "eval.csv", "resolved_config.json"})
    EXPECT_TRUE(fs::exists(dir / "run" / f)) << f;
  EXPECT_TRUE(same_tree(dir / "data", data_copy));
  const std::string first = slurp(dir / "run" / "model.lnrf");
  ASSERT_EQ(cli("train --config " + q(dir / "run.json"), dir / "log"), 0);
  EXPECT_EQ(slurp(dir / "run" / "model.lnrf"), first);

  const fs::path ckpt = dir / "run" / "model.lnrf";
  ASSERT_EQ(cli("eval --ckpt " + q(ckpt) + " --data " + q(dir / "data") + " --out " + q(dir / "ev"), dir / "log"), 0)
      << slurp(dir / "log");
  EXPECT_TRUE(fs::exists(dir / "ev" / "eval.csv"));
  EXPECT_TRUE(fs::exists(dir / "ev" / "renders" / "r_001.ppm"));
  EXPECT_EQ(cli("verify --mode equivalence --rays 20 --ckpt " + q(ckpt) + " --data " + q(dir / "data") + " --out " +
                    q(dir / "eq"),
                dir / "log"),
            0)
      << slurp(dir / "log");
  EXPECT_EQ(cli("verify --mode bounds --rays 8 --samples 16 --ckpt " + q(ckpt) + " --data " + q(dir / "data") +
                    " --out " + q(dir / "bd"),
                dir / "log"),
            0)
      << slurp(dir / "log");
  EXPECT_TRUE(fs::exists(dir / "bd" / "bounds.csv"));
  EXPECT_TRUE(fs::exists(dir / "bd" / "bounds_summary.txt"));
}

TEST(Cli, SampleConfigsParse) {
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(LINERF_CONFIG_DIR)) {
    if (e.path().extension() != ".json") continue;
    ++n;
    EXPECT_NO_THROW(load_run_config(e.path(), false)) << e.path();
  }
  EXPECT_GT(n, 0u);
}
