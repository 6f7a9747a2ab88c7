// End-to-end checks of the egl binary: outputs and exit codes.

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <gtest/gtest.h>

#include "support.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path& workdir() {
  static const fs::path dir = egl::testing::scratch_dir("cli");
  return dir;
}

int run(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + " " + EGL_CLI_PATH + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path write_config(const std::string& name, const std::string& body) {
  const fs::path p = workdir() / name;
  std::ofstream(p) << body;
  return p;
}

const char* kSmall =
    R"({"data": {"n_train": 120, "n_val": 60, "n_test_id": 80, "n_test_ood": 80, "image_size": 16, "seed": 4},
        "model": {"image_size": 16, "embed_dim": 8},
        "train": {"max_epochs": 2, "patience": 2}, "levels": [0, 100]})";

void expect_standard_outputs(const fs::path& dir) {
  for (const char* f : {"config_echo.json", "report.json", "report.csv"}) {
    EXPECT_TRUE(fs::exists(dir / f)) << (dir / f);
  }
}

}  // namespace

TEST(Cli, HappyPathWritesStandardOutputs) {
  const fs::path cfg = write_config("small.json", kSmall);
  const fs::path d = workdir();
  ASSERT_EQ(run("generate --config " + cfg.string() + " --out " + (d / "data").string()), 0);
  expect_standard_outputs(d / "data");
  ASSERT_EQ(run("train --config " + cfg.string() + " --data " + (d / "data").string() +
                " --level 50 --mode human --seed 3 --out " + (d / "train").string()),
            0);
  expect_standard_outputs(d / "train");
  EXPECT_TRUE(fs::exists(d / "train" / "model.ckpt"));
  ASSERT_EQ(run("evaluate --model " + (d / "train" / "model.ckpt").string() + " --data " + (d / "data").string() +
                " --split ood --group age --out " + (d / "eval" / "report.json").string()),
            0);
  expect_standard_outputs(d / "eval");
  ASSERT_EQ(run("sweep --kind ratio --config " + cfg.string() + " --data " + (d / "data").string() +
                    " --seeds 1,2 --out " + (d / "ratio").string(),
                "EGL_WORKERS=2"),
            0);
  expect_standard_outputs(d / "ratio");
  ASSERT_EQ(run("ablate --config " + cfg.string() + " --seeds 1,2 --out " + (d / "ablate").string()), 0);
  expect_standard_outputs(d / "ablate");
}

TEST(Cli, ConfigErrorsExitTwo) {
  const fs::path d = workdir();
  EXPECT_EQ(run("generate"), 2);
  EXPECT_EQ(run("frobnicate --out x"), 2);
  EXPECT_EQ(run("generate --config " + write_config("bad.json", "{\"data\": {\"n_trian\": 3}}").string() +
                " --out " + (d / "x").string()),
            2);
  EXPECT_EQ(run("generate --config " + write_config("broken.json", "{").string() + " --out " + (d / "x").string()),
            2);
  EXPECT_EQ(run("generate --config " + (d / "absent.json").string() + " --out " + (d / "x").string()), 2);
  EXPECT_EQ(run("sweep --kind alignment --config " + write_config("s.json", kSmall).string() + " --seeds 1 --out " +
                (d / "x").string()),
            2);
  EXPECT_EQ(run("sweep --kind alignment --config " + write_config("s.json", kSmall).string() + " --out " +
                    (d / "x").string(),
                "EGL_WORKERS=none"),
            2);
}

TEST(Cli, DataFormatErrorsExitThree) {
  const fs::path cfg = write_config("small.json", kSmall);
  const fs::path data = workdir() / "corrupt";
  ASSERT_EQ(run("generate --config " + cfg.string() + " --out " + data.string()), 0);
  fs::resize_file(data / "payload.bin", fs::file_size(data / "payload.bin") - 1);
  EXPECT_EQ(run("train --config " + cfg.string() + " --data " + data.string() + " --out " +
                (workdir() / "x").string()),
            3);
  EXPECT_EQ(run("train --config " + cfg.string() + " --data " + (workdir() / "nowhere").string() + " --out " +
                (workdir() / "x").string()),
            3);
}

TEST(Cli, DivergenceExitsFour) {
  const fs::path cfg = write_config("diverge.json", R"({"data": {"n_train": 60, "n_val": 30, "n_test_id": 40,
      "n_test_ood": 40, "image_size": 16}, "model": {"image_size": 16, "embed_dim": 8},
      "train": {"learning_rate": 1e200, "max_epochs": 3, "patience": 3}})");
  const fs::path data = workdir() / "diverge-data";
  ASSERT_EQ(run("generate --config " + cfg.string() + " --out " + data.string()), 0);
  EXPECT_EQ(run("train --config " + cfg.string() + " --data " + data.string() + " --out " +
                (workdir() / "x").string()),
            4);
}

TEST(Cli, UndefinedMetricExitsFive) {
  // Only one sex present: the sex-grouped AUC gap is undefined.
  const fs::path cfg = write_config("onesex.json", R"({"data": {"n_train": 60, "n_val": 30, "n_test_id": 40,
      "n_test_ood": 40, "image_size": 16, "subgroup_mix": [0.5, 0.5, 0.0, 0.0]},
      "model": {"image_size": 16, "embed_dim": 8}, "train": {"max_epochs": 1, "patience": 1}})");
  const fs::path data = workdir() / "onesex-data";
  ASSERT_EQ(run("generate --config " + cfg.string() + " --out " + data.string()), 0);
  EXPECT_EQ(run("train --config " + cfg.string() + " --data " + data.string() + " --out " +
                (workdir() / "x").string()),
            5);
}
