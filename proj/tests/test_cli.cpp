#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code = -1;
  std::string out;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("napg_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  CliResult run(const std::string& args) const {
    const fs::path out = dir_ / "stdout.txt";
    const std::string cmd = std::string("NAPG_LOG_LEVEL=error \"") + NAPG_CLI_PATH + "\" " + args + " > \"" + out.string() + "\" 2> \"" +
                            (dir_ / "stderr.txt").string() + "\"";
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out)};
  }

  fs::path write(const std::string& name, const std::string& text) const {
    const fs::path p = dir_ / name;
    std::ofstream(p, std::ios::binary) << text;
    return p;
  }

  /// Tiny dataset under dir_/data.
  void make_data(const std::string& extra = "") const {
    const auto spec = write("spec.json", R"({"n_train": 24, "n_dev": 8, "n_test": 8, "numbers_per_context": [3, 4])" + extra + "}");
    ASSERT_EQ(run("gen-data --config " + spec.string() + " --out " + (dir_ / "data").string()).code, 0);
  }

  fs::path train_config(const std::string& model) const {
    nlohmann::json c = {{"model", model},
                        {"encoder", {{"d_model", 8}, {"layers", 1}, {"heads", 2}, {"ffn_dim", 16}}},
                        {"napg", {{"hidden", 8}}},
                        {"epochs", 1},
                        {"batch_size", 4},
                        {"paths", {{"train", (dir_ / "data/train.jsonl").string()}, {"dev", (dir_ / "data/dev.jsonl").string()}}}};
    return write(model + ".json", c.dump());
  }

  fs::path dir_;
};

}  // namespace

TEST_F(Cli, ExecPrintsAnswers) {
  CliResult r = run("exec \"subtract(19520,21579), divide(#0,21579)\"");
  EXPECT_EQ(r.code, 0);
  EXPECT_EQ(r.out, "-0.09542\n");
  r = run("exec \"greater(1,2)\"");
  EXPECT_EQ(r.code, 0);
  EXPECT_EQ(r.out, "no\n");
}

TEST_F(Cli, ExecErrors) {
  EXPECT_EQ(run("exec \"add(1,)\"").code, 2);
  EXPECT_EQ(run("exec \"divide(1,const_0)\"").code, 1);
}

TEST_F(Cli, UsageErrors) {
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("frobnicate").code, 2);
  EXPECT_EQ(run("gen-data --no-such-flag").code, 2);
  EXPECT_EQ(run("train").code, 2);
  EXPECT_EQ(run("--help").code, 0);
}

TEST_F(Cli, GenDataWritesSplitsAndRejectsBadSpecs) {
  make_data();
  for (const char* f : {"train.jsonl", "dev.jsonl", "test.jsonl", "spec.json"}) EXPECT_TRUE(fs::exists(dir_ / "data" / f)) << f;
  const auto bad = write("bad.json", "{ not json");
  EXPECT_EQ(run("gen-data --config " + bad.string() + " --out " + (dir_ / "x").string()).code, 2);
  const auto unknown = write("unknown.json", R"({"n_trian": 3})");
  EXPECT_EQ(run("gen-data --config " + unknown.string() + " --out " + (dir_ / "x").string()).code, 2);
  const auto probs = write("probs.json", R"({"step_distribution": {"1": 0.5, "2": 0.2}})");
  EXPECT_EQ(run("gen-data --config " + probs.string() + " --out " + (dir_ / "x").string()).code, 2);
}

TEST_F(Cli, SeedFlagOverridesSpecSeed) {
  const auto spec1 = write("s1.json", R"({"n_train": 20, "n_dev": 2, "n_test": 2, "seed": 1})");
  const auto spec9 = write("s9.json", R"({"n_train": 20, "n_dev": 2, "n_test": 2, "seed": 9})");
  ASSERT_EQ(run("gen-data --config " + spec1.string() + " --seed 9 --out " + (dir_ / "a").string()).code, 0);
  ASSERT_EQ(run("gen-data --config " + spec9.string() + " --out " + (dir_ / "b").string()).code, 0);
  ASSERT_EQ(run("gen-data --config " + spec1.string() + " --out " + (dir_ / "c").string()).code, 0);
  EXPECT_EQ(slurp(dir_ / "a/train.jsonl"), slurp(dir_ / "b/train.jsonl"));
  EXPECT_NE(slurp(dir_ / "a/train.jsonl"), slurp(dir_ / "c/train.jsonl"));
}

TEST_F(Cli, EvalGoldIsPerfect) {
  make_data(R"(, "span_fraction": 0.25)");
  const CliResult r = run("eval --gold --data " + (dir_ / "data/dev.jsonl").string());
  ASSERT_EQ(r.code, 0);
  const auto j = nlohmann::json::parse(r.out);
  for (const char* k : {"exe_acc", "prog_acc", "em", "f1"}) EXPECT_EQ(j.at(k).get<double>(), 1.0) << k;
  for (const char* b : {"1", "2", "3", ">3", "span"}) EXPECT_TRUE(j.at("per_step_buckets").contains(b)) << b;
}

TEST_F(Cli, TrainEvalBench) {
  make_data();
  const CliResult t1 = run("train --config " + train_config("napg").string() + " --out " + (dir_ / "napg").string());
  ASSERT_EQ(t1.code, 0) << slurp(dir_ / "stderr.txt");
  const CliResult t2 = run("train --config " + train_config("ar").string() + " --out " + (dir_ / "ar").string());
  ASSERT_EQ(t2.code, 0) << slurp(dir_ / "stderr.txt");
  EXPECT_TRUE(nlohmann::json::parse(t1.out).contains("best_dev"));

  // Same config and seed: identical dev metrics.
  const CliResult again = run("train --config " + train_config("napg").string() + " --out " + (dir_ / "napg2").string());
  EXPECT_EQ(nlohmann::json::parse(again.out).at("best_dev"), nlohmann::json::parse(t1.out).at("best_dev"));

  const CliResult ev = run("eval --checkpoint " + (dir_ / "napg/best.ckpt.json").string() + " --data " + (dir_ / "data/test.jsonl").string() +
                     " --out " + (dir_ / "report.json").string());
  ASSERT_EQ(ev.code, 0);
  EXPECT_TRUE(nlohmann::json::parse(slurp(dir_ / "report.json")).contains("per_step_buckets"));

  const CliResult b = run("bench --napg " + (dir_ / "napg/best.ckpt.json").string() + " --ar " + (dir_ / "ar/best.ckpt.json").string() +
                    " --data " + (dir_ / "data/test.jsonl").string() + " --repeats 1 --warmup 1");
  ASSERT_EQ(b.code, 0) << slurp(dir_ / "stderr.txt");
  const auto j = nlohmann::json::parse(b.out);
  EXPECT_GT(j.at("speedup").get<double>(), 0.0);
  EXPECT_EQ(j.at("napg").at("decoder"), "napg");

  // Swapped roles and missing files are configuration errors.
  EXPECT_EQ(run("bench --napg " + (dir_ / "ar/best.ckpt.json").string() + " --ar " + (dir_ / "ar/best.ckpt.json").string() +
                " --data " + (dir_ / "data/test.jsonl").string())
                .code,
            2);
  EXPECT_EQ(run("eval --checkpoint " + (dir_ / "nope.json").string() + " --data " + (dir_ / "data/test.jsonl").string()).code, 2);
}
