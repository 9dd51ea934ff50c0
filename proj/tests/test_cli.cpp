// Drives the installed command-line tool end to end.

#include "gfnal/csv.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

namespace fs = std::filesystem;

namespace {

const char* kTinyConfig = R"([pipeline]
preset = "desk"
seed = 2
al_iterations = 2
acquisition_size = 5
initial_size = 20
test_size = 20

[oracle]
grid_size = 12

[posenc]
dim = 8
base = 100.0

[autoencoder]
hidden = 16
layers = 2
latent = 4
epochs = 2
batch_size = 64
positive_radius = 1
negative_min_distance = 5

[surrogate]
hidden = 16
epochs = 3

[policy]
hidden = 8
layers = 1
heads = 2
ff_dim = 16

[gfn]
episodes = 30
snapshot_episodes = [10, 30]
density_window = 10

[mask]
min_length = 2
max_length = 16
)";

struct CliResult {
  int code = -1;
  std::string out;
};

class Cli : public ::testing::Test {
 protected:
  fs::path dir;
  fs::path config;

  void SetUp() override {
    dir = fs::temp_directory_path() / (std::string("gfnal_cli_") + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir);
    fs::create_directories(dir);
    config = dir / "tiny.toml";
    std::ofstream(config) << kTinyConfig;
  }
  void TearDown() override { fs::remove_all(dir); }

  CliResult run(const std::string& args) const {
    const fs::path out = dir / "stdout.txt";
    const std::string cmd = std::string("env -u GFNACT_SEED ") + GFNAL_CLI_PATH + " " + args + " > " + out.string() + " 2> " +
                            (dir / "stderr.txt").string();
    const int status = std::system(cmd.c_str());
    CliResult r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    std::ifstream in(out);
    std::ostringstream ss;
    ss << in.rdbuf();
    r.out = ss.str();
    return r;
  }

  std::string slurp(const fs::path& p) const {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }

  std::string common(const std::string& out) const { return "-c " + config.string() + " -o " + (dir / out).string(); }
};

TEST_F(Cli, RunTwiceGivesIdenticalRecords) {
  const auto a = run("run " + common("a") + " -s pipeline.strategy=gflownet");
  const auto b = run("run " + common("b") + " -s pipeline.strategy=gflownet");
  ASSERT_EQ(a.code, 0) << slurp(dir / "stderr.txt");
  ASSERT_EQ(b.code, 0);
  EXPECT_EQ(a.out, b.out);
  EXPECT_NE(a.out.find("train_size=30"), std::string::npos) << a.out;
  EXPECT_EQ(slurp(dir / "a" / "records.csv"), slurp(dir / "b" / "records.csv"));
}

TEST_F(Cli, RandomReportsZeroCalls) {
  const auto r = run("run " + common("r") + " --set pipeline.strategy=random");
  ASSERT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("calls=0"), std::string::npos) << r.out;
}

TEST_F(Cli, ResumeContinuesFromCheckpoint) {
  const auto fail = run("run " + common("p") + " -s pipeline.strategy=bald -s debug.fail_at_iteration=2");
  EXPECT_EQ(fail.code, 2);
  EXPECT_NE(slurp(dir / "stderr.txt").find("checkpoint_1"), std::string::npos);
  const auto ok = run("run " + common("p") + " -s pipeline.strategy=bald --resume " + (dir / "p" / "checkpoint_1").string());
  ASSERT_EQ(ok.code, 0) << slurp(dir / "stderr.txt");
  const auto full = run("run " + common("f") + " -s pipeline.strategy=bald");
  EXPECT_EQ(slurp(dir / "p" / "records.csv"), slurp(dir / "f" / "records.csv"));
}

TEST_F(Cli, ConfigErrorsExitWithOne) {
  EXPECT_EQ(run("run -c " + (dir / "missing.toml").string() + " -o " + (dir / "x").string()).code, 1);
  EXPECT_EQ(run("run " + common("x") + " -s gfn.no_such_key=1").code, 1);
  EXPECT_NE(slurp(dir / "stderr.txt").find("gfn.no_such_key"), std::string::npos);
  EXPECT_EQ(run("run " + common("x") + " -s policy.heads=3").code, 1);
  EXPECT_EQ(run("compare " + common("x") + " --strategies bald,greedy").code, 1);
  EXPECT_EQ(run("run -o " + (dir / "x").string()).code, 1);  // missing --config
  EXPECT_EQ(run("frobnicate").code, 1);
}

TEST_F(Cli, RuntimeErrorsExitWithTwo) {
  EXPECT_EQ(run("run " + common("x") + " --resume " + (dir / "nowhere").string()).code, 2);
}

TEST_F(Cli, GfnAnalyzeWritesSnapshotsAndCurve) {
  const auto r = run("gfn-analyze " + common("g"));
  ASSERT_EQ(r.code, 0) << slurp(dir / "stderr.txt");
  for (const char* f : {"density_10.csv", "density_30.csv", "calls_curve.csv", "mi_landscape.csv", "analysis.csv"})
    EXPECT_TRUE(fs::exists(dir / "g" / f)) << f;
  EXPECT_NE(r.out.find("episodes=30"), std::string::npos) << r.out;
}

TEST_F(Cli, ExportLandscapeAndTrainAe) {
  ASSERT_EQ(run("export-landscape " + common("l")).code, 0);
  EXPECT_EQ(gfnal::read_csv_file((dir / "l" / "landscape_true.csv").string()).rows.size(), 144u);
  ASSERT_EQ(run("export-landscape " + common("l9") + " -s oracle.grid_size=30").code, 0);
  EXPECT_EQ(gfnal::read_csv_file((dir / "l9" / "landscape_noisy.csv").string()).rows.size(), 900u);
  const auto ae = run("train-ae " + common("ae"));
  ASSERT_EQ(ae.code, 0);
  EXPECT_TRUE(fs::exists(dir / "ae" / "latents.csv"));
  EXPECT_TRUE(fs::exists(dir / "ae" / "ae_log.csv"));
}

TEST_F(Cli, CompareWritesSummary) {
  const auto r = run("compare " + common("c") + " --seeds 2 --strategies bald,random -j 2");
  ASSERT_EQ(r.code, 0) << slurp(dir / "stderr.txt");
  const auto t = gfnal::read_csv_file((dir / "c" / "summary.csv").string());
  EXPECT_EQ(t.rows.size(), 2u);
  EXPECT_NE(r.out.find("random_calls=0.0"), std::string::npos) << r.out;
}

}  // namespace
