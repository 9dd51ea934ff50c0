#include "gfnal/pipeline.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace gfnal;
namespace fs = std::filesystem;

namespace {

/// A 12x12 problem small enough to run every strategy in well under a second.
ExperimentConfig tiny_config(Strategy s = Strategy::bald) {
  ExperimentConfig c = desk_preset();
  c.pipeline.strategy = s;
  c.pipeline.seed = 3;
  c.pipeline.al_iterations = 3;
  c.pipeline.acquisition_size = 5;
  c.pipeline.initial_size = 20;
  c.pipeline.test_size = 20;
  c.oracle.grid_size = 12;
  c.posenc = {8, 100.0};
  c.autoencoder.hidden = 16;
  c.autoencoder.layers = 2;
  c.autoencoder.latent = 4;
  c.autoencoder.epochs = 3;
  c.autoencoder.batch_size = 64;
  c.autoencoder.triplets = {1, 5};
  c.surrogate.hidden = 16;
  c.surrogate.epochs = 3;
  c.policy.hidden = 8;
  c.policy.layers = 1;
  c.policy.heads = 2;
  c.policy.ff_dim = 16;
  c.gfn.episodes = 40;
  c.gfn.snapshot_episodes = {10, 40};
  c.gfn.density_window = 10;
  c.mask.min_length = 2;
  c.mask.max_length = 16;
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("gfnal_test_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) + "_" +
                                        ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

// --- configuration ------------------------------------------------------------------

TEST(Config, PresetsValidate) {
  EXPECT_NO_THROW(validate(paper_preset()));
  EXPECT_NO_THROW(validate(desk_preset()));
  EXPECT_EQ(paper_preset().gfn.episodes, 50000);
  EXPECT_EQ(paper_preset().mask.min_length, 50);
  EXPECT_EQ(paper_preset().mask.max_length, 100);
  EXPECT_EQ(desk_preset().gfn.episodes, 5000);
  EXPECT_EQ(desk_preset().mask.min_length, 10);
  EXPECT_EQ(desk_preset().mask.max_length, 40);
}

TEST(Config, UnknownKeyNamesTheKey) {
  std::istringstream in("[gfn]\nlearning_rat = 0.1\n");
  try {
    (void)build_config(parse_toml(in));
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "gfn.learning_rat");
  }
}

TEST(Config, TypeAndRangeErrorsNameTheKey) {
  auto key_of = [](const std::string& override) {
    try {
      (void)build_config({parse_override(override)});
    } catch (const ConfigError& e) {
      return e.key();
    }
    return std::string("<none>");
  };
  EXPECT_EQ(key_of("policy.heads=7"), "policy.heads");
  EXPECT_EQ(key_of("surrogate.dropout=1.5"), "surrogate.dropout");
  EXPECT_EQ(key_of("pipeline.al_iterations=100"), "pipeline.al_iterations");
  EXPECT_EQ(key_of("mask.min_length=0"), "mask.min_length");
  EXPECT_EQ(key_of("gfn.episodes=fast"), "gfn.episodes");
  EXPECT_EQ(key_of("pipeline.strategy=greedy"), "pipeline.strategy");
  EXPECT_EQ(key_of("pipeline.preset=laptop"), "pipeline.preset");
  EXPECT_THROW((void)parse_override("gfn.episodes"), ConfigError);
}

TEST(Config, FileThenOverridesThenEnvironmentSeed) {
  TempDir dir;
  const fs::path file = dir.path / "c.toml";
  std::ofstream(file) << "# comment\n[pipeline]\npreset = \"desk\"\nseed = 4\nstrategy = \"random\"\n[gfn]\nepisodes = 1_000 # inline\n";
  const auto a = load_config(file.string(), {}, nullptr);
  EXPECT_EQ(a.pipeline.preset, Preset::desk);
  EXPECT_EQ(a.pipeline.seed, 4);
  EXPECT_EQ(a.pipeline.strategy, Strategy::random);
  EXPECT_EQ(a.gfn.episodes, 1000);
  EXPECT_EQ(a.mask.max_length, 40);  // from the desk preset

  const auto b = load_config(file.string(), {"pipeline.seed=9", "gfn.learning_rate=3e-3", "mixup.enabled=false"}, nullptr);
  EXPECT_EQ(b.pipeline.seed, 9);
  EXPECT_DOUBLE_EQ(b.gfn.learning_rate, 3e-3);
  EXPECT_FALSE(b.mixup.enabled);

  const auto c = load_config(file.string(), {"pipeline.seed=9"}, "17");
  EXPECT_EQ(c.pipeline.seed, 17);
  EXPECT_THROW((void)load_config(file.string(), {}, "x1"), ConfigError);
  EXPECT_THROW((void)load_config((dir.path / "missing.toml").string(), {}, nullptr), ConfigError);
}

TEST(Config, TomlRoundTripPreservesEveryKey) {
  ExperimentConfig c = desk_preset();
  c.gfn.snapshot_episodes = {5, 50, 500};
  c.gfn.learning_rate = 0.00123456789;
  c.pipeline.strategy = Strategy::random;
  std::istringstream in(to_toml(c));
  const auto back = build_config(parse_toml(in));
  EXPECT_EQ(to_toml(back), to_toml(c));
  EXPECT_EQ(config_hash(back), config_hash(c));
}

TEST(Config, HashIgnoresDebugKeysOnly) {
  ExperimentConfig a = desk_preset(), b = a;
  b.debug.fail_at_iteration = 3;
  EXPECT_EQ(config_hash(a), config_hash(b));
  b.gfn.episodes = 10;
  EXPECT_NE(config_hash(a), config_hash(b));
}

TEST(Config, ResolvedSharesDimensions) {
  ExperimentConfig c = desk_preset();
  c.autoencoder.latent = 7;
  c.pipeline.seed = 12;
  const auto r = c.resolved();
  EXPECT_EQ(r.surrogate.input_dim, 7u);
  EXPECT_EQ(r.policy.input_dim, 7u);
  EXPECT_EQ(r.oracle.seed, 12u);
  c.oracle_seed = 2;
  EXPECT_EQ(c.resolved().oracle.seed, 2u);
}

// --- records ----------------------------------------------------------------------------

TEST(Records, CsvRoundTrip) {
  IterationRecord r;
  r.iteration = 2;
  r.strategy = Strategy::bald;
  r.train_size = 30;
  r.pool_size = 94;
  r.test_size = 20;
  r.test_f1 = 1.0 / 3.0;
  r.surrogate_loss = 0.1;
  r.calls_iteration = 99;
  r.calls_cumulative = 203;
  r.acquired = {{1, 2}, {10, 0}};
  std::stringstream ss;
  write_records_csv(ss, {r}, "h");
  const auto back = read_records_csv(ss);
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(back[0].test_f1, r.test_f1);
  EXPECT_EQ(back[0].acquired, r.acquired);
  EXPECT_EQ(back[0].calls_cumulative, 203u);
  EXPECT_THROW((void)parse_points("1-2"), std::runtime_error);
  EXPECT_TRUE(parse_points("").empty());
}

// --- the loop ------------------------------------------------------------------------------

TEST(Pipeline, BaldBookkeeping) {
  const auto cfg = tiny_config(Strategy::bald);
  std::vector<std::size_t> seen_train;
  RunOptions opts;
  opts.on_iteration = [&](const IterationRecord& r, const LabeledDataset& d) {
    seen_train.push_back(d.count(Split::train));
    EXPECT_EQ(d.count(Split::train) + d.count(Split::pool) + d.count(Split::test), 144u);
    EXPECT_EQ(r.pool_size, d.count(Split::pool));
  };
  const auto res = run_experiment(cfg, opts);
  ASSERT_EQ(res.records.size(), 4u);
  EXPECT_EQ(seen_train, (std::vector<std::size_t>{20, 25, 30, 35}));
  EXPECT_EQ(res.records[0].calls_iteration, 0u);
  EXPECT_EQ(res.records[1].calls_iteration, 104u);
  EXPECT_EQ(res.records[2].calls_iteration, 99u);
  EXPECT_EQ(res.records[3].calls_iteration, 94u);
  EXPECT_EQ(res.records[3].calls_cumulative, 297u);
  std::set<GridPoint> acquired;
  for (const auto& r : res.records)
    for (const auto& p : r.acquired) {
      EXPECT_TRUE(acquired.insert(p).second);
      EXPECT_EQ(res.dataset.at(p).split, Split::train);
    }
  EXPECT_EQ(acquired.size(), 15u);
}

TEST(Pipeline, RandomMakesNoSurrogateCalls) {
  const auto res = run_experiment(tiny_config(Strategy::random));
  for (const auto& r : res.records) EXPECT_EQ(r.calls_iteration, 0u);
  EXPECT_EQ(res.records.back().train_size, 35u);
}

TEST(Pipeline, GflownetCallsStayWithinThePool) {
  TempDir dir;
  RunOptions opts;
  opts.outdir = dir.path;
  const auto res = run_experiment(tiny_config(Strategy::gflownet), opts);
  for (std::size_t t = 1; t < res.records.size(); ++t) {
    EXPECT_GT(res.records[t].calls_iteration, 0u);
    EXPECT_LE(res.records[t].calls_iteration, res.records[t - 1].pool_size);
  }
  EXPECT_TRUE(fs::exists(dir.path / "iter_1" / "episodes.csv"));
  EXPECT_TRUE(fs::exists(dir.path / "iter_3" / "density_40.csv"));
  EXPECT_TRUE(fs::exists(dir.path / "config.resolved.toml"));
  EXPECT_TRUE(fs::exists(dir.path / "timing.csv"));
  // default keeps the newest two checkpoints
  EXPECT_FALSE(fs::exists(dir.path / "checkpoint_1"));
  EXPECT_TRUE(fs::exists(dir.path / "checkpoint_2" / "records.csv"));
  EXPECT_TRUE(fs::exists(dir.path / "checkpoint_3" / "policy.weights"));
}

TEST(Pipeline, SameSeedReproducesRecordsByteForByte) {
  TempDir dir;
  for (const char* name : {"a", "b"}) {
    RunOptions opts;
    opts.outdir = dir.path / name;
    (void)run_experiment(tiny_config(Strategy::gflownet), opts);
  }
  EXPECT_EQ(slurp(dir.path / "a" / "records.csv"), slurp(dir.path / "b" / "records.csv"));
  EXPECT_FALSE(slurp(dir.path / "a" / "records.csv").empty());
}

TEST(Pipeline, ResumeAfterFailureMatchesUninterruptedRun) {
  for (Strategy s : {Strategy::gflownet, Strategy::bald}) {
    TempDir dir;
    ExperimentConfig cfg = tiny_config(s);
    cfg.pipeline.checkpoint_keep = -1;
    RunOptions full;
    full.outdir = dir.path / "full";
    (void)run_experiment(cfg, full);

    ExperimentConfig failing = cfg;
    failing.debug.fail_at_iteration = 2;
    RunOptions part;
    part.outdir = dir.path / "part";
    try {
      (void)run_experiment(failing, part);
      FAIL() << "expected the injected failure";
    } catch (const ExperimentError& e) {
      EXPECT_EQ(e.iteration(), 2);
      EXPECT_EQ(e.checkpoint(), part.outdir / "checkpoint_1");
      EXPECT_NE(std::string(e.what()).find("resume from"), std::string::npos);
    }
    RunOptions resume;
    resume.outdir = part.outdir;
    resume.resume_from = part.outdir / "checkpoint_1";
    const auto res = run_experiment(cfg, resume);
    EXPECT_EQ(res.records.size(), 4u);
    EXPECT_EQ(slurp(full.outdir / "records.csv"), slurp(part.outdir / "records.csv")) << to_string(s);
    EXPECT_EQ(slurp(full.outdir / "checkpoint_3" / "dataset.csv"), slurp(part.outdir / "checkpoint_3" / "dataset.csv"));
  }
}

TEST(Pipeline, ResumeFromMissingCheckpointFails) {
  TempDir dir;
  RunOptions opts;
  opts.resume_from = dir.path / "checkpoint_9";
  EXPECT_THROW((void)run_experiment(tiny_config(), opts), std::runtime_error);
}

TEST(Pipeline, CheckpointKeepZeroWritesNone) {
  TempDir dir;
  ExperimentConfig cfg = tiny_config(Strategy::random);
  cfg.pipeline.checkpoint_keep = 0;
  RunOptions opts;
  opts.outdir = dir.path;
  (void)run_experiment(cfg, opts);
  for (const auto& e : fs::directory_iterator(dir.path)) EXPECT_EQ(e.path().filename().string().rfind("checkpoint_", 0), std::string::npos);
  EXPECT_TRUE(fs::exists(dir.path / "records.csv"));
}

TEST(Pipeline, ParallelForRunsEveryIndexAndPropagatesErrors) {
  std::vector<int> hit(50, 0);
  parallel_for(50, 4, [&](std::size_t i) { hit[i] += 1; });
  for (int h : hit) EXPECT_EQ(h, 1);
  EXPECT_THROW(parallel_for(10, 3, [](std::size_t i) { if (i == 7) throw std::runtime_error("x"); }), std::runtime_error);
}

TEST(Pipeline, CompareMatchesIndependentRuns) {
  TempDir dir;
  const auto cfg = tiny_config();
  const auto cmp = compare_strategies(cfg, {Strategy::bald, Strategy::random}, {3, 4}, dir.path, 2);
  ASSERT_EQ(cmp.table.size(), 2u);
  ASSERT_EQ(cmp.runs.size(), 4u);
  ExperimentConfig solo = cfg;
  solo.pipeline.seed = 4;
  solo.pipeline.strategy = Strategy::random;
  EXPECT_EQ(run_experiment(solo).records.back().test_f1, cmp.runs[3].final_f1);
  EXPECT_TRUE(fs::exists(dir.path / "summary.csv"));
  EXPECT_TRUE(fs::exists(dir.path / "runs.csv"));
  EXPECT_TRUE(fs::exists(dir.path / "bald_seed3" / "records.csv"));
  EXPECT_EQ(cmp.table[0].calls.mean, 104.0 + 99.0 + 94.0);
}

TEST(Analyze, SnapshotsCallsAndFiles) {
  TempDir dir;
  const auto res = gfn_analyze(tiny_config(Strategy::gflownet), dir.path);
  ASSERT_EQ(res.snapshots.size(), 2u);
  EXPECT_EQ(res.snapshots[0].episode, 10);
  EXPECT_EQ(res.snapshots[1].total(), 10);
  EXPECT_EQ(res.calls.size(), 40u);
  EXPECT_EQ(res.pool_size, 104u);
  EXPECT_LE(res.calls.back(), 104u);
  EXPECT_EQ(res.mi.size(), 144u);
  for (const char* f : {"mi_landscape.csv", "calls_curve.csv", "analysis.csv", "density_10.csv", "density_40.csv", "episodes.csv"})
    EXPECT_TRUE(fs::exists(dir.path / f)) << f;
  const auto curve = read_csv_file((dir.path / "calls_curve.csv").string());
  EXPECT_EQ(curve.rows.size(), 40u);
  EXPECT_EQ(curve.rows.back()[curve.column("random")], "0");
}

TEST(Landscape, ExportWritesOneRowPerCell) {
  TempDir dir;
  ExperimentConfig cfg = desk_preset();
  export_landscape(cfg, dir.path);
  const auto t = read_csv_file((dir.path / "landscape_true.csv").string());
  const auto n = read_csv_file((dir.path / "landscape_noisy.csv").string());
  EXPECT_EQ(t.rows.size(), 900u);
  EXPECT_EQ(n.rows.size(), 900u);
  int positives = 0;
  for (const auto& r : n.rows) positives += r[n.column("positive")] == "1";
  EXPECT_EQ(positives, 9);
}

}  // namespace
