#pragma once

#include "gfnal/config.hpp"
#include "gfnal/stats.hpp"

#include <atomic>
#include <chrono>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace gfnal {

namespace fs = std::filesystem;

struct IterationRecord {
  int iteration = 0;
  Strategy strategy = Strategy::gflownet;
  std::size_t train_size = 0;
  std::size_t pool_size = 0;
  std::size_t test_size = 0;
  double test_f1 = 0.0;
  double surrogate_loss = 0.0;
  std::size_t calls_iteration = 0;
  std::size_t calls_cumulative = 0;
  int fallback = 0;
  std::vector<GridPoint> acquired;
  double wall_seconds = 0.0;  // kept out of records.csv so reruns compare byte-for-byte
};

/// A failure inside the active-learning loop, tagged with where it happened
/// and the newest checkpoint that can be resumed.
class ExperimentError : public std::runtime_error {
 public:
  ExperimentError(int iteration, fs::path checkpoint, const std::string& what)
      : std::runtime_error("iteration " + std::to_string(iteration) + ": " + what +
                           (checkpoint.empty() ? std::string() : " (resume from " + checkpoint.string() + ")")),
        iteration_(iteration), checkpoint_(std::move(checkpoint)) {}

  [[nodiscard]] int iteration() const noexcept { return iteration_; }
  [[nodiscard]] const fs::path& checkpoint() const noexcept { return checkpoint_; }

 private:
  int iteration_;
  fs::path checkpoint_;
};

// ---------------------------------------------------------------------------
// File helpers

/// Writes through a temporary sibling and renames, so a crash never leaves a
/// half-written file behind.
inline void write_file(const fs::path& path, const std::function<void(std::ostream&)>& body) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    body(os);
    if (!os) throw std::runtime_error("write failed for " + path.string());
  }
  fs::rename(tmp, path);
}

inline std::ifstream open_input(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return in;
}

inline std::string format_points(const std::vector<GridPoint>& pts) {
  std::string s;
  for (std::size_t k = 0; k < pts.size(); ++k)
    s += (k ? ";" : "") + std::to_string(pts[k].i) + ":" + std::to_string(pts[k].j);
  return s;
}

inline std::vector<GridPoint> parse_points(const std::string& s) {
  std::vector<GridPoint> out;
  std::istringstream is(s);
  std::string item;
  while (std::getline(is, item, ';')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw std::runtime_error("records csv: malformed point '" + item + "'");
    out.push_back({std::stoi(item.substr(0, colon)), std::stoi(item.substr(colon + 1))});
  }
  return out;
}

inline void write_records_csv(std::ostream& os, const std::vector<IterationRecord>& records, const std::string& hash) {
  CsvWriter w(os, hash,
              {"iteration", "strategy", "train_size", "pool_size", "test_size", "test_f1", "surrogate_loss",
               "calls_iteration", "calls_cumulative", "fallback", "acquired"});
  for (const auto& r : records)
    w.row({std::to_string(r.iteration), to_string(r.strategy), std::to_string(r.train_size), std::to_string(r.pool_size),
           std::to_string(r.test_size), format_double(r.test_f1), format_double(r.surrogate_loss),
           std::to_string(r.calls_iteration), std::to_string(r.calls_cumulative), std::to_string(r.fallback),
           format_points(r.acquired)});
}

inline std::vector<IterationRecord> read_records_csv(std::istream& is) {
  const CsvTable t = read_csv(is);
  std::vector<IterationRecord> out;
  for (const auto& row : t.rows) {
    auto get = [&](const char* name) -> const std::string& { return row[t.column(name)]; };
    IterationRecord r;
    r.iteration = std::stoi(get("iteration"));
    r.strategy = parse_strategy(get("strategy"));
    r.train_size = std::stoul(get("train_size"));
    r.pool_size = std::stoul(get("pool_size"));
    r.test_size = std::stoul(get("test_size"));
    r.test_f1 = std::stod(get("test_f1"));
    r.surrogate_loss = std::stod(get("surrogate_loss"));
    r.calls_iteration = std::stoul(get("calls_iteration"));
    r.calls_cumulative = std::stoul(get("calls_cumulative"));
    r.fallback = std::stoi(get("fallback"));
    r.acquired = parse_points(get("acquired"));
    out.push_back(std::move(r));
  }
  return out;
}

inline void write_timing_csv(std::ostream& os, const std::vector<IterationRecord>& records, const std::string& hash) {
  CsvWriter w(os, hash, {"iteration", "wall_seconds"});
  for (const auto& r : records) w.row({std::to_string(r.iteration), format_double(r.wall_seconds)});
}

inline void read_timing_csv(std::istream& is, std::vector<IterationRecord>& records) {
  const CsvTable t = read_csv(is);
  for (const auto& row : t.rows) {
    const int it = std::stoi(row[t.column("iteration")]);
    for (auto& r : records)
      if (r.iteration == it) r.wall_seconds = std::stod(row[t.column("wall_seconds")]);
  }
}

// ---------------------------------------------------------------------------
// Shared inputs

/// The frozen dataset and latent table; everything downstream of the oracle
/// and the autoencoder. Read-only once built, so parallel runs may share it.
struct Workspace {
  LabeledDataset dataset;
  std::shared_ptr<const Tensor> latents;
  std::vector<AeEpochLog> ae_log;
};

inline Workspace prepare_workspace(const ExperimentConfig& raw) {
  const ExperimentConfig cfg = raw.resolved();
  Workspace ws;
  ws.dataset = make_splits(cfg.oracle);
  auto ae = train_autoencoder(cfg.autoencoder, cfg.oracle.grid_size, derive_seed(cfg.master_seed(), 0, "autoencoder"));
  ws.latents = std::make_shared<const Tensor>(ae.model.latent_table());
  ws.ae_log = std::move(ae.log);
  return ws;
}

inline std::vector<double> latent_row(const Tensor& z, int grid, GridPoint p) {
  const std::size_t d = z.features();
  const auto row = static_cast<std::size_t>(p.j * grid + p.i);
  return {z.values().begin() + static_cast<std::ptrdiff_t>(row * d),
          z.values().begin() + static_cast<std::ptrdiff_t>((row + 1) * d)};
}

/// Training points in cell order with their oracle labels.
inline std::vector<LabeledLatent> training_set(const LabeledDataset& d, const Tensor& z) {
  std::vector<LabeledLatent> out;
  for (const auto& p : d.points(Split::train)) out.push_back({latent_row(z, d.size, p), d.query(p) ? 1 : 0});
  return out;
}

inline double evaluate_f1(const BnnModel& model, const LabeledDataset& d, const Tensor& z, const RngStream& masks) {
  std::vector<bool> predicted, actual;
  for (const auto& p : d.points(Split::test)) {
    predicted.push_back(model.predict_positive(latent_row(z, d.size, p), masks));
    actual.push_back(d.at(p).positive);
  }
  return f1_score(predicted, actual);
}

/// Surrogate for a given training set; the seed depends only on the iteration.
inline BnnModel fit_surrogate(const ExperimentConfig& cfg, const LabeledDataset& d, const Tensor& z, int iteration) {
  return train_surrogate(training_set(d, z), cfg.surrogate, cfg.mixup, derive_seed(cfg.master_seed(), iteration, "surrogate"));
}

using GfnPolicyTrainer = GfnTrainer<TransformerPolicy>;

inline std::unique_ptr<GfnPolicyTrainer> make_trainer(const ExperimentConfig& cfg, std::shared_ptr<const Tensor> latents,
                                                      int iteration) {
  Engine rng = RngStream{derive_seed(cfg.master_seed(), iteration, "policy.init"), 0}.engine();
  return std::make_unique<GfnPolicyTrainer>(TransformerPolicy(cfg.policy, std::move(latents), rng), cfg.gfn);
}

inline MiScorer make_scorer(const ExperimentConfig& cfg, const BnnModel& model, const Tensor& z, int iteration) {
  return MiScorer{&model, &z, cfg.oracle.grid_size, RngStream{derive_seed(cfg.master_seed(), iteration, "acquire.mc"), 0}};
}

/// Scores only unlabeled pool cells; train and test terminals get the floor
/// reward without touching the surrogate.
inline RewardCache make_reward(const ExperimentConfig& cfg, const MiScorer& scorer, const LabeledDataset& d) {
  return RewardCache(scorer, [&d](GridPoint p) { return d.at(p).split == Split::pool; }, cfg.reward_floor);
}

/// Trains the policy for one AL step, optionally logging episodes and density
/// snapshots under `logdir`.
inline std::vector<EpisodeRecord> train_policy_step(const ExperimentConfig& cfg, GfnPolicyTrainer& trainer, RewardCache& reward,
                                                    int episodes, int iteration, const fs::path& logdir, const std::string& hash,
                                                    std::vector<DensitySnapshot>* snapshots = nullptr) {
  const GridEnv env = cfg.env();
  Engine rng = RngStream{derive_seed(cfg.master_seed(), iteration, "gfn.train"), 0}.engine();
  std::optional<std::ofstream> episodes_csv;
  if (!logdir.empty() && cfg.pipeline.log_episodes) {
    fs::create_directories(logdir);
    episodes_csv.emplace(logdir / "episodes.csv", std::ios::binary);
    write_episode_header(*episodes_csv, hash);
  }
  GfnPolicyTrainer::Observer obs;
  if (episodes_csv) obs.on_episode = [&](const EpisodeRecord& r) { write_episode_row(*episodes_csv, r); };
  obs.on_snapshot = [&](const DensitySnapshot& s) {
    if (snapshots) snapshots->push_back(s);
    if (!logdir.empty())
      write_file(logdir / ("density_" + std::to_string(s.episode) + ".csv"), [&](std::ostream& os) { write_density_csv(os, s, hash); });
  };
  return trainer.train(env, reward, episodes, rng, obs);
}

// ---------------------------------------------------------------------------
// Active-learning loop

struct RunOptions {
  fs::path outdir;       // empty: keep everything in memory
  fs::path resume_from;  // a checkpoint_<t> directory
  const Workspace* workspace = nullptr;
  std::function<void(const IterationRecord&, const LabeledDataset&)> on_iteration;
};

struct ExperimentResult {
  std::vector<IterationRecord> records;
  LabeledDataset dataset;
};

namespace pipeline_detail {

inline fs::path checkpoint_dir(const fs::path& outdir, int t) { return outdir / ("checkpoint_" + std::to_string(t)); }

inline void prune_checkpoints(const fs::path& outdir, int newest, int keep) {
  if (keep < 0) return;
  for (int t = newest - keep; t >= 0; --t) {
    const auto dir = checkpoint_dir(outdir, t);
    if (!fs::exists(dir)) break;
    fs::remove_all(dir);
  }
}

inline void check_partition(const LabeledDataset& d, std::size_t expected_train) {
  const std::size_t train = d.count(Split::train), pool = d.count(Split::pool), test = d.count(Split::test);
  if (train + pool + test != d.entries.size()) throw std::logic_error("splits no longer partition the dataset");
  if (train != expected_train)
    throw std::logic_error("training set has " + std::to_string(train) + " points, expected " + std::to_string(expected_train));
}

}  // namespace pipeline_detail

/// Runs the configured strategy for pipeline.al_iterations steps after an
/// initial surrogate fit. Every random stream is derived from the master seed,
/// the iteration index and a purpose tag.
inline ExperimentResult run_experiment(const ExperimentConfig& raw, const RunOptions& opts = {}) {
  using namespace pipeline_detail;
  const ExperimentConfig cfg = raw.resolved();
  validate(cfg);
  const std::string hash = config_hash(cfg);
  const fs::path& out = opts.outdir;
  const bool files = !out.empty();
  const int grid = cfg.oracle.grid_size;
  const auto k = static_cast<std::size_t>(cfg.pipeline.acquisition_size);
  const GridEnv env = cfg.env();

  std::optional<Workspace> own;
  LabeledDataset dataset;
  std::shared_ptr<const Tensor> latents;
  std::vector<IterationRecord> records;
  BnnModel model;
  std::unique_ptr<GfnPolicyTrainer> trainer;
  fs::path last_checkpoint;
  int first = 0;

  if (files) {
    fs::create_directories(out);
    write_file(out / "config.resolved.toml", [&](std::ostream& os) { os << "# gfnal " << kToolVersion << " config_hash=" << hash << '\n' << to_toml(cfg); });
  }

  if (!opts.resume_from.empty()) {
    const fs::path& ck = opts.resume_from;
    try {
      auto rin = open_input(ck / "records.csv");
      records = read_records_csv(rin);
      if (records.empty()) throw std::runtime_error("checkpoint has no records");
      if (fs::exists(ck / "timing.csv")) {
        auto tin = open_input(ck / "timing.csv");
        read_timing_csv(tin, records);
      }
      auto din = open_input(ck / "dataset.csv");
      dataset = read_dataset_csv(din);
      const fs::path latent_file = ck.parent_path() / "latents.csv";
      if (opts.workspace) {
        latents = opts.workspace->latents;
      } else if (fs::exists(latent_file)) {
        auto lin = open_input(latent_file);
        latents = std::make_shared<const Tensor>(read_latent_table(lin));
      } else {
        own = prepare_workspace(cfg);
        latents = own->latents;
      }
      Engine init = RngStream{derive_seed(cfg.master_seed(), 0, "surrogate.shape"), 0}.engine();
      model = BnnModel(cfg.surrogate, init);
      auto sin = open_input(ck / "surrogate.weights");
      model.load(sin, records.back().surrogate_loss);
      if (fs::exists(ck / "policy.weights")) {
        trainer = make_trainer(cfg, latents, 0);
        auto pin = open_input(ck / "policy.weights");
        nn::load_params(pin, trainer->params(), &trainer->adam());
      }
    } catch (const std::exception& e) {
      throw std::runtime_error("cannot resume from " + ck.string() + ": " + e.what());
    }
    first = records.back().iteration + 1;
    last_checkpoint = ck;
  } else {
    if (opts.workspace) {
      dataset = opts.workspace->dataset;
      latents = opts.workspace->latents;
    } else {
      own = prepare_workspace(cfg);
      dataset = own->dataset;
      latents = own->latents;
    }
  }

  if (files) {
    write_file(out / "latents.csv", [&](std::ostream& os) { write_latent_table(os, *latents, grid, hash); });
  }

  const bool checkpoints = files && cfg.pipeline.checkpoint_keep != 0;
  for (int t = first; t <= cfg.pipeline.al_iterations; ++t) {
    try {
      if (cfg.debug.fail_at_iteration == t) throw std::runtime_error("injected failure");
      const auto start = std::chrono::steady_clock::now();
      IterationRecord rec;
      rec.iteration = t;
      rec.strategy = cfg.pipeline.strategy;

      if (t > 0) {
        const auto pool = dataset.points(Split::pool);
        const MiScorer scorer = make_scorer(cfg, model, *latents, t);
        Engine acq_rng = RngStream{derive_seed(cfg.master_seed(), t, "acquire"), 0}.engine();
        Acquisition acq;
        switch (cfg.pipeline.strategy) {
          case Strategy::bald:
            acq = acquire_bald(pool, scorer, k);
            break;
          case Strategy::random:
            acq = acquire_random(pool, k, acq_rng);
            break;
          case Strategy::gflownet: {
            if (!trainer || !cfg.pipeline.warm_start_policy) trainer = make_trainer(cfg, latents, t);
            RewardCache reward = make_reward(cfg, scorer, dataset);
            const fs::path logdir = files ? out / ("iter_" + std::to_string(t)) : fs::path();
            train_policy_step(cfg, *trainer, reward, cfg.gfn.episodes, t, logdir, hash);
            acq = acquire_gfn(trainer->policy(), env, reward, pool, k, acq_rng);
            break;
          }
        }
        for (const auto& p : acq.points) dataset.move_to_train(p);
        rec.acquired = acq.points;
        rec.calls_iteration = acq.calls;
        rec.fallback = acq.fallback;
      }
      rec.calls_cumulative = (records.empty() ? 0 : records.back().calls_cumulative) + rec.calls_iteration;
      check_partition(dataset, static_cast<std::size_t>(cfg.pipeline.initial_size) + k * static_cast<std::size_t>(t));

      model = fit_surrogate(cfg, dataset, *latents, t);
      rec.surrogate_loss = model.final_loss();
      rec.test_f1 = evaluate_f1(model, dataset, *latents, RngStream{derive_seed(cfg.master_seed(), t, "evaluate"), 0});
      rec.train_size = dataset.count(Split::train);
      rec.pool_size = dataset.count(Split::pool);
      rec.test_size = dataset.count(Split::test);
      rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      records.push_back(rec);
      if (opts.on_iteration) opts.on_iteration(rec, dataset);

      if (files) {
        write_file(out / "records.csv", [&](std::ostream& os) { write_records_csv(os, records, hash); });
        write_file(out / "timing.csv", [&](std::ostream& os) { write_timing_csv(os, records, hash); });
      }
      if (checkpoints) {
        const fs::path ck = checkpoint_dir(out, t);
        fs::create_directories(ck);
        write_file(ck / "dataset.csv", [&](std::ostream& os) { write_dataset_csv(os, dataset, hash); });
        write_file(ck / "surrogate.weights", [&](std::ostream& os) { model.save(os); });
        if (trainer)
          write_file(ck / "policy.weights", [&](std::ostream& os) { nn::save_params(os, trainer->params(), &trainer->adam()); });
        write_file(ck / "timing.csv", [&](std::ostream& os) { write_timing_csv(os, records, hash); });
        // records last: its presence marks a complete checkpoint
        write_file(ck / "records.csv", [&](std::ostream& os) { write_records_csv(os, records, hash); });
        last_checkpoint = ck;
        prune_checkpoints(out, t, cfg.pipeline.checkpoint_keep);
      }
    } catch (const ExperimentError&) {
      throw;
    } catch (const std::exception& e) {
      throw ExperimentError(t, last_checkpoint, e.what());
    }
  }
  return {std::move(records), std::move(dataset)};
}

// ---------------------------------------------------------------------------
// Strategy comparison

struct RunSummary {
  Strategy strategy = Strategy::gflownet;
  std::int64_t seed = 0;
  double final_f1 = 0.0;
  std::size_t cumulative_calls = 0;
};

struct StrategySummary {
  Strategy strategy = Strategy::gflownet;
  std::size_t seeds = 0;
  MeanSd final_f1;
  MeanSd calls;
};

struct CompareResult {
  std::vector<RunSummary> runs;
  std::vector<StrategySummary> table;
};

/// Calls fn(0..n-1) on up to `jobs` threads; rethrows the first failure.
inline void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
  const auto workers = static_cast<std::size_t>(std::max(1, jobs));
  if (workers == 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < std::min(workers, n); ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        {
          std::lock_guard lock(mu);
          if (failure) return;
        }
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

inline void write_compare_csv(const fs::path& out, const CompareResult& r, const std::string& hash) {
  write_file(out / "summary.csv", [&](std::ostream& os) {
    CsvWriter w(os, hash, {"strategy", "seeds", "final_f1_mean", "final_f1_sd", "calls_mean", "calls_sd"});
    for (const auto& s : r.table)
      w.row({to_string(s.strategy), std::to_string(s.seeds), format_double(s.final_f1.mean), format_double(s.final_f1.sd),
             format_double(s.calls.mean), format_double(s.calls.sd)});
  });
  write_file(out / "runs.csv", [&](std::ostream& os) {
    CsvWriter w(os, hash, {"strategy", "seed", "final_f1", "calls_cumulative"});
    for (const auto& s : r.runs)
      w.row({to_string(s.strategy), std::to_string(s.seed), format_double(s.final_f1), std::to_string(s.cumulative_calls)});
  });
}

/// Runs every (strategy, seed) pair; one workspace is built per seed and
/// shared by that seed's strategies. Per-run artifacts go to
/// <outdir>/<strategy>_seed<seed>/ when outdir is set.
inline CompareResult compare_strategies(const ExperimentConfig& cfg, const std::vector<Strategy>& strategies,
                                        const std::vector<std::int64_t>& seeds, const fs::path& outdir = {}, int jobs = 1) {
  if (seeds.empty()) throw ConfigError("seeds", "compare needs at least one seed");
  if (strategies.empty()) throw ConfigError("strategies", "compare needs at least one strategy");
  auto seeded = [&](std::int64_t seed) {
    ExperimentConfig c = cfg;
    c.pipeline.seed = seed;
    return c;
  };
  std::vector<Workspace> spaces(seeds.size());
  parallel_for(seeds.size(), jobs, [&](std::size_t s) { spaces[s] = prepare_workspace(seeded(seeds[s])); });

  CompareResult result;
  result.runs.resize(strategies.size() * seeds.size());
  parallel_for(result.runs.size(), jobs, [&](std::size_t n) {
    const std::size_t si = n / seeds.size(), ki = n % seeds.size();
    ExperimentConfig c = seeded(seeds[ki]);
    c.pipeline.strategy = strategies[si];
    RunOptions opts;
    opts.workspace = &spaces[ki];
    if (!outdir.empty()) opts.outdir = outdir / (std::string(to_string(strategies[si])) + "_seed" + std::to_string(seeds[ki]));
    const auto res = run_experiment(c, opts);
    result.runs[n] = {strategies[si], seeds[ki], res.records.back().test_f1, res.records.back().calls_cumulative};
  });

  for (std::size_t si = 0; si < strategies.size(); ++si) {
    std::vector<double> f1, calls;
    for (std::size_t ki = 0; ki < seeds.size(); ++ki) {
      const auto& r = result.runs[si * seeds.size() + ki];
      f1.push_back(r.final_f1);
      calls.push_back(static_cast<double>(r.cumulative_calls));
    }
    result.table.push_back({strategies[si], seeds.size(), mean_sd(f1), mean_sd(calls)});
  }
  if (!outdir.empty()) write_compare_csv(outdir, result, config_hash(cfg.resolved()));
  return result;
}

// ---------------------------------------------------------------------------
// Single-step GFlowNet analysis

struct AnalyzeResult {
  std::vector<DensitySnapshot> snapshots;
  std::vector<double> spearman_pool;  // per snapshot, density vs MI over pool cells
  std::vector<double> spearman_all;   // per snapshot, density vs MI over every cell
  std::vector<double> mi;             // per cell, row-major
  std::vector<std::size_t> calls;     // unique surrogate calls after each episode
  std::size_t pool_size = 0;
};

inline int analyze_episodes(const ExperimentConfig& cfg) {
  if (cfg.analyze.episodes > 0) return cfg.analyze.episodes;
  int last = 0;
  for (int e : cfg.gfn.snapshot_episodes) last = std::max(last, e);
  return last > 0 ? last : cfg.gfn.episodes;
}

/// Reproduces the first GFlowNet step of a run with the reward held fixed:
/// the initial surrogate, the iteration-1 mask streams and policy seed.
inline AnalyzeResult gfn_analyze(const ExperimentConfig& raw, const fs::path& outdir = {}, const Workspace* workspace = nullptr) {
  const ExperimentConfig cfg = raw.resolved();
  validate(cfg);
  const std::string hash = config_hash(cfg);
  std::optional<Workspace> own;
  if (!workspace) workspace = &own.emplace(prepare_workspace(cfg));
  const LabeledDataset& d = workspace->dataset;
  const Tensor& z = *workspace->latents;
  const int grid = cfg.oracle.grid_size;

  const BnnModel model = fit_surrogate(cfg, d, z, 0);
  const MiScorer scorer = make_scorer(cfg, model, z, 1);
  RewardCache reward = make_reward(cfg, scorer, d);
  auto trainer = make_trainer(cfg, workspace->latents, 1);

  AnalyzeResult res;
  res.pool_size = d.count(Split::pool);
  const auto log = train_policy_step(cfg, *trainer, reward, analyze_episodes(cfg), 1, outdir, hash, &res.snapshots);
  for (const auto& r : log) res.calls.push_back(r.calls);

  std::vector<double> mi_pool;
  for (int c = 0; c < grid * grid; ++c) {
    const GridPoint p{c % grid, c / grid};
    res.mi.push_back(scorer(p));
    if (d.at(p).split == Split::pool) mi_pool.push_back(res.mi.back());
  }
  for (const auto& s : res.snapshots) {
    std::vector<double> dens_all(s.counts.begin(), s.counts.end()), dens_pool;
    for (int c = 0; c < grid * grid; ++c)
      if (d.entries[static_cast<std::size_t>(c)].split == Split::pool) dens_pool.push_back(dens_all[static_cast<std::size_t>(c)]);
    res.spearman_pool.push_back(spearman(dens_pool, mi_pool));
    res.spearman_all.push_back(spearman(dens_all, res.mi));
  }

  if (!outdir.empty()) {
    write_file(outdir / "config.resolved.toml", [&](std::ostream& os) { os << "# gfnal " << kToolVersion << " config_hash=" << hash << '\n' << to_toml(cfg); });
    write_file(outdir / "mi_landscape.csv", [&](std::ostream& os) {
      CsvWriter w(os, hash, {"i", "j", "mi", "reward", "split"});
      for (int c = 0; c < grid * grid; ++c) {
        const auto& e = d.entries[static_cast<std::size_t>(c)];
        const double r = e.split == Split::pool ? res.mi[static_cast<std::size_t>(c)] + cfg.reward_floor : cfg.reward_floor;
        w.row({std::to_string(e.point.i), std::to_string(e.point.j), format_double(res.mi[static_cast<std::size_t>(c)]),
               format_double(r), to_string(e.split)});
      }
    });
    write_file(outdir / "calls_curve.csv", [&](std::ostream& os) {
      CsvWriter w(os, hash, {"episode", "gflownet", "bald", "random"});
      for (std::size_t e = 0; e < res.calls.size(); ++e)
        w.row({std::to_string(e + 1), std::to_string(res.calls[e]), std::to_string(res.pool_size), "0"});
    });
    write_file(outdir / "analysis.csv", [&](std::ostream& os) {
      CsvWriter w(os, hash, {"episode", "spearman_pool", "spearman_all", "terminals"});
      for (std::size_t s = 0; s < res.snapshots.size(); ++s)
        w.row({std::to_string(res.snapshots[s].episode), format_double(res.spearman_pool[s]), format_double(res.spearman_all[s]),
               std::to_string(res.snapshots[s].total())});
    });
  }
  return res;
}

// ---------------------------------------------------------------------------
// Landscape export and standalone autoencoder training

/// Noise-free and noisy surfaces, each 900 rows with the frozen threshold and
/// the positive mask.
inline void export_landscape(const ExperimentConfig& raw, const fs::path& outdir) {
  const ExperimentConfig cfg = raw.resolved();
  validate(cfg);
  const std::string hash = config_hash(cfg);
  const LabeledDataset d = make_splits(cfg.oracle);
  auto surface = [&](const char* name, bool noisy) {
    write_file(outdir / name, [&](std::ostream& os) {
      CsvWriter w(os, hash, {"i", "j", "value", "threshold", "positive"});
      for (const auto& e : d.entries)
        w.row({std::to_string(e.point.i), std::to_string(e.point.j),
               format_double(noisy ? e.value : ground_truth(e.point.i, e.point.j)), format_double(d.threshold),
               e.positive ? "1" : "0"});
    });
  };
  surface("landscape_true.csv", false);
  surface("landscape_noisy.csv", true);
}

struct AeReport {
  double initial_mse = 0.0;
  double final_mse = 0.0;
  double triplet_satisfaction = 0.0;
  double min_latent_distance = 0.0;
};

inline AeReport train_ae(const ExperimentConfig& raw, const fs::path& outdir) {
  const ExperimentConfig cfg = raw.resolved();
  validate(cfg);
  const std::string hash = config_hash(cfg);
  const auto ae = train_autoencoder(cfg.autoencoder, cfg.oracle.grid_size, derive_seed(cfg.master_seed(), 0, "autoencoder"));
  Engine audit = RngStream{derive_seed(cfg.master_seed(), 0, "ae.audit"), 0}.engine();
  AeReport rep{ae.initial_reconstruction_mse, ae.log.empty() ? ae.initial_reconstruction_mse : ae.log.back().reconstruction_mse,
               triplet_audit(ae.model, cfg.autoencoder.triplets, 2000, audit), min_pairwise_latent_distance(ae.model)};
  write_file(outdir / "latents.csv", [&](std::ostream& os) { write_latents_csv(os, ae.model, hash); });
  write_file(outdir / "ae_log.csv", [&](std::ostream& os) {
    CsvWriter w(os, hash, {"epoch", "loss", "reconstruction_mse"});
    for (const auto& e : ae.log) w.row({std::to_string(e.epoch), format_double(e.loss), format_double(e.reconstruction_mse)});
  });
  return rep;
}

}  // namespace gfnal
