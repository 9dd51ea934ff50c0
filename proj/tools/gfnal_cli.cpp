// gfnal: command-line front end for the grid active-learning experiments.
//
// Exit codes: 0 success, 1 configuration or usage error, 2 runtime failure.
// Diagnostics go to stderr; stdout carries a single summary line.

#include "gfnal/pipeline.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

namespace {

constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;

struct CommonArgs {
  std::string config;
  std::string out;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonArgs& a) {
  cmd->add_option("-c,--config", a.config, "TOML experiment config")->required();
  cmd->add_option("-o,--out", a.out, "Output directory")->required();
  cmd->add_option("-s,--set", a.overrides, "Override a config key (dotted.key=value); repeatable");
}

std::string fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"BALD-rewarded GFlowNet active learning on a synthetic grid"};
  app.require_subcommand(1);
  app.set_version_flag("--version", gfnal::kToolVersion);

  CommonArgs run_args, cmp_args, ae_args, gfn_args, land_args;
  std::string resume;
  int seeds = 5;
  int jobs = 1;
  std::vector<std::string> strategies{"gflownet", "bald", "random"};

  auto* run = app.add_subcommand("run", "Run the active-learning loop for one strategy");
  add_common(run, run_args);
  run->add_option("--resume", resume, "Resume from a checkpoint_<t> directory");

  auto* cmp = app.add_subcommand("compare", "Run several strategies over several seeds");
  add_common(cmp, cmp_args);
  cmp->add_option("--seeds", seeds, "Number of seeds, counting up from pipeline.seed")->check(CLI::PositiveNumber);
  cmp->add_option("--strategies", strategies, "Strategies to compare")->delimiter(',');
  cmp->add_option("-j,--jobs", jobs, "Concurrent runs")->check(CLI::PositiveNumber);

  auto* ae = app.add_subcommand("train-ae", "Train the autoencoder and export latents");
  add_common(ae, ae_args);
  auto* gfn = app.add_subcommand("gfn-analyze", "Single AL step with a fixed reward: density snapshots and call curve");
  add_common(gfn, gfn_args);
  auto* land = app.add_subcommand("export-landscape", "Write the noise-free and noisy ground-truth surfaces");
  add_common(land, land_args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  auto load = [](const CommonArgs& a) { return gfnal::load_config(a.config, a.overrides); };
  const auto& sub = app.get_subcommands().front()->get_name();
  try {
    if (sub == "run") {
      const auto cfg = load(run_args);
      gfnal::RunOptions opts;
      opts.outdir = run_args.out;
      opts.resume_from = resume;
      const auto res = gfnal::run_experiment(cfg, opts);
      const auto& last = res.records.back();
      std::cout << "run strategy=" << gfnal::to_string(last.strategy) << " iterations=" << last.iteration
                << " train_size=" << last.train_size << " final_f1=" << fixed(last.test_f1)
                << " calls=" << last.calls_cumulative << '\n';
    } else if (sub == "compare") {
      const auto cfg = load(cmp_args);
      std::vector<gfnal::Strategy> list;
      for (const auto& s : strategies) {
        try {
          list.push_back(gfnal::parse_strategy(s));
        } catch (const std::invalid_argument& e) {
          throw gfnal::ConfigError("--strategies", e.what());
        }
      }
      std::vector<std::int64_t> seed_list;
      for (int k = 0; k < seeds; ++k) seed_list.push_back(cfg.pipeline.seed + k);
      const auto res = gfnal::compare_strategies(cfg, list, seed_list, cmp_args.out, jobs);
      std::cout << "compare seeds=" << seeds;
      for (const auto& row : res.table)
        std::cout << ' ' << gfnal::to_string(row.strategy) << "_f1=" << fixed(row.final_f1.mean) << "+-"
                  << fixed(row.final_f1.sd) << ' ' << gfnal::to_string(row.strategy) << "_calls=" << fixed(row.calls.mean, 1);
      std::cout << '\n';
    } else if (sub == "train-ae") {
      const auto rep = gfnal::train_ae(load(ae_args), ae_args.out);
      std::cout << "train-ae mse=" << fixed(rep.initial_mse, 6) << "->" << fixed(rep.final_mse, 6)
                << " triplets_ok=" << fixed(rep.triplet_satisfaction, 3) << " min_dist=" << fixed(rep.min_latent_distance, 6)
                << '\n';
    } else if (sub == "gfn-analyze") {
      const auto res = gfnal::gfn_analyze(load(gfn_args), gfn_args.out);
      std::cout << "gfn-analyze episodes=" << res.calls.size() << " calls=" << (res.calls.empty() ? 0 : res.calls.back())
                << " pool=" << res.pool_size << " spearman=";
      for (std::size_t s = 0; s < res.spearman_pool.size(); ++s)
        std::cout << (s ? "," : "") << res.snapshots[s].episode << ':' << fixed(res.spearman_pool[s]);
      std::cout << '\n';
    } else {
      gfnal::export_landscape(load(land_args), land_args.out);
      std::cout << "export-landscape wrote " << land_args.out << '\n';
    }
  } catch (const gfnal::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const gfnal::ExperimentError& e) {
    std::cerr << "runtime error at " << e.what() << '\n';
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return 0;
}
