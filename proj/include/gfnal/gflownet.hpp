#pragma once

#include "gfnal/csv.hpp"
#include "gfnal/grid_env.hpp"
#include "gfnal/nn/adam.hpp"
#include "gfnal/nn/losses.hpp"
#include "gfnal/nn/network.hpp"
#include "gfnal/rng.hpp"

#include <cmath>
#include <concepts>
#include <deque>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace gfnal {

// ---------------------------------------------------------------------------
// Masked action distribution

/// Softmax restricted to allowed actions; masked entries are exactly 0.
inline std::array<double, kNumActions> masked_distribution(const double* logits, const ActionMask& mask) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < kNumActions; ++a)
    if (mask[a]) mx = std::max(mx, logits[a]);
  if (!std::isfinite(mx)) throw std::invalid_argument("policy_distribution: every action is masked");
  std::array<double, kNumActions> p{};
  double z = 0.0;
  for (std::size_t a = 0; a < kNumActions; ++a)
    if (mask[a]) z += (p[a] = std::exp(logits[a] - mx));
  for (double& v : p) v /= z;
  return p;
}

// ---------------------------------------------------------------------------
// Policies

/// A forward policy maps a batch of states to [n x 5] logits, recording what
/// backward() needs to push dL/dlogits into its parameters.
template <class P>
concept ForwardPolicy = requires(P p, std::span<const GridState> states, nn::Mode mode, Engine& rng, const Tensor& g) {
  { p.logits(states, mode, rng) } -> std::same_as<Tensor>;
  p.backward(g);
  { p.params() } -> std::same_as<std::vector<nn::Param*>>;
};

struct PolicyConfig {
  std::size_t input_dim = 50;
  std::size_t hidden = 256;
  std::size_t layers = 6;
  std::size_t heads = 8;
  std::size_t ff_dim = 1024;
  double dropout = 0.1;
  double leaky_slope = 0.01;
};

inline nn::NetworkSpec policy_spec(const PolicyConfig& c) {
  nn::NetworkSpec s;
  s.layers.emplace_back(nn::ProjectionSpec{c.input_dim, c.hidden});
  s.layers.emplace_back(nn::ActivationSpec{nn::ActivationKind::leaky_relu, c.leaky_slope});
  for (std::size_t l = 0; l < c.layers; ++l)
    s.layers.emplace_back(nn::TransformerSpec{c.hidden, c.heads, c.ff_dim, c.dropout});
  s.layers.emplace_back(nn::DenseSpec{c.hidden, kNumActions});
  return s;
}

/// Transformer policy reading only the latent code of the current cell.
class TransformerPolicy {
 public:
  TransformerPolicy(const PolicyConfig& cfg, std::shared_ptr<const Tensor> latents, Engine& rng)
      : cfg_(cfg), latents_(std::move(latents)), net_(policy_spec(cfg), rng) {
    if (!latents_ || latents_->features() != cfg.input_dim)
      throw ShapeError("TransformerPolicy: latent table width does not match policy input");
    grid_ = static_cast<int>(std::lround(std::sqrt(static_cast<double>(latents_->rows()))));
  }

  Tensor logits(std::span<const GridState> states, nn::Mode mode, Engine& rng) {
    const std::size_t d = cfg_.input_dim;
    Tensor x({states.size(), d});
    for (std::size_t r = 0; r < states.size(); ++r) {
      const auto cell = static_cast<std::size_t>(states[r].y * grid_ + states[r].x);
      std::copy_n(latents_->values().begin() + static_cast<std::ptrdiff_t>(cell * d), d,
                  x.values().begin() + static_cast<std::ptrdiff_t>(r * d));
    }
    return net_.forward(x, mode, rng);
  }

  void backward(const Tensor& g) { net_.backward(g); }
  std::vector<nn::Param*> params() { return net_.params(); }
  nn::Network& network() noexcept { return net_; }
  [[nodiscard]] const PolicyConfig& config() const noexcept { return cfg_; }

 private:
  PolicyConfig cfg_;
  std::shared_ptr<const Tensor> latents_;
  nn::Network net_;
  int grid_ = 0;
};

/// One free logit vector per (x, y, t) state; exact enough to represent any
/// forward policy on small grids.
class TabularPolicy {
 public:
  TabularPolicy(int grid, int max_t)
      : grid_(grid), max_t_(max_t), table_("logits", RowMatrix::Zero(static_cast<Eigen::Index>(grid) * grid * (max_t + 1), kNumActions)) {}

  Tensor logits(std::span<const GridState> states, nn::Mode, Engine&) {
    rows_.clear();
    Tensor out({states.size(), kNumActions});
    for (std::size_t r = 0; r < states.size(); ++r) {
      const Eigen::Index row = row_of(states[r]);
      rows_.push_back(row);
      for (std::size_t a = 0; a < kNumActions; ++a) out[r * kNumActions + a] = table_.value(row, static_cast<Eigen::Index>(a));
    }
    return out;
  }

  void backward(const Tensor& g) {
    for (std::size_t r = 0; r < rows_.size(); ++r)
      for (std::size_t a = 0; a < kNumActions; ++a) table_.grad(rows_[r], static_cast<Eigen::Index>(a)) += g[r * kNumActions + a];
  }

  std::vector<nn::Param*> params() { return {&table_}; }

 private:
  Eigen::Index row_of(const GridState& s) const {
    if (s.t > max_t_ || s.x < 0 || s.y < 0 || s.x >= grid_ || s.y >= grid_) throw std::out_of_range("TabularPolicy: state outside table");
    return (static_cast<Eigen::Index>(s.t) * grid_ + s.y) * grid_ + s.x;
  }
  int grid_, max_t_;
  nn::Param table_;
  std::vector<Eigen::Index> rows_;
};

static_assert(ForwardPolicy<TransformerPolicy>);
static_assert(ForwardPolicy<TabularPolicy>);

/// Action probabilities for one state under `mask` (eval mode).
template <ForwardPolicy P>
std::array<double, kNumActions> policy_distribution(P& policy, const GridState& s, const ActionMask& mask) {
  Engine unused(0);
  const GridState one[1] = {s};
  const Tensor z = policy.logits(std::span<const GridState>(one), nn::Mode::eval, unused);
  return masked_distribution(z.values().data(), mask);
}

// ---------------------------------------------------------------------------
// Trajectories

struct ExplorationConfig {
  double epsilon_greedy = 0.1;

  void validate() const {
    if (!(epsilon_greedy >= 0.0 && epsilon_greedy < 1.0 + 1e-15))
      throw std::invalid_argument("epsilon_greedy must lie in [0, 1]");
  }
};

/// states[k] is where actions[k] was taken; the last action is Stop.
struct Trajectory {
  std::vector<GridState> states;
  std::vector<Action> actions;
  std::vector<ActionMask> masks;
  std::vector<double> forward_logprobs;  // under the learned policy, not the behaviour policy
  GridPoint terminal;

  [[nodiscard]] int length() const noexcept { return static_cast<int>(actions.size()) - 1; }
  [[nodiscard]] double sum_forward_logprob() const {
    double s = 0.0;
    for (double v : forward_logprobs) s += v;
    return s;
  }
};

/// Rolls out from the origin. With probability epsilon a uniformly random
/// allowed action replaces the policy draw.
template <ForwardPolicy P>
Trajectory sample_trajectory(P& policy, const GridEnv& env, const ExplorationConfig& explore, Engine& rng) {
  Trajectory tr;
  GridState s{0, 0, 0};
  std::optional<GridState> prev;
  for (;;) {
    const ActionMask mask = env.valid_actions(s, prev, rng);
    const auto p = policy_distribution(policy, s, mask);
    std::size_t a = 0;
    if (explore.epsilon_greedy > 0.0 && uniform01(rng) < explore.epsilon_greedy) {
      std::vector<std::size_t> allowed;
      for (std::size_t k = 0; k < kNumActions; ++k)
        if (mask[k]) allowed.push_back(k);
      a = allowed[std::uniform_int_distribution<std::size_t>(0, allowed.size() - 1)(rng)];
    } else {
      a = std::discrete_distribution<std::size_t>(p.begin(), p.end())(rng);
    }
    tr.states.push_back(s);
    tr.actions.push_back(static_cast<Action>(a));
    tr.masks.push_back(mask);
    tr.forward_logprobs.push_back(std::log(p[a]));
    const auto next = env.step(s, static_cast<Action>(a));
    if (const auto* term = std::get_if<Terminal>(&next)) {
      tr.terminal = term->point;
      return tr;
    }
    prev = s;
    s = std::get<GridState>(next);
  }
}

/// Sum over moves of log P_B with P_B uniform over in-DAG parents.
inline double backward_logprob(const Trajectory& tr, const GridEnv& env) {
  double s = 0.0;
  for (std::size_t k = 1; k < tr.states.size(); ++k) {
    const auto n = env.parents(tr.states[k]).size();
    if (n == 0) throw std::logic_error("trajectory visits a state with no in-DAG parent");
    s -= std::log(static_cast<double>(n));
  }
  return s;
}

/// log Z + sum log P_F - log R - sum log P_B
inline double tb_residual(double log_z, double sum_log_pf, double reward, double sum_log_pb) {
  if (!(reward > 0.0)) throw std::invalid_argument("trajectory balance needs a strictly positive reward");
  return log_z + sum_log_pf - std::log(reward) - sum_log_pb;
}

inline double tb_loss(double log_z, double sum_log_pf, double reward, double sum_log_pb) {
  const double d = tb_residual(log_z, sum_log_pf, reward, sum_log_pb);
  return d * d;
}

inline double tb_loss(const Trajectory& tr, double reward, double log_z, const GridEnv& env) {
  return tb_loss(log_z, tr.sum_forward_logprob(), reward, backward_logprob(tr, env));
}

// ---------------------------------------------------------------------------
// Reward

/// Memoised terminal rewards. Only cells accepted by `eligible` are scored by
/// the surrogate (and counted); every other terminal gets the floor.
class RewardCache {
 public:
  using Scorer = std::function<double(GridPoint)>;
  using Eligibility = std::function<bool(GridPoint)>;

  RewardCache(Scorer scorer, Eligibility eligible, double floor = 1e-6)
      : scorer_(std::move(scorer)), eligible_(std::move(eligible)), floor_(floor) {
    if (!(floor > 0.0)) throw std::invalid_argument("reward floor must be positive");
  }

  double operator()(GridPoint p) {
    if (eligible_ && !eligible_(p)) return floor_;
    auto it = cache_.find(p);
    if (it == cache_.end()) it = cache_.emplace(p, scorer_(p) + floor_).first;
    return it->second;
  }

  [[nodiscard]] std::size_t calls() const noexcept { return cache_.size(); }
  [[nodiscard]] double floor() const noexcept { return floor_; }
  [[nodiscard]] bool contains(GridPoint p) const { return cache_.count(p) != 0; }
  void clear() { cache_.clear(); }
  void set_scorer(Scorer s) { scorer_ = std::move(s); }
  void set_eligibility(Eligibility e) { eligible_ = std::move(e); }

 private:
  Scorer scorer_;
  Eligibility eligible_;
  double floor_;
  std::map<GridPoint, double> cache_;
};

// ---------------------------------------------------------------------------
// Training

struct GfnConfig {
  ExplorationConfig explore;
  double learning_rate = 1e-4;
  double initial_partition = 10.0;  // log Z starts at log(this)
  int episodes = 50000;
  std::vector<int> snapshot_episodes{300, 1000, 2000};
  int density_window = 300;
};

struct EpisodeRecord {
  int episode = 0;
  double loss = 0.0;
  double log_z = 0.0;
  int length = 0;
  GridPoint terminal;
  std::size_t calls = 0;
};

/// Terminal histogram over the most recent trajectories; counts[j * size + i].
struct DensitySnapshot {
  int episode = 0;
  int size = 0;
  std::vector<int> counts;

  [[nodiscard]] int total() const {
    int s = 0;
    for (int c : counts) s += c;
    return s;
  }
};

/// Owns a policy, its optimiser state and the trainable log Z; persists
/// across active-learning iterations for warm starts.
template <ForwardPolicy P>
class GfnTrainer {
 public:
  GfnTrainer(P policy, const GfnConfig& cfg)
      : policy_(std::move(policy)), cfg_(cfg),
        log_z_("log_z", RowMatrix::Constant(1, 1, std::log(cfg.initial_partition))),
        adam_(nn::AdamConfig{cfg.learning_rate}) {}

  P& policy() noexcept { return policy_; }
  [[nodiscard]] double log_z() const noexcept { return log_z_.value(0, 0); }
  nn::AdamState& adam() noexcept { return adam_; }
  [[nodiscard]] const GfnConfig& config() const noexcept { return cfg_; }

  std::vector<nn::Param*> params() {
    auto ps = policy_.params();
    ps.push_back(&log_z_);
    return ps;
  }

  /// One TB update on a trajectory. The loss is evaluated under a fresh
  /// train-mode forward over every visited state.
  double update(const Trajectory& tr, double reward, const GridEnv& env, Engine& rng) {
    const double log_pb = backward_logprob(tr, env);
    for (nn::Param* p : params()) p->grad.setZero();
    const Tensor z = policy_.logits(std::span<const GridState>(tr.states), nn::Mode::train, rng);
    std::vector<std::array<double, kNumActions>> probs;
    double log_pf = 0.0;
    for (std::size_t k = 0; k < tr.states.size(); ++k) {
      probs.push_back(masked_distribution(z.values().data() + k * kNumActions, tr.masks[k]));
      log_pf += std::log(probs.back()[index(tr.actions[k])]);
    }
    const double delta = tb_residual(log_z(), log_pf, reward, log_pb);
    const double loss = delta * delta;
    if (!std::isfinite(loss)) throw NonFiniteError("trajectory balance loss is not finite");
    Tensor g(z.shape());
    for (std::size_t k = 0; k < tr.states.size(); ++k)
      for (std::size_t a = 0; a < kNumActions; ++a)
        if (tr.masks[k][a]) g[k * kNumActions + a] = 2.0 * delta * ((a == index(tr.actions[k]) ? 1.0 : 0.0) - probs[k][a]);
    policy_.backward(g);
    log_z_.grad(0, 0) = 2.0 * delta;
    nn::adam_step(adam_, params());
    return loss;
  }

  struct Observer {
    std::function<void(const EpisodeRecord&)> on_episode;
    std::function<void(const DensitySnapshot&)> on_snapshot;
  };

  /// Runs `episodes` TB episodes against `reward`. Returns the per-episode log.
  std::vector<EpisodeRecord> train(const GridEnv& env, RewardCache& reward, int episodes, Engine& rng,
                                   const Observer& obs = {}) {
    std::vector<EpisodeRecord> log;
    log.reserve(static_cast<std::size_t>(episodes));
    std::deque<GridPoint> window;
    std::set<int> snaps(cfg_.snapshot_episodes.begin(), cfg_.snapshot_episodes.end());
    for (int ep = 1; ep <= episodes; ++ep) {
      const Trajectory tr = sample_trajectory(policy_, env, cfg_.explore, rng);
      const double r = reward(tr.terminal);
      double loss = 0.0;
      try {
        loss = update(tr, r, env, rng);
      } catch (const NonFiniteError& e) {
        throw NonFiniteError(std::string(e.what()) + " at episode " + std::to_string(ep));
      }
      EpisodeRecord rec{ep, loss, log_z(), tr.length(), tr.terminal, reward.calls()};
      log.push_back(rec);
      if (obs.on_episode) obs.on_episode(rec);
      window.push_back(tr.terminal);
      if (static_cast<int>(window.size()) > cfg_.density_window) window.pop_front();
      if (snaps.count(ep) && obs.on_snapshot) {
        DensitySnapshot snap{ep, env.size, std::vector<int>(static_cast<std::size_t>(env.cell_count()), 0)};
        for (const auto& p : window) ++snap.counts[static_cast<std::size_t>(env.cell_index(p))];
        obs.on_snapshot(snap);
      }
    }
    return log;
  }

 private:
  P policy_;
  GfnConfig cfg_;
  nn::Param log_z_;
  nn::AdamState adam_;
};

struct TerminalBatch {
  std::vector<GridPoint> points;
  int rollouts = 0;
  int fallback = 0;  // slots filled uniformly from the pool after the budget ran out
};

/// Draws k distinct eligible terminals from the policy without exploration
/// noise; after 100 k rollouts any remaining slots come uniformly from `pool`.
template <ForwardPolicy P>
TerminalBatch sample_terminals(P& policy, const GridEnv& env, std::size_t k, const std::vector<GridPoint>& pool,
                               Engine& rng) {
  const std::set<GridPoint> pool_set(pool.begin(), pool.end());
  if (pool_set.size() < k) throw std::invalid_argument("sample_terminals: pool smaller than k");
  TerminalBatch out;
  std::set<GridPoint> chosen;
  const ExplorationConfig greedy{0.0};
  const int budget = 100 * static_cast<int>(k);
  while (chosen.size() < k && out.rollouts < budget) {
    ++out.rollouts;
    const auto tr = sample_trajectory(policy, env, greedy, rng);
    if (pool_set.count(tr.terminal) && chosen.insert(tr.terminal).second) out.points.push_back(tr.terminal);
  }
  if (chosen.size() < k) {
    std::vector<GridPoint> rest;
    for (const auto& p : pool)
      if (!chosen.count(p)) rest.push_back(p);
    std::shuffle(rest.begin(), rest.end(), rng);
    for (std::size_t n = 0; chosen.size() < k; ++n) {
      chosen.insert(rest[n]);
      out.points.push_back(rest[n]);
      ++out.fallback;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Output

inline void write_density_csv(std::ostream& os, const DensitySnapshot& s, const std::string& config_hash) {
  std::vector<std::string> cols{"j"};
  for (int i = 0; i < s.size; ++i) cols.push_back("i" + std::to_string(i));
  os << provenance_line(config_hash) << " episode=" << s.episode << '\n';
  for (std::size_t c = 0; c < cols.size(); ++c) os << (c ? "," : "") << cols[c];
  os << '\n';
  for (int j = 0; j < s.size; ++j) {
    os << j;
    for (int i = 0; i < s.size; ++i) os << ',' << s.counts[static_cast<std::size_t>(j * s.size + i)];
    os << '\n';
  }
}

inline void write_episode_header(std::ostream& os, const std::string& config_hash) {
  os << provenance_line(config_hash) << '\n' << "episode,loss,log_z,length,terminal_x,terminal_y,cumulative_calls\n";
}

inline void write_episode_row(std::ostream& os, const EpisodeRecord& r) {
  os << r.episode << ',' << format_double(r.loss) << ',' << format_double(r.log_z) << ',' << r.length << ','
     << r.terminal.i << ',' << r.terminal.j << ',' << r.calls << '\n';
}

}  // namespace gfnal
