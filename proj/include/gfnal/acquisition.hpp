#pragma once

#include "gfnal/embedding.hpp"
#include "gfnal/gflownet.hpp"
#include "gfnal/surrogate.hpp"

#include <algorithm>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace gfnal {

enum class Strategy { gflownet, bald, random };

inline const char* to_string(Strategy s) noexcept {
  switch (s) {
    case Strategy::gflownet: return "gflownet";
    case Strategy::bald: return "bald";
    case Strategy::random: return "random";
  }
  return "?";
}

inline Strategy parse_strategy(const std::string& s) {
  if (s == "gflownet" || s == "gfn") return Strategy::gflownet;
  if (s == "bald") return Strategy::bald;
  if (s == "random") return Strategy::random;
  throw std::invalid_argument("unknown strategy '" + s + "' (expected gflownet, bald or random)");
}

/// Surrogate scoring calls per iteration; the cumulative count is their sum.
class CallLedger {
 public:
  void record(std::size_t calls) { per_iteration_.push_back(calls); }
  [[nodiscard]] std::size_t cumulative() const {
    return std::accumulate(per_iteration_.begin(), per_iteration_.end(), std::size_t{0});
  }
  [[nodiscard]] const std::vector<std::size_t>& per_iteration() const noexcept { return per_iteration_; }

 private:
  std::vector<std::size_t> per_iteration_;
};

/// BALD score of one cell under a trained surrogate, with one fixed set of
/// dropout-mask streams shared by every cell.
struct MiScorer {
  const BnnModel* model = nullptr;
  const Tensor* latents = nullptr;  // row k = latent of cell k
  int grid = 0;
  RngStream masks;

  double operator()(GridPoint p) const {
    const std::size_t d = latents->features();
    const auto row = static_cast<std::size_t>(p.j * grid + p.i);
    std::vector<double> x(latents->values().begin() + static_cast<std::ptrdiff_t>(row * d),
                          latents->values().begin() + static_cast<std::ptrdiff_t>((row + 1) * d));
    return bald_mi(model->mc_predict(x, masks));
  }
};

struct Acquisition {
  std::vector<GridPoint> points;
  std::size_t calls = 0;
  int fallback = 0;
};

/// Scores every pool cell and returns the k highest; ties go to the
/// lexicographically smaller (i, j).
inline Acquisition acquire_bald(const std::vector<GridPoint>& pool, const std::function<double(GridPoint)>& score,
                                std::size_t k) {
  if (pool.size() < k) throw std::invalid_argument("acquire_bald: pool smaller than batch size");
  std::vector<std::pair<double, GridPoint>> scored;
  scored.reserve(pool.size());
  for (const auto& p : pool) scored.emplace_back(score(p), p);
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  Acquisition out{{}, pool.size(), 0};
  for (std::size_t n = 0; n < k; ++n) out.points.push_back(scored[n].second);
  return out;
}

/// Uniform sample without replacement; never touches the surrogate.
inline Acquisition acquire_random(const std::vector<GridPoint>& pool, std::size_t k, Engine& rng) {
  if (pool.size() < k) throw std::invalid_argument("acquire_random: pool smaller than batch size");
  std::vector<GridPoint> shuffled = pool;
  for (std::size_t n = 0; n < k; ++n) {
    std::uniform_int_distribution<std::size_t> pick(n, shuffled.size() - 1);
    std::swap(shuffled[n], shuffled[pick(rng)]);
  }
  shuffled.resize(k);
  return {std::move(shuffled), 0, 0};
}

/// Samples k pool cells from a trained policy. The reported call count is the
/// size of this iteration's reward cache after scoring the batch, i.e. every
/// unique terminal scored during training plus any new ones here.
template <ForwardPolicy P>
Acquisition acquire_gfn(P& policy, const GridEnv& env, RewardCache& cache, const std::vector<GridPoint>& pool,
                        std::size_t k, Engine& rng) {
  auto batch = sample_terminals(policy, env, k, pool, rng);
  for (const auto& p : batch.points) cache(p);
  return {std::move(batch.points), cache.calls(), batch.fallback};
}

}  // namespace gfnal
