#pragma once

#include "gfnal/csv.hpp"
#include "gfnal/grid_env.hpp"
#include "gfnal/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace gfnal {

struct OracleConfig {
  int grid_size = 30;
  double noise_sigma = 0.1;
  double label_quantile = 0.01;  // fraction labelled positive (top tail)
  std::uint64_t seed = 0;
  int train_size = 100;
  int test_size = 100;

  void validate() const {
    if (grid_size < 2) throw std::invalid_argument("oracle.grid_size must be at least 2");
    if (!(noise_sigma >= 0.0)) throw std::invalid_argument("oracle.noise_sigma must be non-negative");
    if (!(label_quantile > 0.0 && label_quantile < 1.0)) throw std::invalid_argument("oracle.label_quantile must lie in (0, 1)");
    if (train_size < 1 || test_size < 0) throw std::invalid_argument("oracle split sizes must be positive");
  }
};

/// Noise-free synthetic landscape:
///   sin(2 pi i / 50) cos(2 pi j / 50) + i j / 10000 + exp(-((i-70)^2 + (j-30)^2) / (2 * 20^2))
inline double ground_truth(double i, double j) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  const double wave = std::sin(two_pi * i / 50.0) * std::cos(two_pi * j / 50.0);
  const double bilinear = i * j / 10000.0;
  const double bump = std::exp(-((i - 70.0) * (i - 70.0) + (j - 30.0) * (j - 30.0)) / (2.0 * 20.0 * 20.0));
  return wave + bilinear + bump;
}

inline double noisy_value(double i, double j, double sigma, Engine& rng) {
  if (sigma == 0.0) return ground_truth(i, j);
  return ground_truth(i, j) + std::normal_distribution<double>(0.0, sigma)(rng);
}

/// Upper (1 - q) quantile with linear interpolation between order statistics.
inline double compute_threshold(std::vector<double> values, double q) {
  if (values.empty()) throw std::invalid_argument("compute_threshold: empty value list");
  if (!(q > 0.0 && q < 1.0)) throw std::invalid_argument("compute_threshold: q must lie in (0, 1)");
  std::sort(values.begin(), values.end());
  const double pos = (1.0 - q) * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

/// Strictly above the threshold is positive.
inline bool label(double value, double threshold) noexcept { return value > threshold; }

enum class Split { train, pool, test };

inline const char* to_string(Split s) noexcept {
  switch (s) {
    case Split::train: return "train";
    case Split::pool: return "pool";
    case Split::test: return "test";
  }
  return "?";
}

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "pool") return Split::pool;
  if (s == "test") return Split::test;
  throw std::invalid_argument("unknown split tag: " + s);
}

struct LabeledEntry {
  GridPoint point;
  double value = 0.0;
  bool positive = false;
  Split split = Split::pool;
};

/// Every grid cell with its frozen noisy value and label. Entry k is cell
/// k in row-major order (k = j * size + i).
struct LabeledDataset {
  int size = 0;
  double threshold = 0.0;
  std::vector<LabeledEntry> entries;

  [[nodiscard]] const LabeledEntry& at(GridPoint p) const { return entries.at(static_cast<std::size_t>(p.j * size + p.i)); }
  LabeledEntry& at(GridPoint p) { return entries.at(static_cast<std::size_t>(p.j * size + p.i)); }

  [[nodiscard]] std::vector<GridPoint> points(Split s) const {
    std::vector<GridPoint> out;
    for (const auto& e : entries)
      if (e.split == s) out.push_back(e.point);
    return out;
  }

  [[nodiscard]] std::size_t count(Split s) const {
    return static_cast<std::size_t>(std::count_if(entries.begin(), entries.end(), [s](const auto& e) { return e.split == s; }));
  }

  [[nodiscard]] std::size_t positives() const {
    return static_cast<std::size_t>(std::count_if(entries.begin(), entries.end(), [](const auto& e) { return e.positive; }));
  }

  /// Oracle query: the frozen label of a cell.
  [[nodiscard]] bool query(GridPoint p) const { return at(p).positive; }

  void move_to_train(GridPoint p) {
    auto& e = at(p);
    if (e.split != Split::pool) throw std::logic_error("only pool points can be acquired");
    e.split = Split::train;
  }
};

/// Draws noise once per cell, freezes the threshold over all cells, and
/// samples disjoint uniform train and test sets; the rest form the pool.
inline LabeledDataset make_splits(const OracleConfig& cfg) {
  cfg.validate();
  const int n = cfg.grid_size * cfg.grid_size;
  if (cfg.train_size + cfg.test_size > n) throw std::invalid_argument("grid too small for the requested splits");
  LabeledDataset d;
  d.size = cfg.grid_size;
  d.entries.resize(static_cast<std::size_t>(n));
  Engine noise_rng = RngStream{derive_seed(cfg.seed, 0, "oracle.noise"), 0}.engine();
  std::vector<double> values(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) {
    const GridPoint p{k % cfg.grid_size, k / cfg.grid_size};
    values[static_cast<std::size_t>(k)] = noisy_value(p.i, p.j, cfg.noise_sigma, noise_rng);
    d.entries[static_cast<std::size_t>(k)] = {p, values[static_cast<std::size_t>(k)], false, Split::pool};
  }
  d.threshold = compute_threshold(values, cfg.label_quantile);
  for (auto& e : d.entries) e.positive = label(e.value, d.threshold);

  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  Engine split_rng = RngStream{derive_seed(cfg.seed, 0, "oracle.splits"), 0}.engine();
  std::shuffle(order.begin(), order.end(), split_rng);
  for (int k = 0; k < cfg.train_size; ++k) d.entries[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])].split = Split::train;
  for (int k = cfg.train_size; k < cfg.train_size + cfg.test_size; ++k)
    d.entries[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])].split = Split::test;
  return d;
}

inline void write_dataset_csv(std::ostream& os, const LabeledDataset& d, const std::string& config_hash) {
  os << provenance_line(config_hash) << " threshold=" << format_double(d.threshold) << '\n';
  os << "i,j,value,label,split\n";
  for (const auto& e : d.entries)
    os << e.point.i << ',' << e.point.j << ',' << format_double(e.value) << ',' << (e.positive ? 1 : 0) << ','
       << to_string(e.split) << '\n';
}

/// Reads a dataset written by write_dataset_csv. Labels are taken from the
/// file and checked against the stored threshold.
inline LabeledDataset read_dataset_csv(std::istream& is) {
  const CsvTable t = read_csv(is);
  const auto pos = t.provenance.find("threshold=");
  if (pos == std::string::npos) throw std::runtime_error("dataset csv: missing threshold in header comment");
  LabeledDataset d;
  d.threshold = std::stod(t.provenance.substr(pos + 10));
  const std::size_t ci = t.column("i"), cj = t.column("j"), cv = t.column("value"), cl = t.column("label"),
                    cs = t.column("split");
  const auto n = t.rows.size();
  d.size = static_cast<int>(std::lround(std::sqrt(static_cast<double>(n))));
  if (static_cast<std::size_t>(d.size * d.size) != n) throw std::runtime_error("dataset csv: row count is not a square grid");
  d.entries.resize(n);
  for (const auto& r : t.rows) {
    LabeledEntry e{{std::stoi(r[ci]), std::stoi(r[cj])}, std::stod(r[cv]), r[cl] == "1", parse_split(r[cs])};
    if (e.positive != label(e.value, d.threshold)) throw std::runtime_error("dataset csv: label inconsistent with threshold");
    d.at(e.point) = e;
  }
  return d;
}

}  // namespace gfnal
