#pragma once

#include "gfnal/csv.hpp"
#include "gfnal/grid_env.hpp"
#include "gfnal/nn/adam.hpp"
#include "gfnal/nn/losses.hpp"
#include "gfnal/nn/network.hpp"
#include "gfnal/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace gfnal {

struct PosEncConfig {
  std::size_t dim = 128;  // per coordinate
  double base = 10000.0;
};

/// Sinusoidal code: entry 2k = sin(c / base^(2k/dim)), entry 2k+1 = cos of the same angle.
inline std::vector<double> positional_encoding(double coord, const PosEncConfig& cfg) {
  if (cfg.dim == 0 || cfg.dim % 2 != 0) throw std::invalid_argument("positional encoding dimension must be even");
  std::vector<double> out(cfg.dim);
  for (std::size_t k = 0; k < cfg.dim / 2; ++k) {
    const double angle = coord / std::pow(cfg.base, static_cast<double>(2 * k) / static_cast<double>(cfg.dim));
    out[2 * k] = std::sin(angle);
    out[2 * k + 1] = std::cos(angle);
  }
  return out;
}

/// [PE(i); PE(j)]
inline std::vector<double> encode_point(int i, int j, const PosEncConfig& cfg) {
  auto out = positional_encoding(i, cfg);
  const auto y = positional_encoding(j, cfg);
  out.insert(out.end(), y.begin(), y.end());
  return out;
}

/// Positives lie within Chebyshev radius `positive_radius` of the anchor,
/// negatives at Chebyshev distance >= `negative_min_distance`.
struct TripletRule {
  int positive_radius = 2;
  int negative_min_distance = 10;

  void validate(int grid) const {
    if (!(positive_radius > 0 && positive_radius < negative_min_distance && negative_min_distance <= grid))
      throw std::invalid_argument("triplet rule requires 0 < r_p < r_n <= grid size");
  }
};

inline int chebyshev(GridPoint a, GridPoint b) noexcept { return std::max(std::abs(a.i - b.i), std::abs(a.j - b.j)); }

inline GridPoint sample_positive(GridPoint a, const TripletRule& rule, int grid, Engine& rng) {
  std::uniform_int_distribution<int> off(-rule.positive_radius, rule.positive_radius);
  for (;;) {
    const GridPoint p{a.i + off(rng), a.j + off(rng)};
    if (p != a && p.i >= 0 && p.j >= 0 && p.i < grid && p.j < grid) return p;
  }
}

inline GridPoint sample_negative(GridPoint a, const TripletRule& rule, int grid, Engine& rng) {
  std::uniform_int_distribution<int> coord(0, grid - 1);
  for (;;) {
    const GridPoint n{coord(rng), coord(rng)};
    if (chebyshev(a, n) >= rule.negative_min_distance) return n;
  }
}

struct AutoencoderConfig {
  PosEncConfig posenc;
  std::size_t hidden = 512;
  std::size_t layers = 6;
  std::size_t latent = 50;
  double triplet_weight = 0.1;
  double margin = 1.0;
  double learning_rate = 1e-3;
  int epochs = 50;
  std::size_t batch_size = 512;
  TripletRule triplets;
};

/// Reconstruction sum plus weighted triplet hinge sum.
inline double combine_ae_loss(double reconstruction, double triplet, double triplet_weight) noexcept {
  return reconstruction + triplet_weight * triplet;
}

struct AeLossParts {
  double reconstruction = 0.0;  // sum over batch of |x - x_hat|^2
  double triplet = 0.0;         // sum over batch of hinge terms
  double total = 0.0;
};

struct AeEpochLog {
  int epoch = 0;
  double loss = 0.0;
  double reconstruction_mse = 0.0;
};

class AutoencoderModel {
 public:
  AutoencoderModel() = default;

  AutoencoderModel(const AutoencoderConfig& cfg, int grid, Engine& rng) : cfg_(cfg), grid_(grid) {
    cfg.triplets.validate(grid);
    const std::size_t in = 2 * cfg.posenc.dim;
    encoder_ = nn::Network(nn::mlp_spec(in, cfg.hidden, cfg.layers, cfg.latent), rng);
    decoder_ = nn::Network(nn::mlp_spec(cfg.latent, cfg.hidden, cfg.layers, in), rng);
  }

  [[nodiscard]] const AutoencoderConfig& config() const noexcept { return cfg_; }
  [[nodiscard]] int grid_size() const noexcept { return grid_; }
  nn::Network& encoder() noexcept { return encoder_; }
  nn::Network& decoder() noexcept { return decoder_; }

  [[nodiscard]] Tensor inputs(const std::vector<GridPoint>& pts) const {
    const std::size_t in = 2 * cfg_.posenc.dim;
    Tensor x({pts.size(), in});
    for (std::size_t r = 0; r < pts.size(); ++r) {
      const auto v = encode_point(pts[r].i, pts[r].j, cfg_.posenc);
      std::copy(v.begin(), v.end(), x.values().begin() + static_cast<std::ptrdiff_t>(r * in));
    }
    return x;
  }

  /// Loss on one batch; accumulates gradients into encoder and decoder.
  AeLossParts loss_and_grad(const std::vector<GridPoint>& anchors, const std::vector<GridPoint>& positives,
                            const std::vector<GridPoint>& negatives) {
    const std::size_t b = anchors.size();
    std::vector<GridPoint> all = anchors;
    all.insert(all.end(), positives.begin(), positives.end());
    all.insert(all.end(), negatives.begin(), negatives.end());
    Engine unused(0);
    const Tensor x_all = inputs(all);
    const Tensor z_all = encoder_.forward(x_all, nn::Mode::train, unused);
    const std::size_t L = cfg_.latent, in = 2 * cfg_.posenc.dim;
    auto slice = [&](const Tensor& t, std::size_t part, std::size_t width) {
      Tensor s({b, width});
      std::copy_n(t.values().begin() + static_cast<std::ptrdiff_t>(part * b * width), b * width, s.values().begin());
      return s;
    };
    const Tensor za = slice(z_all, 0, L), zp = slice(z_all, 1, L), zn = slice(z_all, 2, L);
    const Tensor xa = slice(x_all, 0, in);
    const Tensor x_hat = decoder_.forward(za, nn::Mode::train, unused);

    AeLossParts parts;
    Tensor g_hat(x_hat.shape());
    for (std::size_t k = 0; k < x_hat.size(); ++k) {
      const double d = x_hat[k] - xa[k];
      parts.reconstruction += d * d;
      g_hat[k] = 2.0 * d;
    }
    const auto trip = nn::triplet_margin(za, zp, zn, cfg_.margin);
    parts.triplet = trip.loss;
    parts.total = combine_ae_loss(parts.reconstruction, parts.triplet, cfg_.triplet_weight);

    const Tensor gza = decoder_.backward(g_hat);
    Tensor gz(z_all.shape());
    const double w = cfg_.triplet_weight;
    for (std::size_t k = 0; k < b * L; ++k) {
      gz[k] = gza[k] + w * trip.grad_anchor[k];
      gz[b * L + k] = w * trip.grad_positive[k];
      gz[2 * b * L + k] = w * trip.grad_negative[k];
    }
    encoder_.backward(gz);
    return parts;
  }

  /// Mean per-element reconstruction error over the given points (no gradients kept).
  [[nodiscard]] double reconstruction_mse(const std::vector<GridPoint>& pts) {
    Engine unused(0);
    const Tensor x = inputs(pts);
    nn::Network enc = encoder_, dec = decoder_;
    const Tensor x_hat = dec.forward(enc.forward(x, nn::Mode::eval, unused), nn::Mode::eval, unused);
    return nn::mse(x, x_hat).loss;
  }

  /// Encodes every grid cell and freezes the result.
  void freeze() {
    std::vector<GridPoint> all;
    for (int k = 0; k < grid_ * grid_; ++k) all.push_back({k % grid_, k / grid_});
    Engine unused(0);
    nn::Network enc = encoder_;
    latents_ = enc.forward(inputs(all), nn::Mode::eval, unused);
  }

  [[nodiscard]] bool trained() const noexcept { return !latents_.empty(); }

  [[nodiscard]] std::vector<double> latent(int i, int j) const {
    if (!trained()) throw std::logic_error("autoencoder latent cache requested before training");
    if (i < 0 || j < 0 || i >= grid_ || j >= grid_) throw std::out_of_range("latent: cell outside the grid");
    const auto row = static_cast<std::size_t>(j * grid_ + i);
    const auto begin = latents_.values().begin() + static_cast<std::ptrdiff_t>(row * cfg_.latent);
    return {begin, begin + static_cast<std::ptrdiff_t>(cfg_.latent)};
  }

  /// Row k holds the latent code of cell k (k = j * size + i).
  [[nodiscard]] const Tensor& latent_table() const {
    if (!trained()) throw std::logic_error("autoencoder latent cache requested before training");
    return latents_;
  }

 private:
  AutoencoderConfig cfg_;
  int grid_ = 0;
  nn::Network encoder_, decoder_;
  Tensor latents_;
};

struct TrainedAutoencoder {
  AutoencoderModel model;
  std::vector<AeEpochLog> log;
  double initial_reconstruction_mse = 0.0;
};

/// Trains on every grid cell with freshly sampled triplets per batch, then
/// freezes the latent cache.
inline TrainedAutoencoder train_autoencoder(const AutoencoderConfig& cfg, int grid, std::uint64_t seed) {
  Engine init_rng = RngStream{derive_seed(seed, 0, "ae.init"), 0}.engine();
  Engine rng = RngStream{derive_seed(seed, 0, "ae.batches"), 0}.engine();
  TrainedAutoencoder out{AutoencoderModel(cfg, grid, init_rng), {}, 0.0};
  auto& model = out.model;
  std::vector<GridPoint> all;
  for (int k = 0; k < grid * grid; ++k) all.push_back({k % grid, k / grid});
  out.initial_reconstruction_mse = model.reconstruction_mse(all);

  nn::AdamState adam(nn::AdamConfig{cfg.learning_rate});
  auto params = model.encoder().params();
  for (auto* p : model.decoder().params()) params.push_back(p);

  std::vector<GridPoint> order = all;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<GridPoint> a(order.begin() + static_cast<std::ptrdiff_t>(start),
                               order.begin() + static_cast<std::ptrdiff_t>(end)),
          p, n;
      for (const auto& pt : a) {
        p.push_back(sample_positive(pt, cfg.triplets, grid, rng));
        n.push_back(sample_negative(pt, cfg.triplets, grid, rng));
      }
      model.encoder().zero_grad();
      model.decoder().zero_grad();
      const auto parts = model.loss_and_grad(a, p, n);
      if (!std::isfinite(parts.total))
        throw NonFiniteError("autoencoder diverged at epoch " + std::to_string(epoch) + " (loss " +
                             format_double(parts.total) + ")");
      nn::adam_step(adam, params);
      epoch_loss += parts.total;
    }
    out.log.push_back({epoch, epoch_loss, model.reconstruction_mse(all)});
  }
  model.freeze();
  return out;
}

/// Fraction of random (anchor, near, far) triplets whose latent distances keep
/// the spatial ordering.
inline double triplet_audit(const AutoencoderModel& model, const TripletRule& rule, int samples, Engine& rng) {
  const int grid = model.grid_size();
  std::uniform_int_distribution<int> coord(0, grid - 1);
  int ok = 0;
  for (int s = 0; s < samples; ++s) {
    const GridPoint a{coord(rng), coord(rng)};
    const GridPoint p = sample_positive(a, rule, grid, rng);
    const GridPoint n = sample_negative(a, rule, grid, rng);
    const auto za = model.latent(a.i, a.j), zp = model.latent(p.i, p.j), zn = model.latent(n.i, n.j);
    if (nn::squared_distance(za.data(), zp.data(), za.size()) < nn::squared_distance(za.data(), zn.data(), za.size())) ++ok;
  }
  return static_cast<double>(ok) / samples;
}

/// Smallest Euclidean distance between latent codes of two distinct cells.
inline double min_pairwise_latent_distance(const AutoencoderModel& model) {
  const Tensor& z = model.latent_table();
  const auto m = z.matrix();
  double best = std::numeric_limits<double>::infinity();
  for (Eigen::Index a = 0; a < m.rows(); ++a)
    for (Eigen::Index b = a + 1; b < m.rows(); ++b) best = std::min(best, (m.row(a) - m.row(b)).norm());
  return best;
}

/// Latent table as CSV: one row per cell in row-major order, columns i, j, z0..
inline void write_latent_table(std::ostream& os, const Tensor& z, int grid, const std::string& config_hash) {
  std::vector<std::string> cols{"i", "j"};
  const std::size_t L = z.features();
  for (std::size_t k = 0; k < L; ++k) cols.push_back("z" + std::to_string(k));
  CsvWriter w(os, config_hash, cols);
  for (int k = 0; k < grid * grid; ++k) {
    std::vector<std::string> row{std::to_string(k % grid), std::to_string(k / grid)};
    for (std::size_t c = 0; c < L; ++c) row.push_back(format_double(z[static_cast<std::size_t>(k) * L + c]));
    w.row(row);
  }
}

inline void write_latents_csv(std::ostream& os, const AutoencoderModel& model, const std::string& config_hash) {
  write_latent_table(os, model.latent_table(), model.grid_size(), config_hash);
}

inline Tensor read_latent_table(std::istream& is) {
  const CsvTable t = read_csv(is);
  const std::size_t ci = t.column("i"), cj = t.column("j");
  std::size_t L = 0;
  while (std::find(t.columns.begin(), t.columns.end(), "z" + std::to_string(L)) != t.columns.end()) ++L;
  if (L == 0) throw std::runtime_error("csv: missing column z0");
  const auto grid = static_cast<int>(std::lround(std::sqrt(static_cast<double>(t.rows.size()))));
  if (static_cast<std::size_t>(grid * grid) != t.rows.size()) throw std::runtime_error("latent csv: row count is not a square grid");
  Tensor z({t.rows.size(), L});
  for (const auto& r : t.rows) {
    const auto cell = static_cast<std::size_t>(std::stoi(r[cj]) * grid + std::stoi(r[ci]));
    for (std::size_t c = 0; c < L; ++c) z[cell * L + c] = std::stod(r[t.column("z" + std::to_string(c))]);
  }
  return z;
}

}  // namespace gfnal
