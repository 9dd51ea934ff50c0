#pragma once

#include "gfnal/nn/adam.hpp"
#include "gfnal/nn/losses.hpp"
#include "gfnal/nn/network.hpp"
#include "gfnal/nn/serialize.hpp"
#include "gfnal/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace gfnal {

struct SurrogateConfig {
  std::size_t input_dim = 50;
  std::size_t hidden = 256;
  std::size_t hidden_layers = 1;
  double dropout = 0.1;
  int mc_passes = 3;
  double learning_rate = 1e-3;
  double weight_decay = 1e-4;
  int epochs = 7;
  std::size_t batch_size = 32;
};

struct MixupConfig {
  bool enabled = true;
  double target_ratio = 1.0;  // minority : majority after augmentation
};

/// K stochastic class-probability rows from MC-dropout passes.
struct EnsemblePrediction {
  std::vector<std::vector<double>> probs;

  [[nodiscard]] std::vector<double> mean() const {
    std::vector<double> m(probs.empty() ? 0 : probs.front().size(), 0.0);
    for (const auto& r : probs)
      for (std::size_t c = 0; c < m.size(); ++c) m[c] += r[c];
    for (double& v : m) v /= static_cast<double>(probs.size());
    return m;
  }
};

/// Shannon entropy in nats with 0 log 0 = 0.
inline double entropy(const std::vector<double>& p) {
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log(v);
  return h;
}

/// BALD mutual information H[mean row] - mean H[row], in nats, clamped at 0.
inline double bald_mi(const EnsemblePrediction& pred) {
  if (pred.probs.empty()) throw std::invalid_argument("bald_mi: empty ensemble");
  const std::size_t classes = pred.probs.front().size();
  double mean_entropy = 0.0;
  for (const auto& row : pred.probs) {
    if (row.size() != classes) throw std::invalid_argument("bald_mi: ragged ensemble");
    double s = 0.0;
    for (double v : row) {
      if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("bald_mi: probability outside [0, 1]");
      s += v;
    }
    if (std::abs(s - 1.0) > 1e-9) throw std::invalid_argument("bald_mi: row does not sum to 1");
    mean_entropy += entropy(row);
  }
  mean_entropy /= static_cast<double>(pred.probs.size());
  return std::max(0.0, entropy(pred.mean()) - mean_entropy);
}

struct LabeledLatent {
  std::vector<double> latent;
  int label = 0;
};

/// lambda * v1 + (1 - lambda) * v2 for two samples of the same class.
inline LabeledLatent mixup(const LabeledLatent& a, const LabeledLatent& b, double lambda) {
  if (a.label != b.label) throw std::invalid_argument("mixup: samples belong to different classes");
  if (a.latent.size() != b.latent.size()) throw std::invalid_argument("mixup: dimension mismatch");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw std::invalid_argument("mixup: lambda must lie in [0, 1]");
  LabeledLatent out{std::vector<double>(a.latent.size()), a.label};
  for (std::size_t k = 0; k < out.latent.size(); ++k) out.latent[k] = lambda * a.latent[k] + (1.0 - lambda) * b.latent[k];
  return out;
}

/// Adds same-class mixup samples of the minority class until it reaches
/// target_ratio times the majority count. A class with no examples is left alone.
inline std::vector<LabeledLatent> augment_with_mixup(std::vector<LabeledLatent> data, const MixupConfig& cfg, Engine& rng) {
  if (!cfg.enabled || data.empty()) return data;
  std::vector<std::size_t> by_class[2];
  for (std::size_t k = 0; k < data.size(); ++k) by_class[data[k].label == 1 ? 1 : 0].push_back(k);
  const int minority = by_class[1].size() <= by_class[0].size() ? 1 : 0;
  const auto& members = by_class[minority];
  if (members.empty()) return data;
  const auto target = static_cast<std::size_t>(std::ceil(cfg.target_ratio * static_cast<double>(by_class[1 - minority].size())));
  std::uniform_int_distribution<std::size_t> pick(0, members.size() - 1);
  std::uniform_real_distribution<double> lam(0.0, 1.0);
  for (std::size_t have = members.size(); have < target; ++have) {
    const auto& a = data[members[pick(rng)]];
    const auto& b = data[members[pick(rng)]];
    data.push_back(mixup(a, b, lam(rng)));
  }
  return data;
}

class BnnModel {
 public:
  BnnModel() = default;
  BnnModel(const SurrogateConfig& cfg, Engine& rng)
      : cfg_(cfg), net_(nn::mlp_spec(cfg.input_dim, cfg.hidden, cfg.hidden_layers, 2, cfg.dropout), rng) {}

  [[nodiscard]] const SurrogateConfig& config() const noexcept { return cfg_; }
  nn::Network& network() noexcept { return net_; }
  [[nodiscard]] bool trained() const noexcept { return trained_; }
  [[nodiscard]] double final_loss() const noexcept { return final_loss_; }
  void mark_trained(double loss) noexcept {
    trained_ = true;
    final_loss_ = loss;
  }

  void save(std::ostream& os) { nn::save_params(os, net_.params()); }
  void load(std::istream& is, double final_loss) {
    nn::load_params(is, net_.params());
    mark_trained(final_loss);
  }

  /// K forward passes with dropout active; pass k draws its masks from
  /// stream.substream(k), so a point's prediction depends only on (stream, x).
  [[nodiscard]] EnsemblePrediction mc_predict(const std::vector<double>& x, int passes, const RngStream& stream) const {
    if (!trained_) throw std::logic_error("mc_predict called on an untrained surrogate");
    if (passes < 1) throw std::invalid_argument("mc_predict: need at least one pass");
    nn::Network net = net_;
    EnsemblePrediction out;
    const Tensor in = Tensor::row(x);
    for (int k = 0; k < passes; ++k) {
      Engine eng = stream.substream(static_cast<std::uint64_t>(k)).engine();
      const Tensor logits = net.forward(in, nn::Mode::mc_dropout, eng);
      out.probs.push_back(nn::softmax(logits.values()));
    }
    return out;
  }

  [[nodiscard]] EnsemblePrediction mc_predict(const std::vector<double>& x, const RngStream& stream) const {
    return mc_predict(x, cfg_.mc_passes, stream);
  }

  /// Positive iff class 1 wins under the mean of the dropout rows.
  [[nodiscard]] bool predict_positive(const std::vector<double>& x, const RngStream& stream) const {
    const auto m = mc_predict(x, stream).mean();
    return m[1] > m[0];
  }

 private:
  SurrogateConfig cfg_;
  nn::Network net_;
  bool trained_ = false;
  double final_loss_ = 0.0;
};

struct TrainSummary {
  std::size_t natural_size = 0;
  std::size_t augmented_size = 0;
  double final_loss = 0.0;  // mean cross-entropy over the last epoch
};

/// Fresh model trained from scratch on the (mixup-augmented) set.
inline BnnModel train_surrogate(const std::vector<LabeledLatent>& data, const SurrogateConfig& cfg, const MixupConfig& mix,
                                std::uint64_t seed, TrainSummary* summary = nullptr) {
  if (data.empty()) throw std::invalid_argument("train_surrogate: empty training set");
  Engine init_rng = RngStream{derive_seed(seed, 0, "surrogate.init"), 0}.engine();
  Engine aug_rng = RngStream{derive_seed(seed, 0, "surrogate.mixup"), 0}.engine();
  Engine rng = RngStream{derive_seed(seed, 0, "surrogate.batches"), 0}.engine();
  BnnModel model(cfg, init_rng);
  const auto train = augment_with_mixup(data, mix, aug_rng);
  nn::AdamState adam(nn::AdamConfig{cfg.learning_rate, 0.9, 0.999, 1e-8, cfg.weight_decay});
  auto params = model.network().params();
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  double last_epoch_loss = 0.0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      Tensor x({end - start, cfg.input_dim});
      std::vector<int> y;
      for (std::size_t r = start; r < end; ++r) {
        const auto& s = train[order[r]];
        if (s.latent.size() != cfg.input_dim) throw ShapeError("train_surrogate: latent dimension mismatch");
        std::copy(s.latent.begin(), s.latent.end(), x.values().begin() + static_cast<std::ptrdiff_t>((r - start) * cfg.input_dim));
        y.push_back(s.label);
      }
      model.network().zero_grad();
      const Tensor logits = model.network().forward(x, nn::Mode::train, rng);
      auto ce = nn::cross_entropy(logits, y);
      if (!std::isfinite(ce.loss)) throw NonFiniteError("surrogate training diverged at epoch " + std::to_string(epoch));
      total += ce.loss;
      const double inv = 1.0 / static_cast<double>(end - start);
      for (double& g : ce.grad.values()) g *= inv;
      model.network().backward(ce.grad);
      nn::adam_step(adam, params);
    }
    last_epoch_loss = total / static_cast<double>(train.size());
  }
  model.mark_trained(last_epoch_loss);
  if (summary) *summary = {data.size(), train.size(), last_epoch_loss};
  return model;
}

/// F1 of the positive class; 0 when precision or recall is undefined.
inline double f1_score(const std::vector<bool>& predicted, const std::vector<bool>& actual) {
  if (predicted.size() != actual.size()) throw std::invalid_argument("f1_score: length mismatch");
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t k = 0; k < predicted.size(); ++k) {
    if (predicted[k] && actual[k]) ++tp;
    else if (predicted[k]) ++fp;
    else if (actual[k]) ++fn;
  }
  const double denom = 2.0 * static_cast<double>(tp) + static_cast<double>(fp) + static_cast<double>(fn);
  return denom == 0.0 ? 0.0 : 2.0 * static_cast<double>(tp) / denom;
}

}  // namespace gfnal
