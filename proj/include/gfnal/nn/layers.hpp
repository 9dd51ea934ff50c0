#pragma once

#include "gfnal/rng.hpp"
#include "gfnal/tensor.hpp"

#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace gfnal::nn {

/// Dropout is active in train and mc_dropout, identity in eval.
enum class Mode { train, eval, mc_dropout };

inline bool dropout_active(Mode m) noexcept { return m != Mode::eval; }

class NoForwardError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// A trainable array and its accumulated gradient.
struct Param {
  std::string name;
  RowMatrix value;
  RowMatrix grad;

  Param() = default;
  Param(std::string n, RowMatrix v) : name(std::move(n)), value(std::move(v)), grad(RowMatrix::Zero(value.rows(), value.cols())) {}
};

class Layer {
 public:
  virtual ~Layer() = default;

  virtual Tensor forward(const Tensor& x, Mode mode, Engine& rng) = 0;
  /// Propagates dL/d(output) to dL/d(input) and adds parameter gradients.
  virtual Tensor backward(const Tensor& grad_out) = 0;
  virtual std::vector<Param*> params() { return {}; }
  [[nodiscard]] virtual std::unique_ptr<Layer> clone() const = 0;
  [[nodiscard]] virtual std::string kind() const = 0;

 protected:
  void require_cache(bool has, const char* who) const {
    if (!has) throw NoForwardError(std::string(who) + ": backward called without a recorded forward pass");
  }
};

inline void check_features(const Tensor& x, std::size_t expected, const char* who) {
  if (x.features() != expected)
    throw ShapeError(std::string(who) + ": expected " + std::to_string(expected) + " input features, got shape " +
                     to_string(x.shape()));
}

inline Shape with_features(Shape s, std::size_t f) {
  s.back() = f;
  return s;
}

/// Affine map y = x W + b. Weights are fan-in scaled uniform (He) at init.
class Dense final : public Layer {
 public:
  Dense(std::size_t in, std::size_t out, Engine& rng, bool bias = true) : in_(in), out_(out), has_bias_(bias) {
    const double bound = std::sqrt(6.0 / static_cast<double>(in));
    std::uniform_real_distribution<double> u(-bound, bound);
    RowMatrix w(in, out);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = u(rng);
    weight_ = Param("weight", std::move(w));
    if (has_bias_) bias_ = Param("bias", RowMatrix::Zero(1, out));
  }

  Tensor forward(const Tensor& x, Mode, Engine&) override {
    check_features(x, in_, "Dense");
    input_ = x;
    cached_ = true;
    Tensor y(with_features(x.shape(), out_));
    y.matrix().noalias() = x.matrix() * weight_.value;
    if (has_bias_) y.matrix().rowwise() += bias_.value.row(0);
    return y;
  }

  Tensor backward(const Tensor& g) override {
    require_cache(cached_, "Dense");
    check_features(g, out_, "Dense backward");
    weight_.grad.noalias() += input_.matrix().transpose() * g.matrix();
    if (has_bias_) bias_.grad.row(0) += g.matrix().colwise().sum();
    Tensor gx(input_.shape());
    gx.matrix().noalias() = g.matrix() * weight_.value.transpose();
    return gx;
  }

  std::vector<Param*> params() override {
    if (has_bias_) return {&weight_, &bias_};
    return {&weight_};
  }
  [[nodiscard]] std::unique_ptr<Layer> clone() const override { return std::make_unique<Dense>(*this); }
  [[nodiscard]] std::string kind() const override { return has_bias_ ? "Dense" : "LinearProjection"; }

  [[nodiscard]] std::size_t in_features() const noexcept { return in_; }
  [[nodiscard]] std::size_t out_features() const noexcept { return out_; }
  Param& weight() noexcept { return weight_; }
  Param& bias() noexcept { return bias_; }

 private:
  std::size_t in_, out_;
  bool has_bias_;
  Param weight_, bias_;
  Tensor input_;
  bool cached_ = false;
};

enum class ActivationKind { relu, leaky_relu };

class Activation final : public Layer {
 public:
  explicit Activation(ActivationKind k, double slope = 0.01) : kind_(k), slope_(k == ActivationKind::relu ? 0.0 : slope) {}

  Tensor forward(const Tensor& x, Mode, Engine&) override {
    input_ = x;
    cached_ = true;
    Tensor y = x;
    for (double& v : y.values())
      if (v < 0.0) v *= slope_;
    return y;
  }

  Tensor backward(const Tensor& g) override {
    require_cache(cached_, "Activation");
    Tensor gx = g;
    for (std::size_t i = 0; i < gx.size(); ++i)
      if (input_[i] < 0.0) gx[i] *= slope_;
    return gx;
  }

  [[nodiscard]] std::unique_ptr<Layer> clone() const override { return std::make_unique<Activation>(*this); }
  [[nodiscard]] std::string kind() const override { return kind_ == ActivationKind::relu ? "ReLU" : "LeakyReLU"; }

 private:
  ActivationKind kind_;
  double slope_;
  Tensor input_;
  bool cached_ = false;
};

/// Inverted dropout: survivors are scaled by 1/(1-rate) at train time.
class Dropout final : public Layer {
 public:
  explicit Dropout(double rate) : rate_(rate) {
    if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("dropout rate must lie in [0, 1)");
  }

  Tensor forward(const Tensor& x, Mode mode, Engine& rng) override {
    cached_ = true;
    active_ = dropout_active(mode) && rate_ > 0.0;
    if (!active_) return x;
    mask_.assign(x.size(), 0.0);
    const double keep_scale = 1.0 / (1.0 - rate_);
    Tensor y = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
      mask_[i] = uniform01(rng) < rate_ ? 0.0 : keep_scale;
      y[i] *= mask_[i];
    }
    return y;
  }

  Tensor backward(const Tensor& g) override {
    require_cache(cached_, "Dropout");
    if (!active_) return g;
    Tensor gx = g;
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] *= mask_[i];
    return gx;
  }

  [[nodiscard]] std::unique_ptr<Layer> clone() const override { return std::make_unique<Dropout>(*this); }
  [[nodiscard]] std::string kind() const override { return "Dropout"; }
  [[nodiscard]] double rate() const noexcept { return rate_; }
  [[nodiscard]] const std::vector<double>& mask() const noexcept { return mask_; }

 private:
  double rate_;
  std::vector<double> mask_;
  bool active_ = false;
  bool cached_ = false;
};

class LayerNorm final : public Layer {
 public:
  explicit LayerNorm(std::size_t dim, double eps = 1e-5)
      : dim_(dim), eps_(eps), gain_("gain", RowMatrix::Ones(1, dim)), shift_("shift", RowMatrix::Zero(1, dim)) {}

  Tensor forward(const Tensor& x, Mode, Engine&) override {
    check_features(x, dim_, "LayerNorm");
    cached_ = true;
    shape_ = x.shape();
    const auto xm = x.matrix();
    const Eigen::Index n = xm.rows();
    normed_.resize(n, static_cast<Eigen::Index>(dim_));
    inv_std_.resize(n);
    for (Eigen::Index r = 0; r < n; ++r) {
      const double mean = xm.row(r).mean();
      const double var = (xm.row(r).array() - mean).square().mean();
      inv_std_[r] = 1.0 / std::sqrt(var + eps_);
      normed_.row(r) = (xm.row(r).array() - mean) * inv_std_[r];
    }
    Tensor y(shape_);
    y.matrix() = (normed_.array().rowwise() * gain_.value.row(0).array()).rowwise() + shift_.value.row(0).array();
    return y;
  }

  Tensor backward(const Tensor& g) override {
    require_cache(cached_, "LayerNorm");
    const auto gm = g.matrix();
    gain_.grad.row(0) += (gm.array() * normed_.array()).colwise().sum().matrix();
    shift_.grad.row(0) += gm.colwise().sum();
    Tensor gx(shape_);
    auto gxm = gx.matrix();
    const double d = static_cast<double>(dim_);
    for (Eigen::Index r = 0; r < gm.rows(); ++r) {
      Eigen::RowVectorXd gn = gm.row(r).array() * gain_.value.row(0).array();
      const double mean_gn = gn.mean();
      const double mean_gn_x = gn.dot(normed_.row(r)) / d;
      gxm.row(r) = inv_std_[r] * (gn.array() - mean_gn - normed_.row(r).array() * mean_gn_x);
    }
    return gx;
  }

  std::vector<Param*> params() override { return {&gain_, &shift_}; }
  [[nodiscard]] std::unique_ptr<Layer> clone() const override { return std::make_unique<LayerNorm>(*this); }
  [[nodiscard]] std::string kind() const override { return "LayerNorm"; }

 private:
  std::size_t dim_;
  double eps_;
  Param gain_, shift_;
  RowMatrix normed_;
  Eigen::VectorXd inv_std_;
  Shape shape_;
  bool cached_ = false;
};

/// Multi-head scaled dot-product self-attention. Input is [..., S, hidden];
/// a rank-2 input [B, hidden] is read as B sequences of length one.
class SelfAttention final : public Layer {
 public:
  SelfAttention(std::size_t hidden, std::size_t heads, Engine& rng)
      : hidden_(hidden), heads_(heads), q_(hidden, hidden, rng), k_(hidden, hidden, rng), v_(hidden, hidden, rng),
        o_(hidden, hidden, rng) {
    if (heads == 0 || hidden % heads != 0) throw std::invalid_argument("attention heads must divide hidden size");
  }

  Tensor forward(const Tensor& x, Mode mode, Engine& rng) override {
    check_features(x, hidden_, "SelfAttention");
    cached_ = true;
    seq_ = x.shape().size() >= 3 ? x.shape()[x.shape().size() - 2] : 1;
    const std::size_t rows = x.rows();
    const Shape flat{rows, hidden_};
    const Tensor xf = x.reshaped(flat);
    // A single key makes every attention weight 1, so the mixed values are V itself.
    if (seq_ == 1) {
      Tensor mixed = v_.forward(xf, mode, rng);
      return o_.forward(mixed, mode, rng).reshaped(x.shape());
    }
    q_out_ = q_.forward(xf, mode, rng);
    k_out_ = k_.forward(xf, mode, rng);
    v_out_ = v_.forward(xf, mode, rng);
    const std::size_t batches = rows / seq_;
    const std::size_t dh = hidden_ / heads_;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    probs_.assign(batches * heads_, RowMatrix());
    Tensor mixed(flat);
    auto qm = q_out_.matrix();
    auto km = k_out_.matrix();
    auto vm = v_out_.matrix();
    auto mm = mixed.matrix();
    for (std::size_t b = 0; b < batches; ++b) {
      const auto r0 = static_cast<Eigen::Index>(b * seq_);
      const auto s = static_cast<Eigen::Index>(seq_);
      for (std::size_t h = 0; h < heads_; ++h) {
        const auto c0 = static_cast<Eigen::Index>(h * dh);
        const auto d = static_cast<Eigen::Index>(dh);
        RowMatrix scores = qm.block(r0, c0, s, d) * km.block(r0, c0, s, d).transpose() * scale;
        for (Eigen::Index i = 0; i < s; ++i) {
          const double mx = scores.row(i).maxCoeff();
          scores.row(i) = (scores.row(i).array() - mx).exp();
          scores.row(i) /= scores.row(i).sum();
        }
        mm.block(r0, c0, s, d).noalias() = scores * vm.block(r0, c0, s, d);
        probs_[b * heads_ + h] = std::move(scores);
      }
    }
    return o_.forward(mixed, mode, rng).reshaped(x.shape());
  }

  Tensor backward(const Tensor& g) override {
    require_cache(cached_, "SelfAttention");
    const Shape out_shape = g.shape();
    const std::size_t rows = g.rows();
    const Shape flat{rows, hidden_};
    Tensor gmixed = o_.backward(g.reshaped(flat));
    if (seq_ == 1) return v_.backward(gmixed).reshaped(out_shape);

    const std::size_t batches = rows / seq_;
    const std::size_t dh = hidden_ / heads_;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    Tensor gq(flat), gk(flat), gv(flat);
    auto qm = q_out_.matrix();
    auto km = k_out_.matrix();
    auto vm = v_out_.matrix();
    auto gmm = gmixed.matrix();
    for (std::size_t b = 0; b < batches; ++b) {
      const auto r0 = static_cast<Eigen::Index>(b * seq_);
      const auto s = static_cast<Eigen::Index>(seq_);
      for (std::size_t h = 0; h < heads_; ++h) {
        const auto c0 = static_cast<Eigen::Index>(h * dh);
        const auto d = static_cast<Eigen::Index>(dh);
        const RowMatrix& p = probs_[b * heads_ + h];
        const RowMatrix go = gmm.block(r0, c0, s, d);
        gv.matrix().block(r0, c0, s, d).noalias() = p.transpose() * go;
        RowMatrix gp = go * vm.block(r0, c0, s, d).transpose();
        const Eigen::VectorXd dots = (gp.array() * p.array()).rowwise().sum();
        RowMatrix gs = (p.array() * (gp.array().colwise() - dots.array())).matrix() * scale;
        gq.matrix().block(r0, c0, s, d).noalias() = gs * km.block(r0, c0, s, d);
        gk.matrix().block(r0, c0, s, d).noalias() = gs.transpose() * qm.block(r0, c0, s, d);
      }
    }
    Tensor gx = q_.backward(gq);
    gx.matrix() += k_.backward(gk).matrix();
    gx.matrix() += v_.backward(gv).matrix();
    return gx.reshaped(out_shape);
  }

  std::vector<Param*> params() override {
    std::vector<Param*> out;
    for (Dense* d : {&q_, &k_, &v_, &o_})
      for (Param* p : d->params()) out.push_back(p);
    return out;
  }
  [[nodiscard]] std::unique_ptr<Layer> clone() const override { return std::make_unique<SelfAttention>(*this); }
  [[nodiscard]] std::string kind() const override { return "SelfAttention"; }

 private:
  std::size_t hidden_, heads_;
  Dense q_, k_, v_, o_;
  Tensor q_out_, k_out_, v_out_;
  std::vector<RowMatrix> probs_;
  std::size_t seq_ = 1;
  bool cached_ = false;
};

/// Pre-norm encoder block:
///   h = x + drop(attn(ln1(x)));  y = h + drop(ff2(drop(act(ff1(ln2(h))))))
class TransformerEncoderLayer final : public Layer {
 public:
  TransformerEncoderLayer(std::size_t hidden, std::size_t heads, std::size_t ff_dim, double dropout, Engine& rng,
                          double slope = 0.01)
      : hidden_(hidden), ln1_(hidden), attn_(hidden, heads, rng), drop1_(dropout), ln2_(hidden),
        ff1_(hidden, ff_dim, rng), act_(ActivationKind::leaky_relu, slope), drop_ff_(dropout), ff2_(ff_dim, hidden, rng),
        drop2_(dropout) {}

  Tensor forward(const Tensor& x, Mode mode, Engine& rng) override {
    check_features(x, hidden_, "TransformerEncoderLayer");
    cached_ = true;
    Tensor h = drop1_.forward(attn_.forward(ln1_.forward(x, mode, rng), mode, rng), mode, rng);
    h.matrix() += x.matrix();
    Tensor f = ff1_.forward(ln2_.forward(h, mode, rng), mode, rng);
    f = drop_ff_.forward(act_.forward(f, mode, rng), mode, rng);
    Tensor y = drop2_.forward(ff2_.forward(f, mode, rng), mode, rng);
    y.matrix() += h.matrix();
    return y;
  }

  Tensor backward(const Tensor& g) override {
    require_cache(cached_, "TransformerEncoderLayer");
    Tensor gf = ff2_.backward(drop2_.backward(g));
    gf = ff1_.backward(act_.backward(drop_ff_.backward(gf)));
    Tensor gh = ln2_.backward(gf);
    gh.matrix() += g.matrix();
    Tensor gx = ln1_.backward(attn_.backward(drop1_.backward(gh)));
    gx.matrix() += gh.matrix();
    return gx;
  }

  std::vector<Param*> params() override {
    std::vector<Param*> out;
    for (Layer* l : std::initializer_list<Layer*>{&ln1_, &attn_, &ln2_, &ff1_, &ff2_})
      for (Param* p : l->params()) out.push_back(p);
    return out;
  }
  [[nodiscard]] std::unique_ptr<Layer> clone() const override {
    return std::make_unique<TransformerEncoderLayer>(*this);
  }
  [[nodiscard]] std::string kind() const override { return "TransformerEncoderLayer"; }

 private:
  std::size_t hidden_;
  LayerNorm ln1_;
  SelfAttention attn_;
  Dropout drop1_;
  LayerNorm ln2_;
  Dense ff1_;
  Activation act_;
  Dropout drop_ff_;
  Dense ff2_;
  Dropout drop2_;
  bool cached_ = false;
};

}  // namespace gfnal::nn
