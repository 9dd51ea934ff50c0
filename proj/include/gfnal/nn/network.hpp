#pragma once

#include "gfnal/nn/layers.hpp"

#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace gfnal::nn {

struct DenseSpec {
  std::size_t in = 0, out = 0;
};
struct ProjectionSpec {
  std::size_t in = 0, out = 0;
};
struct ActivationSpec {
  ActivationKind kind = ActivationKind::relu;
  double slope = 0.01;
};
struct DropoutSpec {
  double rate = 0.0;
};
struct TransformerSpec {
  std::size_t hidden = 0, heads = 1, ff_dim = 0;
  double dropout = 0.0;
};

using LayerSpec = std::variant<DenseSpec, ActivationSpec, DropoutSpec, TransformerSpec, ProjectionSpec>;

struct NetworkSpec {
  std::vector<LayerSpec> layers;

  /// Input width of the first shape-bearing layer.
  [[nodiscard]] std::optional<std::size_t> input_dim() const {
    for (const auto& l : layers) {
      if (auto* d = std::get_if<DenseSpec>(&l)) return d->in;
      if (auto* p = std::get_if<ProjectionSpec>(&l)) return p->in;
      if (auto* t = std::get_if<TransformerSpec>(&l)) return t->hidden;
    }
    return std::nullopt;
  }

  /// Throws std::invalid_argument describing the first incompatibility.
  void validate() const {
    std::optional<std::size_t> width;
    auto expect = [&](std::size_t in, std::size_t idx) {
      if (width && *width != in)
        throw std::invalid_argument("layer " + std::to_string(idx) + " expects width " + std::to_string(in) +
                                    " but receives " + std::to_string(*width));
    };
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto& l = layers[i];
      if (auto* d = std::get_if<DenseSpec>(&l)) {
        if (d->in == 0 || d->out == 0) throw std::invalid_argument("dense layer with zero width");
        expect(d->in, i);
        width = d->out;
      } else if (auto* p = std::get_if<ProjectionSpec>(&l)) {
        if (p->in == 0 || p->out == 0) throw std::invalid_argument("projection layer with zero width");
        expect(p->in, i);
        width = p->out;
      } else if (auto* t = std::get_if<TransformerSpec>(&l)) {
        expect(t->hidden, i);
        if (t->heads == 0 || t->hidden % t->heads != 0)
          throw std::invalid_argument("layer " + std::to_string(i) + ": heads must divide hidden");
        if (!(t->dropout >= 0.0 && t->dropout < 1.0)) throw std::invalid_argument("dropout rate must lie in [0, 1)");
        width = t->hidden;
      } else if (auto* r = std::get_if<DropoutSpec>(&l)) {
        if (!(r->rate >= 0.0 && r->rate < 1.0)) throw std::invalid_argument("dropout rate must lie in [0, 1)");
      }
    }
  }
};

/// A sequential stack of layers with recorded forward state for backprop.
class Network {
 public:
  Network() = default;

  Network(const NetworkSpec& spec, Engine& rng) {
    spec.validate();
    in_dim_ = spec.input_dim().value_or(0);
    for (const auto& l : spec.layers) {
      std::visit(
          [&](const auto& s) {
            using S = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<S, DenseSpec>)
              layers_.push_back(std::make_unique<Dense>(s.in, s.out, rng));
            else if constexpr (std::is_same_v<S, ProjectionSpec>)
              layers_.push_back(std::make_unique<Dense>(s.in, s.out, rng, false));
            else if constexpr (std::is_same_v<S, ActivationSpec>)
              layers_.push_back(std::make_unique<Activation>(s.kind, s.slope));
            else if constexpr (std::is_same_v<S, DropoutSpec>)
              layers_.push_back(std::make_unique<Dropout>(s.rate));
            else
              layers_.push_back(
                  std::make_unique<TransformerEncoderLayer>(s.hidden, s.heads, s.ff_dim, s.dropout, rng));
          },
          l);
    }
  }

  Network(const Network& o) : in_dim_(o.in_dim_), recorded_(o.recorded_) {
    layers_.reserve(o.layers_.size());
    for (const auto& l : o.layers_) layers_.push_back(l->clone());
  }
  Network& operator=(const Network& o) {
    if (this != &o) {
      Network tmp(o);
      *this = std::move(tmp);
    }
    return *this;
  }
  Network(Network&&) noexcept = default;
  Network& operator=(Network&&) noexcept = default;

  Tensor forward(const Tensor& x, Mode mode, Engine& rng) {
    if (in_dim_ != 0) check_features(x, in_dim_, "Network");
    x.require_finite("network input");
    Tensor h = x;
    for (auto& l : layers_) h = l->forward(h, mode, rng);
    h.require_finite("network output");
    recorded_ = true;
    return h;
  }

  Tensor forward(const Tensor& x, Mode mode, const RngStream& stream) {
    Engine eng = stream.engine();
    return forward(x, mode, eng);
  }

  /// Accumulates parameter gradients for the most recent forward pass and
  /// returns dL/d(input).
  Tensor backward(const Tensor& grad_out) {
    if (!recorded_) throw NoForwardError("Network: backward called without a recorded forward pass");
    grad_out.require_finite("loss gradient");
    Tensor g = grad_out;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
    return g;
  }

  std::vector<Param*> params() {
    std::vector<Param*> out;
    for (auto& l : layers_)
      for (Param* p : l->params()) out.push_back(p);
    return out;
  }

  void zero_grad() {
    for (Param* p : params()) p->grad.setZero();
  }

  [[nodiscard]] std::size_t parameter_count() {
    std::size_t n = 0;
    for (Param* p : params()) n += static_cast<std::size_t>(p->value.size());
    return n;
  }

  [[nodiscard]] std::size_t size() const noexcept { return layers_.size(); }
  Layer& layer(std::size_t i) { return *layers_.at(i); }
  [[nodiscard]] std::size_t input_dim() const noexcept { return in_dim_; }

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
  std::size_t in_dim_ = 0;
  bool recorded_ = false;
};

/// `hidden` Dense+ReLU(+Dropout) blocks followed by a linear output layer.
inline NetworkSpec mlp_spec(std::size_t in, std::size_t width, std::size_t hidden_layers, std::size_t out,
                            double dropout = 0.0) {
  NetworkSpec s;
  std::size_t w = in;
  for (std::size_t i = 0; i < hidden_layers; ++i) {
    s.layers.emplace_back(DenseSpec{w, width});
    s.layers.emplace_back(ActivationSpec{ActivationKind::relu});
    if (dropout > 0.0) s.layers.emplace_back(DropoutSpec{dropout});
    w = width;
  }
  s.layers.emplace_back(DenseSpec{w, out});
  return s;
}

}  // namespace gfnal::nn
