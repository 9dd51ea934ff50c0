#pragma once

#include "gfnal/nn/layers.hpp"

#include <cmath>
#include <cstdint>
#include <vector>

namespace gfnal::nn {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;  // decoupled, AdamW-style
};

/// Adam with bias correction. Moments are allocated lazily on the first step
/// and must keep matching the parameter shapes afterwards.
struct AdamState {
  AdamConfig config;
  std::vector<RowMatrix> first_moment;
  std::vector<RowMatrix> second_moment;
  std::uint64_t step = 0;

  AdamState() = default;
  explicit AdamState(AdamConfig c) : config(c) {}
};

inline void adam_step(AdamState& state, const std::vector<Param*>& params) {
  if (state.first_moment.empty()) {
    for (const Param* p : params) {
      state.first_moment.push_back(RowMatrix::Zero(p->value.rows(), p->value.cols()));
      state.second_moment.push_back(RowMatrix::Zero(p->value.rows(), p->value.cols()));
    }
  }
  if (state.first_moment.size() != params.size()) throw ShapeError("adam_step: parameter count changed");
  const auto& c = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Param& p = *params[i];
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    if (m.rows() != p.value.rows() || m.cols() != p.value.cols() || p.grad.rows() != p.value.rows() ||
        p.grad.cols() != p.value.cols())
      throw ShapeError("adam_step: shape mismatch for parameter " + p.name);
    m = c.beta1 * m + (1.0 - c.beta1) * p.grad;
    v = c.beta2 * v + (1.0 - c.beta2) * p.grad.cwiseAbs2();
    if (c.weight_decay > 0.0) p.value *= (1.0 - c.learning_rate * c.weight_decay);
    p.value.array() -= c.learning_rate * (m.array() / bc1) / ((v.array() / bc2).sqrt() + c.epsilon);
  }
}

}  // namespace gfnal::nn
