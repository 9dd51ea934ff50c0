#pragma once

#include "gfnal/nn/layers.hpp"
#include "gfnal/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace gfnal::testing {

inline Tensor random_tensor(Shape shape, Engine& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> n(0.0, scale);
  for (double& v : t.values()) v = n(rng);
  return t;
}

inline double dot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// ||a - n|| / (||a|| + ||n||), the usual scale-free comparison of an
/// analytic gradient against a numeric one. The denominator is floored so an
/// exactly-zero gradient (e.g. attention key biases) compares by absolute error.
inline double relative_error(std::span<const double> analytic, std::span<const double> numeric) {
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
    na += analytic[i] * analytic[i];
    nn += numeric[i] * numeric[i];
  }
  const double denom = std::sqrt(na) + std::sqrt(nn);
  return std::sqrt(diff) / std::max(denom, 1e-3);
}

struct GradReport {
  double worst = 0.0;
  std::string where;

  void add(double err, const std::string& name) {
    if (err > worst || where.empty()) {
      worst = std::max(worst, err);
      where = name;
    }
  }
};

/// Central differences of `f` with respect to every entry of `values`.
inline std::vector<double> numeric_gradient(double* values, std::size_t n, const std::function<double()>& f, double h) {
  std::vector<double> g(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double keep = values[i];
    values[i] = keep + h;
    const double up = f();
    values[i] = keep - h;
    const double down = f();
    values[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

/// Checks d/dx and d/dparams of L = <w, layer(x)> for a random projection w.
/// Every forward reseeds the engine, so dropout masks stay fixed.
inline GradReport check_layer(nn::Layer& layer, Tensor x, nn::Mode mode, std::uint64_t seed, double h = 1e-5) {
  Engine wrng(seed ^ 0x9E3779B97F4A7C15ULL);
  Engine first(seed);
  const Tensor y0 = layer.forward(x, mode, first);
  const Tensor w = random_tensor(y0.shape(), wrng);
  auto loss = [&] {
    Engine e(seed);
    return dot(layer.forward(x, mode, e), w);
  };
  for (nn::Param* p : layer.params()) p->grad.setZero();
  Engine e(seed);
  (void)layer.forward(x, mode, e);
  const Tensor gx = layer.backward(w);

  GradReport rep;
  rep.add(relative_error(gx.values(), numeric_gradient(x.values().data(), x.size(), loss, h)), layer.kind() + ".input");
  for (nn::Param* p : layer.params()) {
    const std::vector<double> analytic(p->grad.data(), p->grad.data() + p->grad.size());
    rep.add(relative_error(analytic, numeric_gradient(p->value.data(), static_cast<std::size_t>(p->value.size()), loss, h)),
            layer.kind() + "." + p->name);
  }
  return rep;
}

}  // namespace gfnal::testing
