#pragma once

#include "gfnal/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <span>
#include <vector>

namespace gfnal::nn {

struct LossGrad {
  double loss = 0.0;
  Tensor grad;
};

/// Numerically stable softmax of one logit vector.
inline std::vector<double> softmax(const double* logits, std::size_t n) {
  std::vector<double> p(logits, logits + n);
  const double mx = *std::max_element(p.begin(), p.end());
  double z = 0.0;
  for (double& v : p) z += (v = std::exp(v - mx));
  for (double& v : p) v /= z;
  return p;
}

inline std::vector<double> softmax(std::span<const double> logits) { return softmax(logits.data(), logits.size()); }

inline double log_sum_exp(const double* x, std::size_t n) {
  const double mx = *std::max_element(x, x + n);
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += std::exp(x[i] - mx);
  return mx + std::log(s);
}

/// Sum over rows of -log softmax(logits_r)[label_r]; gradient is softmax - onehot per row.
inline LossGrad cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  const std::size_t rows = logits.rows(), classes = logits.features();
  if (labels.size() != rows) throw ShapeError("cross_entropy: label count does not match logit rows");
  LossGrad out{0.0, Tensor(logits.shape())};
  for (std::size_t r = 0; r < rows; ++r) {
    const int y = labels[r];
    if (y < 0 || static_cast<std::size_t>(y) >= classes) throw std::out_of_range("cross_entropy: label out of range");
    const double* z = logits.values().data() + r * classes;
    const double lse = log_sum_exp(z, classes);
    out.loss += lse - z[y];
    for (std::size_t c = 0; c < classes; ++c) out.grad[r * classes + c] = std::exp(z[c] - lse);
    out.grad[r * classes + static_cast<std::size_t>(y)] -= 1.0;
  }
  return out;
}

inline LossGrad cross_entropy(const Tensor& logits, int label) { return cross_entropy(logits, std::vector<int>{label}); }

/// Mean of squared differences; gradient is with respect to x_hat.
inline LossGrad mse(const Tensor& x, const Tensor& x_hat) {
  if (x.shape() != x_hat.shape()) throw ShapeError("mse: shape mismatch " + to_string(x.shape()) + " vs " + to_string(x_hat.shape()));
  LossGrad out{0.0, Tensor(x.shape())};
  const double n = static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x_hat[i] - x[i];
    out.loss += d * d;
    out.grad[i] = 2.0 * d / n;
  }
  out.loss /= n;
  return out;
}

inline double squared_distance(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

struct TripletGrad {
  double loss = 0.0;
  Tensor grad_anchor, grad_positive, grad_negative;
};

/// Per row: max(0, |a-p|^2 - |a-n|^2 + margin), summed over rows.
inline TripletGrad triplet_margin(const Tensor& anchor, const Tensor& positive, const Tensor& negative, double margin) {
  if (anchor.shape() != positive.shape() || anchor.shape() != negative.shape())
    throw ShapeError("triplet_margin: shape mismatch");
  if (!(margin > 0.0)) throw std::invalid_argument("triplet_margin: margin must be positive");
  TripletGrad out{0.0, Tensor(anchor.shape()), Tensor(anchor.shape()), Tensor(anchor.shape())};
  const std::size_t rows = anchor.rows(), f = anchor.features();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* a = anchor.values().data() + r * f;
    const double* p = positive.values().data() + r * f;
    const double* n = negative.values().data() + r * f;
    const double h = squared_distance(a, p, f) - squared_distance(a, n, f) + margin;
    if (h <= 0.0) continue;
    out.loss += h;
    for (std::size_t c = 0; c < f; ++c) {
      const std::size_t i = r * f + c;
      out.grad_anchor[i] = 2.0 * (n[c] - p[c]);
      out.grad_positive[i] = -2.0 * (a[c] - p[c]);
      out.grad_negative[i] = 2.0 * (a[c] - n[c]);
    }
  }
  return out;
}

}  // namespace gfnal::nn
