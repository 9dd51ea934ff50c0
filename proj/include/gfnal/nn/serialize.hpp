#pragma once

#include "gfnal/nn/adam.hpp"
#include "gfnal/nn/layers.hpp"

#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace gfnal::nn {

inline constexpr const char* kWeightsHeader = "gfnal-weights 1";

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline std::string hexfloat(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

inline void write_matrix(std::ostream& os, const std::string& name, const RowMatrix& m) {
  os << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) os << (c ? " " : "") << hexfloat(m(r, c));
    os << '\n';
  }
}

inline void read_matrix(std::istream& is, const std::string& expect_name, RowMatrix& m) {
  std::string name;
  Eigen::Index rows = 0, cols = 0;
  if (!(is >> name >> rows >> cols)) throw FormatError("weights: truncated record, expected " + expect_name);
  if (name != expect_name || rows != m.rows() || cols != m.cols())
    throw FormatError("weights: record " + name + " does not match " + expect_name + " " + std::to_string(m.rows()) +
                      "x" + std::to_string(m.cols()));
  std::string tok;
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    if (!(is >> tok)) throw FormatError("weights: truncated values in " + name);
    m.data()[i] = std::strtod(tok.c_str(), nullptr);
  }
}

}  // namespace detail

/// Text format: a version line, a tensor count, then one "name rows cols"
/// record per parameter followed by its values as hex floats (exact round trip).
inline void save_params(std::ostream& os, const std::vector<Param*>& params, const AdamState* adam = nullptr) {
  os << kWeightsHeader << '\n' << params.size() << (adam ? " adam " : " plain ") << (adam ? adam->step : 0) << '\n';
  for (std::size_t i = 0; i < params.size(); ++i)
    detail::write_matrix(os, "p" + std::to_string(i) + "." + params[i]->name, params[i]->value);
  if (adam && !adam->first_moment.empty()) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      detail::write_matrix(os, "m" + std::to_string(i), adam->first_moment[i]);
      detail::write_matrix(os, "v" + std::to_string(i), adam->second_moment[i]);
    }
  }
}

inline void load_params(std::istream& is, const std::vector<Param*>& params, AdamState* adam = nullptr) {
  std::string line;
  if (!std::getline(is, line) || line != kWeightsHeader) throw FormatError("weights: bad or missing version header");
  std::size_t count = 0;
  std::string kind;
  std::uint64_t step = 0;
  if (!(is >> count >> kind >> step)) throw FormatError("weights: bad count line");
  if (count != params.size()) throw FormatError("weights: parameter count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i)
    detail::read_matrix(is, "p" + std::to_string(i) + "." + params[i]->name, params[i]->value);
  if (adam) {
    adam->first_moment.clear();
    adam->second_moment.clear();
    adam->step = step;
    if (kind == "adam" && step > 0) {
      for (std::size_t i = 0; i < params.size(); ++i) {
        RowMatrix m = RowMatrix::Zero(params[i]->value.rows(), params[i]->value.cols()), v = m;
        detail::read_matrix(is, "m" + std::to_string(i), m);
        detail::read_matrix(is, "v" + std::to_string(i), v);
        adam->first_moment.push_back(std::move(m));
        adam->second_moment.push_back(std::move(v));
      }
    }
  }
}

}  // namespace gfnal::nn
