#pragma once

#include <Eigen/Core>

#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "pcaus/nn/ops.hpp"

namespace pcaus {

// A scalar loss with its named components, as recorded in training logs.
struct LossBreakdown {
  double total = 0;
  std::vector<std::pair<std::string, double>> terms;

  double at(std::string_view name) const {
    for (const auto& [n, v] : terms) {
      if (n == name) return v;
    }
    throw std::out_of_range("loss has no term " + std::string(name));
  }

  // Name of the first non-finite quantity, or empty when all are finite.
  std::string non_finite_part() const {
    for (const auto& [n, v] : terms) {
      if (!std::isfinite(v)) return n;
    }
    return std::isfinite(total) ? std::string() : std::string("total");
  }
};

template <class T>
using MatrixX = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class T>
struct CrossEntropy {
  T value = 0;
  MatrixX<T> grad;  // d value / d logits
};

// Mean softmax cross-entropy over the rows of `logits`.
template <class T>
CrossEntropy<T> softmax_cross_entropy(const MatrixX<T>& logits, std::span<const int> labels) {
  const auto n = logits.rows();
  if (n == 0 || static_cast<std::size_t>(n) != labels.size()) {
    throw std::invalid_argument("cross_entropy: label count must match logit rows");
  }
  CrossEntropy<T> out;
  out.grad.resize(n, logits.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= logits.cols()) throw std::invalid_argument("cross_entropy: label out of range");
    const T mx = logits.row(i).maxCoeff();
    T z = 0;
    for (Eigen::Index j = 0; j < logits.cols(); ++j) z += std::exp(logits(i, j) - mx);
    out.value += (mx + std::log(z) - logits(i, y)) / static_cast<T>(n);
    for (Eigen::Index j = 0; j < logits.cols(); ++j) {
      out.grad(i, j) = (std::exp(logits(i, j) - mx) / z - (j == y ? T(1) : T(0))) / static_cast<T>(n);
    }
  }
  return out;
}

// Softmax probability of class 1 for each row of 2-column logits.
template <class T>
std::vector<double> positive_probabilities(const MatrixX<T>& logits) {
  if (logits.cols() != 2) throw std::invalid_argument("expected two logits per row");
  std::vector<double> p(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double d = static_cast<double>(logits(i, 0)) - static_cast<double>(logits(i, 1));
    p[static_cast<std::size_t>(i)] = 1.0 / (1.0 + std::exp(d));
  }
  return p;
}

namespace nn {

inline MatrixX<double> to_double(const Tensor& t, Eigen::Index rows, Eigen::Index cols) {
  return ConstMatMap(t.data(), rows, cols).cast<double>();
}

inline std::vector<float> to_float_vector(const MatrixX<double>& m) {
  std::vector<float> v(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.size(); ++i) v[static_cast<std::size_t>(i)] = static_cast<float>(m.data()[i]);
  return v;
}

// Graph op: mean cross-entropy of [N, K] logits.
inline Tensor cross_entropy(const Tensor& logits, std::span<const int> labels, LossBreakdown* breakdown = nullptr) {
  expect_rank(logits, 2, "cross_entropy");
  const auto ce = softmax_cross_entropy<double>(to_double(logits, logits.dim(0), logits.dim(1)), labels);
  if (breakdown) *breakdown = {ce.value, {{"cross_entropy", ce.value}}};
  return scalar_with_gradients(ce.value, {logits}, {to_float_vector(ce.grad)});
}

}  // namespace nn
}  // namespace pcaus
