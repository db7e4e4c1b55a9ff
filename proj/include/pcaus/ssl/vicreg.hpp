#pragma once

#include <Eigen/Core>

#include <cmath>
#include <stdexcept>

#include "pcaus/nn/loss.hpp"
#include "pcaus/nn/ops.hpp"

namespace pcaus::ssl {

struct VICRegWeights {
  double lambda_inv = 25.0;
  double mu_var = 25.0;
  double nu_cov = 1.0;
  double variance_target = 1.0;
  double variance_eps = 1e-4;

  void validate() const {
    if (lambda_inv < 0 || mu_var < 0 || nu_cov < 0 || variance_target < 0 || variance_eps < 0) {
      throw std::invalid_argument("VICReg weights must be nonnegative");
    }
  }
};

template <class T>
struct VICRegLoss {
  LossBreakdown breakdown;  // terms: invariance, variance, covariance
  MatrixX<T> grad_z1;
  MatrixX<T> grad_z2;
};

namespace detail {

// Hinge on the per-dimension standard deviation: (1/d) sum_j max(0, target - sqrt(var_j + eps)).
template <class T>
T variance_term(const MatrixX<T>& centered, const VICRegWeights& w, MatrixX<T>* grad) {
  const auto n = centered.rows(), d = centered.cols();
  T v = 0;
  if (grad) grad->setZero(n, d);
  for (Eigen::Index j = 0; j < d; ++j) {
    const T var = centered.col(j).squaredNorm() / static_cast<T>(n - 1);
    const T sd = std::sqrt(var + static_cast<T>(w.variance_eps));
    const T gap = static_cast<T>(w.variance_target) - sd;
    if (gap > 0) {
      v += gap;
      if (grad) grad->col(j) = -centered.col(j) / (static_cast<T>(d) * static_cast<T>(n - 1) * sd);
    }
  }
  return v / static_cast<T>(d);
}

// Off-diagonal covariance penalty: (1/d) sum_{i != j} C_ij^2 with C the unbiased covariance.
template <class T>
T covariance_term(const MatrixX<T>& centered, MatrixX<T>* grad) {
  const auto n = centered.rows(), d = centered.cols();
  MatrixX<T> cov = centered.transpose() * centered / static_cast<T>(n - 1);
  cov.diagonal().setZero();
  const T c = cov.squaredNorm() / static_cast<T>(d);
  if (grad) *grad = centered * cov * (T(4) / (static_cast<T>(d) * static_cast<T>(n - 1)));
  return c;
}

}  // namespace detail

// total = lambda * invariance + mu * variance + nu * covariance, where
// variance = v(z1) + v(z2) and covariance = c(z1) + c(z2).
template <class T>
VICRegLoss<T> vicreg_loss(const MatrixX<T>& z1, const MatrixX<T>& z2, const VICRegWeights& w = {}) {
  if (z1.rows() != z2.rows() || z1.cols() != z2.cols()) throw std::invalid_argument("vicreg_loss: z1 and z2 shapes differ");
  if (z1.rows() < 2) throw std::invalid_argument("vicreg_loss: batch size must be at least 2 (variance undefined)");
  if (z1.cols() < 2) throw std::invalid_argument("vicreg_loss: embedding width must be at least 2");
  const auto n = z1.rows(), d = z1.cols();
  const T nd = static_cast<T>(n * d);

  VICRegLoss<T> out;
  const MatrixX<T> diff = z1 - z2;
  const T inv = diff.squaredNorm() / nd;

  const MatrixX<T> c1 = z1.rowwise() - z1.colwise().mean();
  const MatrixX<T> c2 = z2.rowwise() - z2.colwise().mean();
  MatrixX<T> gv1, gv2, gc1, gc2;
  const T var = detail::variance_term(c1, w, &gv1) + detail::variance_term(c2, w, &gv2);
  const T cov = detail::covariance_term(c1, &gc1) + detail::covariance_term(c2, &gc2);

  const auto lam = static_cast<T>(w.lambda_inv), mu = static_cast<T>(w.mu_var), nu = static_cast<T>(w.nu_cov);
  out.grad_z1 = lam * T(2) * diff / nd + mu * gv1 + nu * gc1;
  out.grad_z2 = -lam * T(2) * diff / nd + mu * gv2 + nu * gc2;
  const double total = static_cast<double>(lam * inv + mu * var + nu * cov);
  out.breakdown = {total,
                   {{"invariance", static_cast<double>(inv)},
                    {"variance", static_cast<double>(var)},
                    {"covariance", static_cast<double>(cov)}}};
  return out;
}

// Graph op over [N, d] embedding tensors; evaluated in double precision.
inline nn::Tensor vicreg_loss(const nn::Tensor& z1, const nn::Tensor& z2, const VICRegWeights& w,
                              LossBreakdown* breakdown = nullptr) {
  nn::expect_rank(z1, 2, "vicreg_loss");
  nn::expect_shape(z2, z1.shape(), "vicreg_loss");
  const auto r = vicreg_loss<double>(nn::to_double(z1, z1.dim(0), z1.dim(1)), nn::to_double(z2, z2.dim(0), z2.dim(1)), w);
  if (breakdown) *breakdown = r.breakdown;
  return nn::scalar_with_gradients(r.breakdown.total, {z1, z2}, {nn::to_float_vector(r.grad_z1), nn::to_float_vector(r.grad_z2)});
}

}  // namespace pcaus::ssl
