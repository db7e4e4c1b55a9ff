#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "pcaus/nn/loss.hpp"

namespace pcaus::multiscale {

template <class T>
struct MOLoss {
  LossBreakdown breakdown;  // terms: core, roi
  MatrixX<T> grad_core;     // [B, 2]
  MatrixX<T> grad_roi;      // [B * L, 2]
};

// Multi-objective loss over a batch of B cores with L ROI positions each:
//   core = mean_b CE(core_logits_b, y_b)
//   roi  = mean_b mean_{valid i} CE(roi_logits_{b,i}, y_b)
//   total = gamma * core + (1 - gamma) * roi
template <class T>
MOLoss<T> mo_loss(const MatrixX<T>& core_logits, const MatrixX<T>& roi_logits, std::span<const int> labels,
                  std::span<const std::uint8_t> valid, double gamma) {
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw std::invalid_argument("mo_loss: gamma must lie in [0, 1]");
  const auto batch = core_logits.rows();
  if (batch == 0 || static_cast<std::size_t>(batch) != labels.size()) {
    throw std::invalid_argument("mo_loss: one label per core required");
  }
  if (core_logits.cols() != 2 || roi_logits.cols() != 2) throw std::invalid_argument("mo_loss: expected 2-class logits");
  if (roi_logits.rows() % batch != 0 || static_cast<std::size_t>(roi_logits.rows()) != valid.size()) {
    throw std::invalid_argument("mo_loss: ROI logits and validity mask do not match the batch");
  }
  const auto positions = roi_logits.rows() / batch;

  MOLoss<T> out;
  const CrossEntropy<T> core = softmax_cross_entropy<T>(core_logits, labels);
  out.grad_core = core.grad * static_cast<T>(gamma);
  out.grad_roi = MatrixX<T>::Zero(roi_logits.rows(), 2);

  T roi_term = 0;
  std::vector<int> y;
  for (Eigen::Index b = 0; b < batch; ++b) {
    std::vector<Eigen::Index> rows;
    for (Eigen::Index i = 0; i < positions; ++i) {
      if (valid[static_cast<std::size_t>(b * positions + i)]) rows.push_back(b * positions + i);
    }
    if (rows.empty()) throw std::invalid_argument("mo_loss: core has no valid ROI positions");
    MatrixX<T> sub(static_cast<Eigen::Index>(rows.size()), 2);
    for (std::size_t r = 0; r < rows.size(); ++r) sub.row(static_cast<Eigen::Index>(r)) = roi_logits.row(rows[r]);
    y.assign(rows.size(), labels[static_cast<std::size_t>(b)]);
    const CrossEntropy<T> ce = softmax_cross_entropy<T>(sub, y);
    roi_term += ce.value / static_cast<T>(batch);
    const T w = static_cast<T>(1.0 - gamma) / static_cast<T>(batch);
    for (std::size_t r = 0; r < rows.size(); ++r) out.grad_roi.row(rows[r]) = ce.grad.row(static_cast<Eigen::Index>(r)) * w;
  }

  const double core_term = static_cast<double>(core.value);
  const double roi = static_cast<double>(roi_term);
  out.breakdown = {gamma * core_term + (1.0 - gamma) * roi, {{"core", core_term}, {"roi", roi}}};
  return out;
}

// Graph op over [B, 2] core logits and [B * L, 2] ROI logits.
inline nn::Tensor mo_loss(const nn::Tensor& core_logits, const nn::Tensor& roi_logits, std::span<const int> labels,
                          std::span<const std::uint8_t> valid, double gamma, LossBreakdown* breakdown = nullptr) {
  nn::expect_rank(core_logits, 2, "mo_loss core logits");
  nn::expect_rank(roi_logits, 2, "mo_loss roi logits");
  const auto r = mo_loss<double>(nn::to_double(core_logits, core_logits.dim(0), core_logits.dim(1)),
                                 nn::to_double(roi_logits, roi_logits.dim(0), roi_logits.dim(1)), labels, valid, gamma);
  if (breakdown) *breakdown = r.breakdown;
  return nn::scalar_with_gradients(r.breakdown.total, {core_logits, roi_logits},
                                   {nn::to_float_vector(r.grad_core), nn::to_float_vector(r.grad_roi)});
}

}  // namespace pcaus::multiscale
