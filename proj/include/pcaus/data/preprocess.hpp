#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "pcaus/data/types.hpp"

namespace pcaus::data {

using ImageD = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Align-corners bilinear resize: output corners coincide with input corners.
template <class Derived>
ImageD resize_bilinear(const Eigen::MatrixBase<Derived>& window, int out_rows, int out_cols) {
  const auto h = static_cast<int>(window.rows());
  const auto w = static_cast<int>(window.cols());
  if (h < 2 || w < 2) throw std::invalid_argument("resize_bilinear: window must be at least 2x2");
  if (out_rows < 2 || out_cols < 2) throw std::invalid_argument("resize_bilinear: output must be at least 2x2");
  ImageD out(out_rows, out_cols);
  const double sy = static_cast<double>(h - 1) / (out_rows - 1);
  const double sx = static_cast<double>(w - 1) / (out_cols - 1);
  for (int i = 0; i < out_rows; ++i) {
    const double y = i * sy;
    const int y0 = std::min(static_cast<int>(y), h - 2);
    const double fy = y - y0;
    for (int j = 0; j < out_cols; ++j) {
      const double x = j * sx;
      const int x0 = std::min(static_cast<int>(x), w - 2);
      const double fx = x - x0;
      const double top = (1 - fx) * static_cast<double>(window(y0, x0)) + fx * static_cast<double>(window(y0, x0 + 1));
      const double bottom =
          (1 - fx) * static_cast<double>(window(y0 + 1, x0)) + fx * static_cast<double>(window(y0 + 1, x0 + 1));
      out(i, j) = (1 - fy) * top + fy * bottom;
    }
  }
  return out;
}

template <class Derived>
ImageD resize_bilinear(const Eigen::MatrixBase<Derived>& window, int out = kRoiSize) {
  return resize_bilinear(window, out, out);
}

// Instance standardization with the population standard deviation.
inline ImageD standardize(const ImageD& x, double eps = 1e-8) {
  if (!x.allFinite()) throw std::invalid_argument("normalize: non-finite input");
  const double mean = x.mean();
  const double var = (x.array() - mean).square().mean();
  return (x.array() - mean) / (std::sqrt(var) + eps);
}

// Min-max rescale into [0, 1]; constant inputs map to zeros.
inline ImageD rescale_unit(const ImageD& x) {
  const double lo = x.minCoeff();
  const double hi = x.maxCoeff();
  ImageD y = (x.array() - lo) / (hi - lo + 1e-12);
  return y.cwiseMax(0.0).cwiseMin(1.0);
}

inline ImageD normalize_rescale(const ImageD& x) { return rescale_unit(standardize(x)); }

// Full per-ROI chain: resize to 256x256, standardize, rescale to [0, 1].
template <class Derived>
Image preprocess_window(const Eigen::MatrixBase<Derived>& window, int out = kRoiSize) {
  return normalize_rescale(resize_bilinear(window, out)).template cast<float>();
}

}  // namespace pcaus::data
