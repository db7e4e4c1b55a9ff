#pragma once

#include <Eigen/Core>
#include <unsupported/Eigen/SpecialFunctions>

#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "pcaus/nn/tensor.hpp"

namespace pcaus::nn {

using RowMatrixF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrixF>;
using ConstMatMap = Eigen::Map<const RowMatrixF>;
using StridedMap = Eigen::Map<RowMatrixF, 0, Eigen::OuterStride<>>;
using ConstStridedMap = Eigen::Map<const RowMatrixF, 0, Eigen::OuterStride<>>;
using RowVecMap = Eigen::Map<Eigen::RowVectorXf>;
using ConstRowVecMap = Eigen::Map<const Eigen::RowVectorXf>;

inline bool needs_grad(const Tensor& t) { return t.defined() && t.requires_grad(); }

// ---------------------------------------------------------------------------
// Elementwise and shape ops

inline Tensor add(const Tensor& a, const Tensor& b) {
  expect_shape(b, a.shape(), "add");
  Buffer y(a.values().begin(), a.values().end());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += b.data()[i];
  return make_result(a.shape(), std::move(y), {a, b}, [a, b](Node& self) {
    const auto n = self.grad.size();
    if (needs_grad(a)) {
      float* g = a.grad();
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i];
    }
    if (needs_grad(b)) {
      float* g = b.grad();
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i];
    }
  });
}

inline Tensor scale(const Tensor& a, float factor) {
  Buffer y(a.values().begin(), a.values().end());
  for (float& v : y) v *= factor;
  return make_result(a.shape(), std::move(y), {a}, [a, factor](Node& self) {
    float* g = a.grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += factor * self.grad[i];
  });
}

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (numel_of(shape) != a.numel()) {
    throw std::invalid_argument("reshape: cannot view " + shape_string(a.shape()) + " as " +
                                shape_string(shape));
  }
  Buffer y(a.values().begin(), a.values().end());
  return make_result(std::move(shape), std::move(y), {a}, [a](Node& self) {
    float* g = a.grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

inline Tensor mean_all(const Tensor& a) {
  double s = 0;
  for (float v : a.values()) s += v;
  const auto n = static_cast<float>(a.numel());
  return make_result({1}, {static_cast<float>(s / n)}, {a}, [a, n](Node& self) {
    float* g = a.grad();
    const float d = self.grad[0] / n;
    for (std::int64_t i = 0; i < a.numel(); ++i) g[i] += d;
  });
}

inline Tensor relu(const Tensor& x) {
  Buffer y(x.values().begin(), x.values().end());
  for (float& v : y) v = v > 0.0f ? v : 0.0f;
  return make_result(x.shape(), std::move(y), {x}, [x](Node& self) {
    float* g = x.grad();
    const float* xv = x.data();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (xv[i] > 0.0f) g[i] += self.grad[i];
    }
  });
}

// Exact (erf) GELU.
inline Tensor gelu(const Tensor& x) {
  constexpr float inv_sqrt2 = 0.70710678118654752f;
  using Arr = Eigen::Array<float, Eigen::Dynamic, 1>;
  const Eigen::Index n = static_cast<Eigen::Index>(x.numel());
  const Eigen::Map<const Arr> xv(x.data(), n);
  auto cdf = std::make_shared<Arr>(0.5f * (1.0f + (xv * inv_sqrt2).erf()));
  Buffer y(static_cast<std::size_t>(n));
  Eigen::Map<Arr>(y.data(), n) = xv * *cdf;
  return make_result(x.shape(), std::move(y), {x}, [x, cdf, n](Node& self) {
    constexpr float inv_sqrt2pi = 0.39894228040143268f;
    const Eigen::Map<const Arr> xv(x.data(), n);
    const Eigen::Map<const Arr> dy(self.grad.data(), n);
    Eigen::Map<Arr>(x.grad(), n) += dy * (*cdf + xv * inv_sqrt2pi * (-0.5f * xv.square()).exp());
  });
}

// ---------------------------------------------------------------------------
// Dense layers

// y = x W^T + b over the last axis of x. `bias` may be undefined.
inline Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  const int out = weight.dim(0);
  const int in = weight.dim(1);
  if (x.dim(-1) != in) {
    throw std::invalid_argument("linear: input width " + std::to_string(x.dim(-1)) +
                                " does not match weight " + shape_string(weight.shape()));
  }
  const std::int64_t rows = x.numel() / in;
  Shape shape = x.shape();
  shape.back() = out;
  Buffer y(static_cast<std::size_t>(rows * out));
  MatMap Y(y.data(), rows, out);
  Y.noalias() = ConstMatMap(x.data(), rows, in) * ConstMatMap(weight.data(), out, in).transpose();
  if (bias.defined()) Y.rowwise() += ConstRowVecMap(bias.data(), out);
  return make_result(std::move(shape), std::move(y), {x, weight, bias},
                     [x, weight, bias, rows, in, out](Node& self) {
                       ConstMatMap dY(self.grad.data(), rows, out);
                       if (needs_grad(x)) {
                         MatMap(x.grad(), rows, in).noalias() +=
                             dY * ConstMatMap(weight.data(), out, in);
                       }
                       if (needs_grad(weight)) {
                         MatMap(weight.grad(), out, in).noalias() +=
                             dY.transpose() * ConstMatMap(x.data(), rows, in);
                       }
                       if (needs_grad(bias)) RowVecMap(bias.grad(), out) += dY.colwise().sum();
                     });
}

// ---------------------------------------------------------------------------
// Convolution and pooling over [N, C, H, W]

struct ConvGeometry {
  int channels, height, width, kernel_h, kernel_w, stride, padding, out_h, out_w;

  int patch_size() const { return channels * kernel_h * kernel_w; }
  int positions() const { return out_h * out_w; }
};

inline void im2col(const float* image, const ConvGeometry& g, float* cols) {
  const int P = g.positions();
  for (int c = 0; c < g.channels; ++c) {
    for (int ki = 0; ki < g.kernel_h; ++ki) {
      for (int kj = 0; kj < g.kernel_w; ++kj) {
        float* row = cols + static_cast<std::int64_t>((c * g.kernel_h + ki) * g.kernel_w + kj) * P;
        for (int oy = 0; oy < g.out_h; ++oy) {
          const int iy = oy * g.stride - g.padding + ki;
          float* dst = row + oy * g.out_w;
          if (iy < 0 || iy >= g.height) {
            std::fill(dst, dst + g.out_w, 0.0f);
            continue;
          }
          const float* src = image + (static_cast<std::int64_t>(c) * g.height + iy) * g.width;
          for (int ox = 0; ox < g.out_w; ++ox) {
            const int ix = ox * g.stride - g.padding + kj;
            dst[ox] = (ix >= 0 && ix < g.width) ? src[ix] : 0.0f;
          }
        }
      }
    }
  }
}

inline void col2im_add(const float* cols, const ConvGeometry& g, float* image) {
  const int P = g.positions();
  for (int c = 0; c < g.channels; ++c) {
    for (int ki = 0; ki < g.kernel_h; ++ki) {
      for (int kj = 0; kj < g.kernel_w; ++kj) {
        const float* row =
            cols + static_cast<std::int64_t>((c * g.kernel_h + ki) * g.kernel_w + kj) * P;
        for (int oy = 0; oy < g.out_h; ++oy) {
          const int iy = oy * g.stride - g.padding + ki;
          if (iy < 0 || iy >= g.height) continue;
          float* dst = image + (static_cast<std::int64_t>(c) * g.height + iy) * g.width;
          const float* src = row + oy * g.out_w;
          for (int ox = 0; ox < g.out_w; ++ox) {
            const int ix = ox * g.stride - g.padding + kj;
            if (ix >= 0 && ix < g.width) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

inline Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride,
                     int padding) {
  expect_rank(x, 4, "conv2d input");
  expect_rank(weight, 4, "conv2d weight");
  if (x.dim(1) != weight.dim(1)) {
    throw std::invalid_argument("conv2d: input has " + std::to_string(x.dim(1)) +
                                " channels, weight expects " + std::to_string(weight.dim(1)));
  }
  const int N = x.dim(0);
  const int O = weight.dim(0);
  ConvGeometry g{x.dim(1), x.dim(2), x.dim(3), weight.dim(2), weight.dim(3), stride, padding, 0, 0};
  g.out_h = (g.height + 2 * padding - g.kernel_h) / stride + 1;
  g.out_w = (g.width + 2 * padding - g.kernel_w) / stride + 1;
  if (g.out_h <= 0 || g.out_w <= 0) throw std::invalid_argument("conv2d: kernel larger than input");
  const int K = g.patch_size();
  const int P = g.positions();
  const bool keep_cols = GradMode::enabled() && (needs_grad(weight) || needs_grad(x));
  auto cols = std::make_shared<Buffer>(
      static_cast<std::size_t>(keep_cols ? std::int64_t{N} * K * P : std::int64_t{K} * P));
  Buffer y(static_cast<std::size_t>(std::int64_t{N} * O * P));
  ConstMatMap W(weight.data(), O, K);
  const std::int64_t in_stride = std::int64_t{g.channels} * g.height * g.width;
  for (int n = 0; n < N; ++n) {
    float* c = cols->data() + (keep_cols ? std::int64_t{n} * K * P : 0);
    im2col(x.data() + n * in_stride, g, c);
    MatMap Y(y.data() + std::int64_t{n} * O * P, O, P);
    Y.noalias() = W * ConstMatMap(c, K, P);
    if (bias.defined()) Y.colwise() += Eigen::Map<const Eigen::VectorXf>(bias.data(), O);
  }
  return make_result({N, O, g.out_h, g.out_w}, std::move(y), {x, weight, bias},
                     [x, weight, bias, cols, g, N, O, K, P, in_stride](Node& self) {
                       Buffer dcols;
                       if (needs_grad(x)) dcols.resize(static_cast<std::size_t>(K) * P);
                       ConstMatMap W(weight.data(), O, K);
                       for (int n = 0; n < N; ++n) {
                         ConstMatMap dY(self.grad.data() + std::int64_t{n} * O * P, O, P);
                         ConstMatMap C(cols->data() + std::int64_t{n} * K * P, K, P);
                         if (needs_grad(weight)) MatMap(weight.grad(), O, K).noalias() += dY * C.transpose();
                         if (needs_grad(bias)) {
                           Eigen::Map<Eigen::VectorXf>(bias.grad(), O) += dY.rowwise().sum();
                         }
                         if (needs_grad(x)) {
                           MatMap(dcols.data(), K, P).noalias() = W.transpose() * dY;
                           col2im_add(dcols.data(), g, x.grad() + n * in_stride);
                         }
                       }
                     });
}

inline Tensor max_pool2d(const Tensor& x, int kernel, int stride, int padding) {
  expect_rank(x, 4, "max_pool2d");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Ho = (H + 2 * padding - kernel) / stride + 1;
  const int Wo = (W + 2 * padding - kernel) / stride + 1;
  Buffer y(static_cast<std::size_t>(std::int64_t{N} * C * Ho * Wo));
  auto argmax = std::make_shared<std::vector<std::int32_t>>(y.size());
  const float* xv = x.data();
  std::size_t o = 0;
  for (int nc = 0; nc < N * C; ++nc) {
    const float* plane = xv + std::int64_t{nc} * H * W;
    for (int oy = 0; oy < Ho; ++oy) {
      for (int ox = 0; ox < Wo; ++ox, ++o) {
        float best = -std::numeric_limits<float>::infinity();
        int best_idx = -1;
        for (int ki = 0; ki < kernel; ++ki) {
          const int iy = oy * stride - padding + ki;
          if (iy < 0 || iy >= H) continue;
          for (int kj = 0; kj < kernel; ++kj) {
            const int ix = ox * stride - padding + kj;
            if (ix < 0 || ix >= W) continue;
            const float v = plane[iy * W + ix];
            if (best_idx < 0 || v > best) {
              best = v;
              best_idx = iy * W + ix;
            }
          }
        }
        y[o] = best;
        (*argmax)[o] = best_idx;
      }
    }
  }
  return make_result({N, C, Ho, Wo}, std::move(y), {x}, [x, argmax, H, W, Ho, Wo](Node& self) {
    float* g = x.grad();
    const std::int64_t plane_out = std::int64_t{Ho} * Wo;
    for (std::size_t o = 0; o < self.grad.size(); ++o) {
      const std::int64_t nc = static_cast<std::int64_t>(o) / plane_out;
      g[nc * H * W + (*argmax)[o]] += self.grad[o];
    }
  });
}

// [N, C, H, W] -> [N, C]
inline Tensor global_avg_pool(const Tensor& x) {
  expect_rank(x, 4, "global_avg_pool");
  const int N = x.dim(0), C = x.dim(1);
  const int S = x.dim(2) * x.dim(3);
  Buffer y(static_cast<std::size_t>(N * C));
  for (int nc = 0; nc < N * C; ++nc) {
    double s = 0;
    const float* p = x.data() + std::int64_t{nc} * S;
    for (int i = 0; i < S; ++i) s += p[i];
    y[static_cast<std::size_t>(nc)] = static_cast<float>(s / S);
  }
  return make_result({N, C}, std::move(y), {x}, [x, S](Node& self) {
    float* g = x.grad();
    for (std::size_t nc = 0; nc < self.grad.size(); ++nc) {
      const float d = self.grad[nc] / static_cast<float>(S);
      float* p = g + static_cast<std::int64_t>(nc) * S;
      for (int i = 0; i < S; ++i) p[i] += d;
    }
  });
}

// ---------------------------------------------------------------------------
// Normalization

// Batch normalization over axis 1 of [N, C] or [N, C, H, W]. Running statistics
// are updated in place when training.
inline Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                         Tensor& running_mean, Tensor& running_var, bool training,
                         float momentum = 0.1f, float eps = 1e-5f) {
  if (x.rank() != 2 && x.rank() != 4) throw std::invalid_argument("batch_norm: rank must be 2 or 4");
  const int N = x.dim(0), C = x.dim(1);
  if (gamma.numel() != C) throw std::invalid_argument("batch_norm: channel mismatch");
  const std::int64_t S = x.numel() / (std::int64_t{N} * C);
  const std::int64_t M = std::int64_t{N} * S;
  auto inv_std = std::make_shared<Buffer>(static_cast<std::size_t>(C));
  auto xhat = std::make_shared<Buffer>(static_cast<std::size_t>(x.numel()));
  Buffer y(static_cast<std::size_t>(x.numel()));
  const float* xv = x.data();
  for (int c = 0; c < C; ++c) {
    float mean, var;
    if (training) {
      double s = 0, ss = 0;
      for (int n = 0; n < N; ++n) {
        const float* p = xv + (std::int64_t{n} * C + c) * S;
        for (std::int64_t i = 0; i < S; ++i) s += p[i];
      }
      const double m = s / static_cast<double>(M);
      for (int n = 0; n < N; ++n) {
        const float* p = xv + (std::int64_t{n} * C + c) * S;
        for (std::int64_t i = 0; i < S; ++i) ss += (p[i] - m) * (p[i] - m);
      }
      const double v = ss / static_cast<double>(M);
      mean = static_cast<float>(m);
      var = static_cast<float>(v);
      float* rm = running_mean.data();
      float* rv = running_var.data();
      rm[c] = (1.0f - momentum) * rm[c] + momentum * mean;
      const double unbiased = M > 1 ? v * static_cast<double>(M) / static_cast<double>(M - 1) : v;
      rv[c] = (1.0f - momentum) * rv[c] + momentum * static_cast<float>(unbiased);
    } else {
      mean = running_mean.data()[c];
      var = running_var.data()[c];
    }
    const float is = 1.0f / std::sqrt(var + eps);
    (*inv_std)[static_cast<std::size_t>(c)] = is;
    const float gc = gamma.data()[c], bc = beta.data()[c];
    for (int n = 0; n < N; ++n) {
      const std::int64_t off = (std::int64_t{n} * C + c) * S;
      for (std::int64_t i = 0; i < S; ++i) {
        const float h = (xv[off + i] - mean) * is;
        (*xhat)[static_cast<std::size_t>(off + i)] = h;
        y[static_cast<std::size_t>(off + i)] = gc * h + bc;
      }
    }
  }
  return make_result(x.shape(), std::move(y), {x, gamma, beta},
                     [x, gamma, beta, inv_std, xhat, training, N, C, S, M](Node& self) {
                       const float* dy = self.grad.data();
                       for (int c = 0; c < C; ++c) {
                         double sum_dy = 0, sum_dy_xhat = 0;
                         for (int n = 0; n < N; ++n) {
                           const std::int64_t off = (std::int64_t{n} * C + c) * S;
                           for (std::int64_t i = 0; i < S; ++i) {
                             sum_dy += dy[off + i];
                             sum_dy_xhat += dy[off + i] * (*xhat)[static_cast<std::size_t>(off + i)];
                           }
                         }
                         if (needs_grad(gamma)) gamma.grad()[c] += static_cast<float>(sum_dy_xhat);
                         if (needs_grad(beta)) beta.grad()[c] += static_cast<float>(sum_dy);
                         if (!needs_grad(x)) continue;
                         float* dx = x.grad();
                         const float gc = gamma.data()[c];
                         const float is = (*inv_std)[static_cast<std::size_t>(c)];
                         const float mean_dy = static_cast<float>(sum_dy / static_cast<double>(M));
                         const float mean_dy_xhat =
                             static_cast<float>(sum_dy_xhat / static_cast<double>(M));
                         for (int n = 0; n < N; ++n) {
                           const std::int64_t off = (std::int64_t{n} * C + c) * S;
                           for (std::int64_t i = 0; i < S; ++i) {
                             const auto k = static_cast<std::size_t>(off + i);
                             if (training) {
                               dx[k] += gc * is * (dy[k] - mean_dy - (*xhat)[k] * mean_dy_xhat);
                             } else {
                               dx[k] += gc * is * dy[k];
                             }
                           }
                         }
                       }
                     });
}

// Layer normalization over the last axis.
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                         float eps = 1e-5f) {
  const int C = x.dim(-1);
  if (gamma.numel() != C) throw std::invalid_argument("layer_norm: width mismatch");
  const std::int64_t rows = x.numel() / C;
  auto xhat = std::make_shared<Buffer>(static_cast<std::size_t>(x.numel()));
  auto inv_std = std::make_shared<Buffer>(static_cast<std::size_t>(rows));
  Buffer y(static_cast<std::size_t>(x.numel()));
  for (std::int64_t r = 0; r < rows; ++r) {
    const float* p = x.data() + r * C;
    double s = 0, ss = 0;
    for (int i = 0; i < C; ++i) s += p[i];
    const double m = s / C;
    for (int i = 0; i < C; ++i) ss += (p[i] - m) * (p[i] - m);
    const float is = static_cast<float>(1.0 / std::sqrt(ss / C + eps));
    (*inv_std)[static_cast<std::size_t>(r)] = is;
    for (int i = 0; i < C; ++i) {
      const auto k = static_cast<std::size_t>(r * C + i);
      const float h = static_cast<float>(p[i] - m) * is;
      (*xhat)[k] = h;
      y[k] = gamma.data()[i] * h + beta.data()[i];
    }
  }
  return make_result(x.shape(), std::move(y), {x, gamma, beta},
                     [x, gamma, beta, xhat, inv_std, rows, C](Node& self) {
                       const float* dy = self.grad.data();
                       float* dg = needs_grad(gamma) ? gamma.grad() : nullptr;
                       float* db = needs_grad(beta) ? beta.grad() : nullptr;
                       float* dx = needs_grad(x) ? x.grad() : nullptr;
                       for (std::int64_t r = 0; r < rows; ++r) {
                         double sum_d = 0, sum_d_xhat = 0;
                         for (int i = 0; i < C; ++i) {
                           const auto k = static_cast<std::size_t>(r * C + i);
                           const float d = dy[k] * gamma.data()[i];
                           sum_d += d;
                           sum_d_xhat += d * (*xhat)[k];
                           if (dg) dg[i] += dy[k] * (*xhat)[k];
                           if (db) db[i] += dy[k];
                         }
                         if (!dx) continue;
                         const float is = (*inv_std)[static_cast<std::size_t>(r)];
                         const auto md = static_cast<float>(sum_d / C);
                         const auto mdx = static_cast<float>(sum_d_xhat / C);
                         for (int i = 0; i < C; ++i) {
                           const auto k = static_cast<std::size_t>(r * C + i);
                           dx[k] += is * (dy[k] * gamma.data()[i] - md - (*xhat)[k] * mdx);
                         }
                       }
                     });
}

// ---------------------------------------------------------------------------
// Token ops over [N, T, C]

// [N, C, H, W] -> [N, H*W, C]
inline Tensor to_tokens(const Tensor& x) {
  expect_rank(x, 4, "to_tokens");
  const int N = x.dim(0), C = x.dim(1), S = x.dim(2) * x.dim(3);
  Buffer y(static_cast<std::size_t>(x.numel()));
  for (int n = 0; n < N; ++n) {
    MatMap(y.data() + std::int64_t{n} * S * C, S, C) =
        ConstMatMap(x.data() + std::int64_t{n} * C * S, C, S).transpose();
  }
  return make_result({N, S, C}, std::move(y), {x}, [x, N, C, S](Node& self) {
    for (int n = 0; n < N; ++n) {
      MatMap(x.grad() + std::int64_t{n} * C * S, C, S) +=
          ConstMatMap(self.grad.data() + std::int64_t{n} * S * C, S, C).transpose();
    }
  });
}

// [N, H*W, C] -> [N, C, H, W]
inline Tensor from_tokens(const Tensor& x, int height, int width) {
  expect_rank(x, 3, "from_tokens");
  const int N = x.dim(0), S = x.dim(1), C = x.dim(2);
  if (S != height * width) throw std::invalid_argument("from_tokens: token count mismatch");
  Buffer y(static_cast<std::size_t>(x.numel()));
  for (int n = 0; n < N; ++n) {
    MatMap(y.data() + std::int64_t{n} * C * S, C, S) =
        ConstMatMap(x.data() + std::int64_t{n} * S * C, S, C).transpose();
  }
  return make_result({N, C, height, width}, std::move(y), {x}, [x, N, C, S](Node& self) {
    for (int n = 0; n < N; ++n) {
      MatMap(x.grad() + std::int64_t{n} * S * C, S, C) +=
          ConstMatMap(self.grad.data() + std::int64_t{n} * C * S, C, S).transpose();
    }
  });
}

// Prepends a learned token (numel C) to every sequence.
inline Tensor prepend_token(const Tensor& x, const Tensor& token) {
  expect_rank(x, 3, "prepend_token");
  const int N = x.dim(0), T = x.dim(1), C = x.dim(2);
  if (token.numel() != C) throw std::invalid_argument("prepend_token: width mismatch");
  Buffer y(static_cast<std::size_t>(std::int64_t{N} * (T + 1) * C));
  for (int n = 0; n < N; ++n) {
    float* dst = y.data() + std::int64_t{n} * (T + 1) * C;
    std::copy(token.data(), token.data() + C, dst);
    std::copy(x.data() + std::int64_t{n} * T * C, x.data() + std::int64_t{n + 1} * T * C, dst + C);
  }
  return make_result({N, T + 1, C}, std::move(y), {x, token}, [x, token, N, T, C](Node& self) {
    for (int n = 0; n < N; ++n) {
      const float* src = self.grad.data() + std::int64_t{n} * (T + 1) * C;
      if (needs_grad(token)) {
        float* g = token.grad();
        for (int i = 0; i < C; ++i) g[i] += src[i];
      }
      if (needs_grad(x)) {
        float* g = x.grad() + std::int64_t{n} * T * C;
        for (std::int64_t i = 0; i < std::int64_t{T} * C; ++i) g[i] += src[C + i];
      }
    }
  });
}

// [N, T, C] -> [N, C] at position `index`.
inline Tensor select_token(const Tensor& x, int index) {
  expect_rank(x, 3, "select_token");
  const int N = x.dim(0), T = x.dim(1), C = x.dim(2);
  Buffer y(static_cast<std::size_t>(N * C));
  for (int n = 0; n < N; ++n) {
    const float* src = x.data() + (std::int64_t{n} * T + index) * C;
    std::copy(src, src + C, y.data() + std::int64_t{n} * C);
  }
  return make_result({N, C}, std::move(y), {x}, [x, index, N, T, C](Node& self) {
    float* g = x.grad();
    for (int n = 0; n < N; ++n) {
      float* dst = g + (std::int64_t{n} * T + index) * C;
      for (int i = 0; i < C; ++i) dst[i] += self.grad[static_cast<std::size_t>(n * C + i)];
    }
  });
}

// x[N, T, C] + pos[T, C] broadcast over N.
inline Tensor add_positional(const Tensor& x, const Tensor& pos) {
  expect_rank(x, 3, "add_positional");
  const int N = x.dim(0);
  const std::int64_t TC = std::int64_t{x.dim(1)} * x.dim(2);
  if (pos.numel() != TC) throw std::invalid_argument("add_positional: shape mismatch");
  Buffer y(x.values().begin(), x.values().end());
  for (int n = 0; n < N; ++n) {
    for (std::int64_t i = 0; i < TC; ++i) y[static_cast<std::size_t>(n * TC + i)] += pos.data()[i];
  }
  return make_result(x.shape(), std::move(y), {x, pos}, [x, pos, N, TC](Node& self) {
    if (needs_grad(x)) {
      float* g = x.grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (needs_grad(pos)) {
      float* g = pos.grad();
      for (int n = 0; n < N; ++n) {
        for (std::int64_t i = 0; i < TC; ++i) g[i] += self.grad[static_cast<std::size_t>(n * TC + i)];
      }
    }
  });
}

// [N, T, C] -> [N, C]
inline Tensor mean_tokens(const Tensor& x) {
  expect_rank(x, 3, "mean_tokens");
  const int N = x.dim(0), T = x.dim(1), C = x.dim(2);
  Buffer y(static_cast<std::size_t>(N * C));
  for (int n = 0; n < N; ++n) {
    RowVecMap(y.data() + std::int64_t{n} * C, C) =
        ConstMatMap(x.data() + std::int64_t{n} * T * C, T, C).colwise().mean();
  }
  return make_result({N, C}, std::move(y), {x}, [x, N, T, C](Node& self) {
    for (int n = 0; n < N; ++n) {
      MatMap g(x.grad() + std::int64_t{n} * T * C, T, C);
      g.rowwise() += ConstRowVecMap(self.grad.data() + std::int64_t{n} * C, C) / static_cast<float>(T);
    }
  });
}

// Softmax-weighted token pooling: out[n] = sum_t softmax(scores[n])_t * x[n, t].
// `scores` holds N*T values.
inline Tensor attention_pool(const Tensor& x, const Tensor& scores) {
  expect_rank(x, 3, "attention_pool");
  const int N = x.dim(0), T = x.dim(1), C = x.dim(2);
  if (scores.numel() != std::int64_t{N} * T) throw std::invalid_argument("attention_pool: score count");
  auto weights = std::make_shared<Buffer>(static_cast<std::size_t>(N * T));
  Buffer y(static_cast<std::size_t>(N * C));
  for (int n = 0; n < N; ++n) {
    const float* s = scores.data() + std::int64_t{n} * T;
    float* a = weights->data() + std::int64_t{n} * T;
    const float mx = *std::max_element(s, s + T);
    double z = 0;
    for (int t = 0; t < T; ++t) z += (a[t] = std::exp(s[t] - mx));
    for (int t = 0; t < T; ++t) a[t] = static_cast<float>(a[t] / z);
    RowVecMap(y.data() + std::int64_t{n} * C, C) =
        Eigen::Map<const Eigen::RowVectorXf>(a, T) * ConstMatMap(x.data() + std::int64_t{n} * T * C, T, C);
  }
  return make_result({N, C}, std::move(y), {x, scores}, [x, scores, weights, N, T, C](Node& self) {
    for (int n = 0; n < N; ++n) {
      ConstRowVecMap dout(self.grad.data() + std::int64_t{n} * C, C);
      const float* a = weights->data() + std::int64_t{n} * T;
      ConstMatMap X(x.data() + std::int64_t{n} * T * C, T, C);
      if (needs_grad(x)) {
        MatMap(x.grad() + std::int64_t{n} * T * C, T, C).noalias() +=
            Eigen::Map<const Eigen::VectorXf>(a, T) * dout;
      }
      if (needs_grad(scores)) {
        Eigen::VectorXf da = X * dout.transpose();
        float dot = 0;
        for (int t = 0; t < T; ++t) dot += a[t] * da[t];
        float* g = scores.grad() + std::int64_t{n} * T;
        for (int t = 0; t < T; ++t) g[t] += a[t] * (da[t] - dot);
      }
    }
  });
}

// Multi-head scaled dot-product attention. q: [N, Tq, C], k and v: [N, Tk, C].
// `key_valid` (N*Tk entries, optional) excludes keys with value 0; excluded keys
// receive exactly zero attention weight.
inline Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads,
                        const std::vector<std::uint8_t>& key_valid = {}) {
  expect_rank(q, 3, "attention q");
  expect_rank(k, 3, "attention k");
  expect_shape(v, k.shape(), "attention v");
  const int N = q.dim(0), Tq = q.dim(1), C = q.dim(2), Tk = k.dim(1);
  if (k.dim(0) != N || k.dim(2) != C) throw std::invalid_argument("attention: q/k mismatch");
  if (C % heads != 0) throw std::invalid_argument("attention: width not divisible by heads");
  if (!key_valid.empty() && key_valid.size() != static_cast<std::size_t>(N) * Tk) {
    throw std::invalid_argument("attention: key mask size mismatch");
  }
  const int d = C / heads;
  const float scale_factor = 1.0f / std::sqrt(static_cast<float>(d));
  const std::int64_t PT = std::int64_t{Tq} * Tk;
  auto probs = std::make_shared<Buffer>(static_cast<std::size_t>(std::int64_t{N} * heads * PT));
  Buffer y(static_cast<std::size_t>(q.numel()));
  for (int n = 0; n < N; ++n) {
    const std::uint8_t* valid = key_valid.empty() ? nullptr : key_valid.data() + std::int64_t{n} * Tk;
    if (valid && std::none_of(valid, valid + Tk, [](std::uint8_t b) { return b != 0; })) {
      throw std::invalid_argument("attention: every key is masked");
    }
    for (int h = 0; h < heads; ++h) {
      ConstStridedMap Q(q.data() + std::int64_t{n} * Tq * C + h * d, Tq, d, Eigen::OuterStride<>(C));
      ConstStridedMap K(k.data() + std::int64_t{n} * Tk * C + h * d, Tk, d, Eigen::OuterStride<>(C));
      ConstStridedMap V(v.data() + std::int64_t{n} * Tk * C + h * d, Tk, d, Eigen::OuterStride<>(C));
      MatMap P(probs->data() + (std::int64_t{n} * heads + h) * PT, Tq, Tk);
      P.noalias() = (Q * K.transpose()) * scale_factor;
      if (valid) {
        for (int j = 0; j < Tk; ++j) {
          if (!valid[j]) P.col(j).setConstant(-std::numeric_limits<float>::infinity());
        }
      }
      for (int i = 0; i < Tq; ++i) {
        auto row = P.row(i).array();
        row = (row - row.maxCoeff()).exp();
        if (valid) {
          for (int j = 0; j < Tk; ++j) {
            if (!valid[j]) row(j) = 0.0f;
          }
        }
        row /= row.sum();
      }
      StridedMap(y.data() + std::int64_t{n} * Tq * C + h * d, Tq, d, Eigen::OuterStride<>(C)).noalias() =
          P * V;
    }
  }
  return make_result(q.shape(), std::move(y), {q, k, v},
                     [q, k, v, probs, N, Tq, Tk, C, heads, d, scale_factor, PT](Node& self) {
                       RowMatrixF dP(Tq, Tk);
                       for (int n = 0; n < N; ++n) {
                         for (int h = 0; h < heads; ++h) {
                           const std::int64_t qo = std::int64_t{n} * Tq * C + h * d;
                           const std::int64_t ko = std::int64_t{n} * Tk * C + h * d;
                           const Eigen::OuterStride<> os(C);
                           ConstStridedMap dO(self.grad.data() + qo, Tq, d, os);
                           ConstMatMap P(probs->data() + (std::int64_t{n} * heads + h) * PT, Tq, Tk);
                           ConstStridedMap V(v.data() + ko, Tk, d, os);
                           if (needs_grad(v)) StridedMap(v.grad() + ko, Tk, d, os).noalias() += P.transpose() * dO;
                           if (!needs_grad(q) && !needs_grad(k)) continue;
                           dP.noalias() = dO * V.transpose();
                           for (int i = 0; i < Tq; ++i) {
                             const float dot = dP.row(i).dot(P.row(i));
                             dP.row(i) = P.row(i).cwiseProduct((dP.row(i).array() - dot).matrix());
                           }
                           dP *= scale_factor;
                           if (needs_grad(q)) {
                             StridedMap(q.grad() + qo, Tq, d, os).noalias() +=
                                 dP * ConstStridedMap(k.data() + ko, Tk, d, os);
                           }
                           if (needs_grad(k)) {
                             StridedMap(k.grad() + ko, Tk, d, os).noalias() +=
                                 dP.transpose() * ConstStridedMap(q.data() + qo, Tq, d, os);
                           }
                         }
                       }
                     });
}

// Scalar node whose gradients with respect to `inputs` were computed outside
// the graph (closed-form loss gradients).
inline Tensor scalar_with_gradients(double value, const std::vector<Tensor>& inputs,
                                    std::vector<std::vector<float>> gradients) {
  auto grads = std::make_shared<std::vector<std::vector<float>>>(std::move(gradients));
  return make_result({1}, {static_cast<float>(value)}, inputs, [inputs, grads](Node& self) {
    const float upstream = self.grad[0];
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      if (!needs_grad(inputs[i])) continue;
      float* g = inputs[i].grad();
      const auto& local = (*grads)[i];
      for (std::size_t j = 0; j < local.size(); ++j) g[j] += upstream * local[j];
    }
  });
}

}  // namespace pcaus::nn
