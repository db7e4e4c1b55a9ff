#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>

#include "pcaus/data/types.hpp"

namespace pcaus::ssl {

struct Range {
  double lo = 0;
  double hi = 0;

  double draw(std::mt19937_64& rng) const {
    if (lo == hi) return lo;
    return std::uniform_real_distribution<double>(lo, hi)(rng);
  }
};

// Random view transform: rotation, isotropic scale, crop resized back to full
// size, and a gamma intensity distortion. No flips.
struct AugmentationPolicy {
  Range rotation_deg{-10, 10};
  Range scale{0.8, 1.2};
  Range crop_area{0.7, 1.0};
  Range gamma{0.8, 1.25};

  static AugmentationPolicy identity() { return {{0, 0}, {1, 1}, {1, 1}, {1, 1}}; }

  void validate() const {
    auto ordered = [](const Range& r, const char* what) {
      if (!(r.lo <= r.hi)) throw std::invalid_argument(std::string("augmentation: ") + what + " range is reversed");
    };
    ordered(rotation_deg, "rotation");
    ordered(scale, "scale");
    ordered(crop_area, "crop area");
    ordered(gamma, "gamma");
    if (!(scale.lo > 0)) throw std::invalid_argument("augmentation: scale must be positive");
    if (!(crop_area.lo > 0) || crop_area.hi > 1) throw std::invalid_argument("augmentation: crop area must be in (0, 1]");
    if (!(gamma.lo > 0)) throw std::invalid_argument("augmentation: gamma must be positive");
  }
};

namespace detail {

inline float sample_replicate(const data::Image& x, double r, double c) {
  const auto rows = static_cast<int>(x.rows()), cols = static_cast<int>(x.cols());
  r = std::clamp(r, 0.0, static_cast<double>(rows - 1));
  c = std::clamp(c, 0.0, static_cast<double>(cols - 1));
  const int r0 = static_cast<int>(std::floor(r)), c0 = static_cast<int>(std::floor(c));
  const int r1 = std::min(r0 + 1, rows - 1), c1 = std::min(c0 + 1, cols - 1);
  const double fr = r - r0, fc = c - c0;
  const double top = x(r0, c0) + fc * (x(r0, c1) - x(r0, c0));
  const double bottom = x(r1, c0) + fc * (x(r1, c1) - x(r1, c0));
  return static_cast<float>(top + fr * (bottom - top));
}

}  // namespace detail

// One random view of `x`. Output has the input's shape, clamped to [0, 1].
inline data::Image augment_view(const data::Image& x, const AugmentationPolicy& policy, std::mt19937_64& rng) {
  const double angle = policy.rotation_deg.draw(rng) * 3.14159265358979323846 / 180.0;
  const double scale = policy.scale.draw(rng);
  const double side = std::sqrt(policy.crop_area.draw(rng));
  const double gamma = policy.gamma.draw(rng);
  const double rows = static_cast<double>(x.rows()), cols = static_cast<double>(x.cols());
  const double cr = 0.5 * (rows - 1), cc = 0.5 * (cols - 1);
  // Crop offset of the window center, in pixels, keeping the crop inside the image.
  const double off_r = (1.0 - side) * cr * (2.0 * std::uniform_real_distribution<double>(0, 1)(rng) - 1.0);
  const double off_c = (1.0 - side) * cc * (2.0 * std::uniform_real_distribution<double>(0, 1)(rng) - 1.0);
  const double cos_a = std::cos(angle) / scale, sin_a = std::sin(angle) / scale;

  data::Image out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      const double u = side * (static_cast<double>(i) - cr), v = side * (static_cast<double>(j) - cc);
      const double r = cr + off_r + cos_a * u - sin_a * v;
      const double c = cc + off_c + sin_a * u + cos_a * v;
      float p = detail::sample_replicate(x, r, c);
      if (gamma != 1.0) p = static_cast<float>(std::pow(std::max(0.0f, p), gamma));
      out(i, j) = std::clamp(p, 0.0f, 1.0f);
    }
  }
  return out;
}

// Two independent views; deterministic for a given (x, seed).
inline std::pair<data::Image, data::Image> augment_pair(const data::Image& x, const AugmentationPolicy& policy,
                                                        std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  data::Image a = augment_view(x, policy, rng);
  data::Image b = augment_view(x, policy, rng);
  return {std::move(a), std::move(b)};
}

}  // namespace pcaus::ssl
