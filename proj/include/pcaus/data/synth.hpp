#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "pcaus/data/roi.hpp"
#include "pcaus/data/types.hpp"

namespace pcaus::data {

// Colored speckle: a sum of Gaussian-smoothed white-noise octaves. Octave o
// has correlation length speckle_scale * 2^o and amplitude 2^(-spectral_slope * o),
// so a larger slope concentrates energy at low spatial frequencies.
struct TextureParams {
  double spectral_slope = 0.5;
  double variance = 1.0;
  double speckle_scale = 1.0;  // samples
};

struct SynthConfig {
  int n_patients = 100;
  int cores_per_patient = 4;
  int n_centers = 5;
  double cancer_core_rate = 0.133;
  double involvement_min = 0.1;
  double involvement_max = 1.0;
  TextureParams benign_texture{0.5, 1.0, 1.0};
  TextureParams cancer_texture{1.5, 1.5, 2.0};
  // Frame geometry.
  int axial_samples = 400;
  int lateral_lines = 256;
  double axial_spacing = 0.05;    // mm
  double lateral_spacing = 0.1;   // mm
  double needle_angle_max = 8.0;  // degrees, symmetric
  double needle_depth_min = 17.0;  // mm
  double needle_depth_max = 19.5;
  double needle_width = 1.5;       // mm
  double roi_mm = 5.0;             // window used to size the cancer region laterally
  std::uint64_t seed = 0;

  void validate() const {
    if (n_patients < 1 || cores_per_patient < 1 || n_centers < 1) {
      throw std::invalid_argument("synth config: counts must be positive");
    }
    if (!(cancer_core_rate >= 0 && cancer_core_rate <= 1)) throw std::invalid_argument("synth config: cancer_core_rate must lie in [0, 1]");
    if (!(involvement_min > 0 && involvement_min <= involvement_max && involvement_max <= 1)) {
      throw std::invalid_argument("synth config: involvement range must lie in (0, 1]");
    }
    for (const TextureParams* t : {&benign_texture, &cancer_texture}) {
      if (!(t->variance > 0) || !(t->speckle_scale > 0) || !std::isfinite(t->spectral_slope)) {
        throw std::invalid_argument("synth config: invalid texture parameters");
      }
    }
    if (axial_samples < 16 || lateral_lines < 16) throw std::invalid_argument("synth config: frame too small");
    if (!(axial_spacing > 0 && lateral_spacing > 0)) throw std::invalid_argument("synth config: spacings must be positive");
    if (!(needle_angle_max >= 0 && needle_angle_max < 90)) throw std::invalid_argument("synth config: needle angle range");
    if (!(needle_depth_min > 0 && needle_depth_min <= needle_depth_max)) throw std::invalid_argument("synth config: needle depth range");
    if (!(needle_width > 0)) throw std::invalid_argument("synth config: needle width");
  }
};

namespace detail {

inline std::vector<double> gaussian_kernel(double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double s = 0;
  for (int i = -radius; i <= radius; ++i) s += k[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (double& v : k) v /= s;
  return k;
}

// Separable Gaussian blur with reflected borders.
inline ImageD blur(const ImageD& x, double sigma) {
  const auto k = gaussian_kernel(sigma);
  const int radius = static_cast<int>(k.size() / 2);
  const int H = static_cast<int>(x.rows()), W = static_cast<int>(x.cols());
  auto reflect = [](int i, int n) {
    while (i < 0 || i >= n) i = i < 0 ? -i - 1 : 2 * n - i - 1;
    return i;
  };
  ImageD tmp(H, W), out(H, W);
  for (int r = 0; r < H; ++r) {
    for (int c = 0; c < W; ++c) {
      double s = 0;
      for (int d = -radius; d <= radius; ++d) s += k[static_cast<std::size_t>(d + radius)] * x(r, reflect(c + d, W));
      tmp(r, c) = s;
    }
  }
  for (int r = 0; r < H; ++r) {
    for (int c = 0; c < W; ++c) {
      double s = 0;
      for (int d = -radius; d <= radius; ++d) s += k[static_cast<std::size_t>(d + radius)] * tmp(reflect(r + d, H), c);
      out(r, c) = s;
    }
  }
  return out;
}

inline ImageD texture_field(int rows, int cols, const TextureParams& tex, std::mt19937_64& rng) {
  constexpr int kOctaves = 3;
  std::normal_distribution<double> normal(0.0, 1.0);
  ImageD field = ImageD::Zero(rows, cols);
  double energy = 0;
  for (int o = 0; o < kOctaves; ++o) {
    ImageD white(rows, cols);
    for (Eigen::Index i = 0; i < white.size(); ++i) white.data()[i] = normal(rng);
    ImageD smooth = blur(white, tex.speckle_scale * std::pow(2.0, o));
    const double mean = smooth.mean();
    const double sd = std::sqrt((smooth.array() - mean).square().mean());
    const double amp = std::pow(2.0, -tex.spectral_slope * o);
    field.array() += amp * (smooth.array() - mean) / sd;
    energy += amp * amp;
  }
  return field * std::sqrt(tex.variance / energy);
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

inline double draw(std::mt19937_64& rng, double lo, double hi) {
  if (!(hi > lo)) return lo;
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

}  // namespace detail

inline std::string patient_name(int p) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "P%04d", p);
  return buf;
}

inline std::string core_name(int p, int c) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "P%04d-C%02d", p, c);
  return buf;
}

// Renders one core: benign speckle everywhere, plus (for cancer cores) a band
// of cancer texture around the needle covering `involvement` of the in-mask
// needle segment.
inline BiopsyCore synth_core(const SynthConfig& cfg, int patient, int core_index, int label,
                             std::uint64_t core_seed) {
  std::mt19937_64 rng(core_seed);
  BiopsyCore core;
  core.patient_id = patient_name(patient);
  core.core_id = core_name(patient, core_index);
  core.center_id = patient % cfg.n_centers;
  core.label = label;

  const int H = cfg.axial_samples, W = cfg.lateral_lines;
  core.frame.axial_spacing = cfg.axial_spacing;
  core.frame.lateral_spacing = cfg.lateral_spacing;
  core.frame.probe_origin = {0.0, (W - 1) / 2.0};
  core.needle.angle_deg = detail::draw(rng, -cfg.needle_angle_max, cfg.needle_angle_max);
  core.needle.depth_mm = detail::draw(rng, cfg.needle_depth_min, cfg.needle_depth_max);
  core.needle.width_mm = cfg.needle_width;

  // Elliptical prostate covering the distal part of the frame.
  const double cy = H * detail::draw(rng, 0.58, 0.66);
  const double cx = (W - 1) / 2.0 + W * detail::draw(rng, -0.05, 0.05);
  const double ry = H * detail::draw(rng, 0.34, 0.40);
  const double rx = W * detail::draw(rng, 0.40, 0.46);
  core.mask.mask.resize(H, W);
  for (int r = 0; r < H; ++r) {
    for (int c = 0; c < W; ++c) {
      const double u = (r - cy) / ry, v = (c - cx) / rx;
      core.mask.mask(r, c) = (u * u + v * v <= 1.0) ? 1 : 0;
    }
  }

  const ImageD benign = detail::texture_field(H, W, cfg.benign_texture, rng);
  core.frame.samples = benign.cast<float>();

  ExtractionParams params;
  params.roi_mm = cfg.roi_mm;
  const RoiSegment seg = roi_segment(core, params);
  if (label == 1) {
    core.involvement = detail::draw(rng, cfg.involvement_min, cfg.involvement_max);
    const double len = core.involvement * seg.length();
    const double start = detail::draw(rng, seg.t_begin, seg.t_end - len);
    core.cancer_segment = CancerSegment{start, start + len};
    const ImageD cancer = detail::texture_field(H, W, cfg.cancer_texture, rng);
    const auto [win_rows, win_cols] = window_shape(core.frame, cfg.roi_mm);
    (void)win_rows;
    const double half_width = std::max(seg.rect.width, static_cast<double>(win_cols)) / 2.0 + 2.0;
    const Rectangle& rect = seg.rect;
    for (int r = 0; r < H; ++r) {
      for (int c = 0; c < W; ++c) {
        const double dr = r - rect.origin.row, dc = c - rect.origin.col;
        const double t = dr * rect.direction.row + dc * rect.direction.col;
        const double n = dr * rect.normal.row + dc * rect.normal.col;
        if (t >= start && t <= start + len && std::abs(n) <= half_width) {
          core.frame.samples(r, c) = static_cast<float>(cancer(r, c));
        }
      }
    }
  } else {
    core.cancer_segment = CancerSegment{0.0, -1.0};
  }
  return core;
}

// Deterministic for a fixed config. The number of cancer cores is the rounded
// rate times the core count; which cores are cancerous is drawn from the seed.
inline std::vector<BiopsyCore> synth_generate(const SynthConfig& cfg) {
  cfg.validate();
  const int n_cores = cfg.n_patients * cfg.cores_per_patient;
  const int n_cancer = static_cast<int>(std::lround(cfg.cancer_core_rate * n_cores));
  std::vector<int> labels(static_cast<std::size_t>(n_cores), 0);
  std::fill(labels.begin(), labels.begin() + n_cancer, 1);
  std::mt19937_64 rng(detail::mix_seed(cfg.seed, 0));
  std::shuffle(labels.begin(), labels.end(), rng);

  std::vector<BiopsyCore> cores;
  cores.reserve(static_cast<std::size_t>(n_cores));
  for (int p = 0; p < cfg.n_patients; ++p) {
    for (int c = 0; c < cfg.cores_per_patient; ++c) {
      const int idx = p * cfg.cores_per_patient + c;
      cores.push_back(synth_core(cfg, p, c, labels[static_cast<std::size_t>(idx)],
                                 detail::mix_seed(cfg.seed, static_cast<std::uint64_t>(idx) + 1)));
    }
  }
  return cores;
}

}  // namespace pcaus::data
