#pragma once

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace pcaus::data {

using Image = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MaskGrid = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr int kRoiSize = 256;
inline constexpr int kPatchesPerCore = 55;

// Position in sample coordinates: row = axial sample, col = lateral line.
struct Point {
  double row = 0;
  double col = 0;
};

struct RFFrame {
  Image samples;
  double axial_spacing = 0;    // mm per sample
  double lateral_spacing = 0;  // mm per line
  Point probe_origin;

  int rows() const { return static_cast<int>(samples.rows()); }
  int cols() const { return static_cast<int>(samples.cols()); }

  void validate() const {
    if (samples.rows() < 1 || samples.cols() < 1) throw std::invalid_argument("RF frame is empty");
    if (!(axial_spacing > 0) || !(lateral_spacing > 0)) {
      throw std::invalid_argument("RF frame spacings must be positive");
    }
    if (!samples.allFinite()) throw std::invalid_argument("RF frame contains non-finite samples");
  }
};

struct NeedleGeometry {
  double angle_deg = 0;  // from the probe axis
  double depth_mm = 0;
  double width_mm = 0;

  void validate() const {
    if (!(depth_mm > 0)) throw std::invalid_argument("needle depth must be positive");
    if (!(width_mm > 0)) throw std::invalid_argument("needle width must be positive");
    if (!(angle_deg > -90.0 && angle_deg < 90.0)) throw std::invalid_argument("needle angle must lie in (-90, 90)");
  }
};

struct ProstateMask {
  MaskGrid mask;

  bool contains(int row, int col) const {
    return row >= 0 && col >= 0 && row < mask.rows() && col < mask.cols() && mask(row, col) != 0;
  }
};

// Along-needle extent of synthetic cancer, as distances (in samples) from the
// probe origin measured along the needle axis.
struct CancerSegment {
  double start = 0;
  double end = 0;

  bool contains(double t) const { return t >= start && t <= end; }
};

struct BiopsyCore {
  std::string core_id;
  std::string patient_id;
  int center_id = 0;
  int label = 0;  // 0 benign, 1 cancer
  double involvement = 0;
  RFFrame frame;
  NeedleGeometry needle;
  ProstateMask mask;
  std::optional<CancerSegment> cancer_segment;  // synthetic data only

  void validate() const {
    frame.validate();
    needle.validate();
    if (mask.mask.rows() != frame.samples.rows() || mask.mask.cols() != frame.samples.cols()) {
      throw std::invalid_argument("core " + core_id + ": mask shape differs from frame shape");
    }
    if (label != 0 && label != 1) throw std::invalid_argument("core " + core_id + ": label must be 0 or 1");
    if (label == 0 && involvement != 0) throw std::invalid_argument("core " + core_id + ": benign core with involvement");
    if (label == 1 && !(involvement > 0 && involvement <= 1)) {
      throw std::invalid_argument("core " + core_id + ": cancer core needs involvement in (0, 1]");
    }
  }
};

struct ROIPatch {
  Image pixels;  // kRoiSize x kRoiSize, values in [0, 1]
  std::string core_id;
  int index_along_needle = 0;
  int weak_label = 0;
  std::optional<int> synth_truth;
};

}  // namespace pcaus::data
