#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "pcaus/data/needle.hpp"
#include "pcaus/data/preprocess.hpp"
#include "pcaus/data/types.hpp"

namespace pcaus::data {

struct ExtractionParams {
  int n_patches = kPatchesPerCore;
  double roi_mm = 5.0;
  int out_size = kRoiSize;
  double axis_step = 0.25;  // samples between needle-axis probes of the mask
};

// Part of the needle axis that lies inside the prostate mask.
struct RoiSegment {
  Rectangle rect;
  double t_begin = 0;
  double t_end = 0;

  double length() const { return t_end - t_begin; }
};

struct RoiWindow {
  Image samples;        // raw RF window
  Point center;
  double t = 0;         // distance along the needle axis, samples
  int index = 0;
};

inline int round_index(double v) { return static_cast<int>(std::lround(v)); }

// Longest contiguous run of the needle axis whose rounded sample position is
// inside the mask.
inline RoiSegment roi_segment(const BiopsyCore& core, const ExtractionParams& params = {}) {
  RoiSegment seg;
  seg.rect = needle_rectangle(core.frame, core.needle);
  const Rectangle& r = seg.rect;
  double best_begin = 0, best_end = -1, run_begin = 0, last_inside = 0;
  bool in_run = false;
  const int steps = static_cast<int>(std::floor(r.length() / params.axis_step));
  for (int s = 0; s <= steps; ++s) {
    const double t = r.t_start + s * params.axis_step;
    const Point p = r.at(t);
    const bool inside = core.mask.contains(round_index(p.row), round_index(p.col));
    if (inside) {
      if (!in_run) run_begin = t;
      in_run = true;
      last_inside = t;
      if (last_inside - run_begin > best_end - best_begin) {
        best_begin = run_begin;
        best_end = last_inside;
      }
    } else {
      in_run = false;
    }
  }
  if (best_end < best_begin) throw std::invalid_argument("no valid ROI region");
  seg.t_begin = best_begin;
  seg.t_end = best_end;
  return seg;
}

// Window centers equally spaced along the in-mask part of the needle axis.
inline std::vector<double> roi_centers(const RoiSegment& seg, int n_patches) {
  std::vector<double> t(static_cast<std::size_t>(n_patches));
  for (int i = 0; i < n_patches; ++i) {
    t[static_cast<std::size_t>(i)] =
        n_patches == 1 ? 0.5 * (seg.t_begin + seg.t_end)
                       : seg.t_begin + seg.length() * static_cast<double>(i) / (n_patches - 1);
  }
  return t;
}

inline std::pair<int, int> window_shape(const RFFrame& frame, double roi_mm) {
  return {std::max(2, round_index(roi_mm / frame.axial_spacing)),
          std::max(2, round_index(roi_mm / frame.lateral_spacing))};
}

// Copies a window centered at `center`; samples beyond the frame edge repeat
// the border.
inline Image crop_window(const RFFrame& frame, Point center, int rows, int cols) {
  Image w(rows, cols);
  const int top = round_index(center.row - rows / 2.0);
  const int left = round_index(center.col - cols / 2.0);
  for (int i = 0; i < rows; ++i) {
    const int r = std::clamp(top + i, 0, frame.rows() - 1);
    for (int j = 0; j < cols; ++j) w(i, j) = frame.samples(r, std::clamp(left + j, 0, frame.cols() - 1));
  }
  return w;
}

// Raw RF windows of roi_mm x roi_mm along the needle, in needle order.
inline std::vector<RoiWindow> extract_roi_grid(const BiopsyCore& core, const ExtractionParams& params = {}) {
  if (params.n_patches < 1) throw std::invalid_argument("n_patches must be positive");
  if (!(params.roi_mm > 0)) throw std::invalid_argument("roi_mm must be positive");
  const RoiSegment seg = roi_segment(core, params);
  const auto [rows, cols] = window_shape(core.frame, params.roi_mm);
  std::vector<RoiWindow> out;
  out.reserve(static_cast<std::size_t>(params.n_patches));
  int index = 0;
  for (double t : roi_centers(seg, params.n_patches)) {
    RoiWindow w;
    w.t = t;
    w.center = seg.rect.at(t);
    w.index = index++;
    w.samples = crop_window(core.frame, w.center, rows, cols);
    out.push_back(std::move(w));
  }
  return out;
}

inline ROIPatch make_patch(const BiopsyCore& core, const RoiWindow& window, int out_size = kRoiSize) {
  ROIPatch p;
  p.pixels = preprocess_window(window.samples, out_size);
  p.core_id = core.core_id;
  p.index_along_needle = window.index;
  p.weak_label = core.label;
  if (core.cancer_segment) p.synth_truth = core.cancer_segment->contains(window.t) ? 1 : 0;
  return p;
}

// Extraction plus preprocessing for every window of a core.
inline std::vector<ROIPatch> extract_patches(const BiopsyCore& core, const ExtractionParams& params = {}) {
  std::vector<ROIPatch> patches;
  for (const RoiWindow& w : extract_roi_grid(core, params)) patches.push_back(make_patch(core, w, params.out_size));
  return patches;
}

}  // namespace pcaus::data
