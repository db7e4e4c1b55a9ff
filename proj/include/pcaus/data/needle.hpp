#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "pcaus/data/types.hpp"

namespace pcaus::data {

// Needle trace rectangle in sample coordinates. The long axis runs from the
// probe origin along the needle direction; `start`/`end` are the clipped axis
// endpoints at distances `t_start`/`t_end` (samples) from the origin.
struct Rectangle {
  std::array<Point, 4> corners;  // start-left, start-right, end-right, end-left
  Point origin;
  Point direction;      // unit vector along the needle axis
  Point normal;         // unit vector across the needle
  double t_start = 0;
  double t_end = 0;
  double width = 0;     // samples across the needle

  double length() const { return t_end - t_start; }
  Point at(double t) const { return {origin.row + t * direction.row, origin.col + t * direction.col}; }
};

// Builds the trace rectangle from the needle angle and depth. Length is
// depth / axial_spacing samples and width is width / lateral_spacing samples;
// the rotation is applied in sample space. The axis is clipped to the frame.
inline Rectangle needle_rectangle(const RFFrame& frame, const NeedleGeometry& needle) {
  needle.validate();
  const double length = needle.depth_mm / frame.axial_spacing;
  if (length < 1.0) throw std::invalid_argument("needle depth is shorter than one axial sample");
  const double a = needle.angle_deg * std::numbers::pi / 180.0;

  Rectangle r;
  r.origin = frame.probe_origin;
  r.direction = {std::cos(a), std::sin(a)};
  r.normal = {-std::sin(a), std::cos(a)};
  r.width = needle.width_mm / frame.lateral_spacing;

  // Liang-Barsky clip of origin + t * direction, t in [0, length], against the frame.
  double t0 = 0.0, t1 = length;
  const double lo[2] = {0.0, 0.0};
  const double hi[2] = {static_cast<double>(frame.rows() - 1), static_cast<double>(frame.cols() - 1)};
  const double p0[2] = {r.origin.row, r.origin.col};
  const double d[2] = {r.direction.row, r.direction.col};
  for (int axis = 0; axis < 2; ++axis) {
    if (std::abs(d[axis]) < 1e-12) {
      if (p0[axis] < lo[axis] || p0[axis] > hi[axis]) throw std::invalid_argument("needle outside frame");
      continue;
    }
    double ta = (lo[axis] - p0[axis]) / d[axis];
    double tb = (hi[axis] - p0[axis]) / d[axis];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  if (!(t1 > t0)) throw std::invalid_argument("needle outside frame");
  r.t_start = t0;
  r.t_end = t1;

  const double h = r.width / 2.0;
  const Point s = r.at(t0), e = r.at(t1);
  r.corners = {Point{s.row - h * r.normal.row, s.col - h * r.normal.col},
               Point{s.row + h * r.normal.row, s.col + h * r.normal.col},
               Point{e.row + h * r.normal.row, e.col + h * r.normal.col},
               Point{e.row - h * r.normal.row, e.col - h * r.normal.col}};
  return r;
}

}  // namespace pcaus::data
