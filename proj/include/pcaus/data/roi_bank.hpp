#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "pcaus/data/roi.hpp"
#include "pcaus/nn/tensor.hpp"

namespace pcaus::data {

// ROI windows of a set of cores, preprocessed on demand from the frames.
// Only window positions are stored, so memory stays proportional to the frames.
class RoiBank {
 public:
  RoiBank(std::vector<BiopsyCore> cores, ExtractionParams params = {}) : cores_(std::move(cores)), params_(params) {
    for (const BiopsyCore& core : cores_) {
      const RoiSegment seg = roi_segment(core, params_);
      std::vector<Slot> slots;
      for (double t : roi_centers(seg, params_.n_patches)) slots.push_back({seg.rect.at(t), t});
      slots_.push_back(std::move(slots));
    }
  }

  std::size_t core_count() const { return cores_.size(); }
  int patches_per_core() const { return params_.n_patches; }
  std::size_t size() const { return cores_.size() * static_cast<std::size_t>(params_.n_patches); }
  const std::vector<BiopsyCore>& cores() const { return cores_; }
  const BiopsyCore& core(std::size_t c) const { return cores_.at(c); }
  const ExtractionParams& params() const { return params_; }

  Image patch(std::size_t c, int roi) const {
    const BiopsyCore& core = cores_.at(c);
    const Slot& s = slots_.at(c).at(static_cast<std::size_t>(roi));
    const auto [rows, cols] = window_shape(core.frame, params_.roi_mm);
    return preprocess_window(crop_window(core.frame, s.center, rows, cols), params_.out_size);
  }

  // Flat index over (core, roi) pairs in core-major order.
  Image patch(std::size_t flat) const {
    return patch(flat / static_cast<std::size_t>(params_.n_patches), static_cast<int>(flat % static_cast<std::size_t>(params_.n_patches)));
  }

  int label_of(std::size_t flat) const { return cores_.at(flat / static_cast<std::size_t>(params_.n_patches)).label; }

  // Generator ground truth for a window, when the core carries one.
  std::optional<int> truth(std::size_t c, int roi) const {
    const BiopsyCore& core = cores_.at(c);
    if (!core.cancer_segment) return std::nullopt;
    return core.cancer_segment->contains(slots_.at(c).at(static_cast<std::size_t>(roi)).t) ? 1 : 0;
  }

 private:
  struct Slot {
    Point center;
    double t;
  };

  std::vector<BiopsyCore> cores_;
  ExtractionParams params_;
  std::vector<std::vector<Slot>> slots_;
};

// Stacks images into a [N, 1, S, S] tensor.
inline nn::Tensor stack_images(const std::vector<Image>& images) {
  if (images.empty()) throw std::invalid_argument("stack_images: empty batch");
  const int rows = static_cast<int>(images.front().rows()), cols = static_cast<int>(images.front().cols());
  std::vector<float> v;
  v.reserve(images.size() * static_cast<std::size_t>(rows * cols));
  for (const Image& img : images) {
    if (img.rows() != rows || img.cols() != cols) throw std::invalid_argument("stack_images: image sizes differ");
    v.insert(v.end(), img.data(), img.data() + img.size());
  }
  return nn::Tensor::from_vector(std::move(v), {static_cast<int>(images.size()), 1, rows, cols});
}

}  // namespace pcaus::data
