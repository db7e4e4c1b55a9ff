#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "pcaus/models/backbone.hpp"
#include "pcaus/nn/loss.hpp"
#include "pcaus/nn/optim.hpp"

namespace pcaus::finetune {

// Two-layer MLP classifier: feature_dim -> hidden -> ReLU -> 2 logits.
class RoiHead : public nn::Module {
 public:
  RoiHead(int in, nn::Rng& rng, int hidden = 128) : fc1_(in, hidden, rng), fc2_(hidden, 2, rng) {
    register_module("fc1", fc1_);
    register_module("fc2", fc2_);
  }

  nn::Tensor forward(const nn::Tensor& features) const { return fc2_.forward(nn::relu(fc1_.forward(features))); }
  int in_features() const { return fc1_.weight.dim(1); }

 private:
  nn::Linear fc1_;
  nn::Linear fc2_;
};

enum class FinetuneMode { linear_probe, full };

inline FinetuneMode parse_mode(const std::string& s) {
  if (s == "linear" || s == "linear_probe") return FinetuneMode::linear_probe;
  if (s == "full") return FinetuneMode::full;
  throw std::invalid_argument("unknown finetune mode '" + s + "'");
}

inline std::string mode_name(FinetuneMode m) { return m == FinetuneMode::full ? "full" : "linear_probe"; }

// Table label for the ROI-scale rows.
inline std::string mode_label(FinetuneMode m) { return m == FinetuneMode::full ? "Finetune" : "Linear"; }

struct FinetuneSchedule {
  int steps = 300;
  int batch_size = 64;
  float lr = 1e-3f;
  float weight_decay = 1e-4f;
  std::uint64_t seed = 0;
};

struct CorePrediction {
  std::string core_id;
  double probability = 0;
  std::vector<double> roi_probabilities;
};

inline void check_finite(const LossBreakdown& loss, const char* stage, int step) {
  if (const std::string bad = loss.non_finite_part(); !bad.empty()) {
    throw std::runtime_error(std::string(stage) + " diverged at step " + std::to_string(step) + ": " + bad +
                             " is not finite");
  }
}

// One optimizer step of cross-entropy on a batch of patches; trains encoder and head.
inline LossBreakdown finetune_step(models::Encoder& encoder, RoiHead& head, const nn::Tensor& patches,
                                   std::span<const int> labels, nn::AdamW& optimizer, int step = 0) {
  encoder.train();
  optimizer.zero_grad();
  LossBreakdown loss;
  nn::Tensor ce = nn::cross_entropy(head.forward(encoder.forward(patches)), labels, &loss);
  check_finite(loss, "finetuning", step);
  ce.backward();
  optimizer.step();
  return loss;
}

// One optimizer step of the head alone on precomputed features.
inline LossBreakdown head_step(RoiHead& head, const nn::Tensor& features, std::span<const int> labels,
                               nn::AdamW& optimizer, int step = 0) {
  optimizer.zero_grad();
  LossBreakdown loss;
  nn::Tensor ce = nn::cross_entropy(head.forward(features), labels, &loss);
  check_finite(loss, "head training", step);
  ce.backward();
  optimizer.step();
  return loss;
}

inline nn::Tensor rows_tensor(const models::FeatureMatrix& m, std::span<const std::size_t> rows) {
  std::vector<float> v;
  v.reserve(rows.size() * static_cast<std::size_t>(m.cols()));
  for (std::size_t r : rows) {
    v.insert(v.end(), m.row(static_cast<Eigen::Index>(r)).data(), m.row(static_cast<Eigen::Index>(r)).data() + m.cols());
  }
  return nn::Tensor::from_vector(std::move(v), {static_cast<int>(rows.size()), static_cast<int>(m.cols())});
}

// Linear-probe training: minibatch cross-entropy of the head over feature rows.
inline std::vector<LossBreakdown> train_head(RoiHead& head, const models::FeatureMatrix& features,
                                             std::span<const int> labels, const FinetuneSchedule& schedule) {
  if (features.rows() == 0 || static_cast<std::size_t>(features.rows()) != labels.size()) {
    throw std::invalid_argument("train_head: feature rows must match labels");
  }
  nn::AdamW optimizer(head.parameters(), {schedule.lr, 0.9f, 0.999f, 1e-8f, schedule.weight_decay});
  std::mt19937_64 rng(schedule.seed);
  std::vector<std::size_t> order(static_cast<std::size_t>(features.rows()));
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t batch = std::min<std::size_t>(static_cast<std::size_t>(schedule.batch_size), order.size());
  std::size_t cursor = order.size();
  std::vector<LossBreakdown> history;
  for (int step = 0; step < schedule.steps; ++step) {
    if (cursor + batch > order.size()) {
      std::shuffle(order.begin(), order.end(), rng);
      cursor = 0;
    }
    const std::span<const std::size_t> rows(order.data() + cursor, batch);
    cursor += batch;
    std::vector<int> y;
    for (std::size_t r : rows) y.push_back(labels[r]);
    optimizer.set_lr(nn::cosine_lr(schedule.lr, step, schedule.steps));
    history.push_back(head_step(head, rows_tensor(features, rows), y, optimizer, step));
  }
  return history;
}

// Cancer-class softmax probability per feature row.
inline std::vector<double> head_probabilities(const RoiHead& head, const models::FeatureMatrix& features) {
  nn::NoGradGuard no_grad;
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(features.rows()));
  constexpr Eigen::Index kChunk = 4096;
  for (Eigen::Index start = 0; start < features.rows(); start += kChunk) {
    const Eigen::Index n = std::min(kChunk, features.rows() - start);
    std::vector<float> v(features.data() + start * features.cols(), features.data() + (start + n) * features.cols());
    const nn::Tensor logits =
        head.forward(nn::Tensor::from_vector(std::move(v), {static_cast<int>(n), static_cast<int>(features.cols())}));
    for (double p : positive_probabilities<float>(nn::ConstMatMap(logits.data(), n, 2))) out.push_back(p);
  }
  return out;
}

// Encoder in eval mode followed by the head.
inline std::vector<double> predict_roi(models::Encoder& encoder, const RoiHead& head, const nn::Tensor& patches) {
  const models::FeatureMatrix f = models::encode(encoder, patches, models::Mode::eval);
  if (f.cols() != head.in_features()) throw std::invalid_argument("predict_roi: encoder width does not match head");
  return head_probabilities(head, f);
}

inline double aggregate_core(std::span<const double> roi_probabilities) {
  if (roi_probabilities.empty()) throw std::invalid_argument("aggregate_core: no ROI probabilities");
  return std::accumulate(roi_probabilities.begin(), roi_probabilities.end(), 0.0) /
         static_cast<double>(roi_probabilities.size());
}

}  // namespace pcaus::finetune
