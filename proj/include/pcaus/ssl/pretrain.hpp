#pragma once

#include "json.hpp"

#include <algorithm>
#include <concepts>
#include <cstdint>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "pcaus/data/roi_bank.hpp"
#include "pcaus/models/encoder.hpp"
#include "pcaus/nn/optim.hpp"
#include "pcaus/ssl/augment.hpp"
#include "pcaus/ssl/vicreg.hpp"

namespace pcaus::ssl {

struct ProjectorConfig {
  int hidden = 512;
  int out = 512;

  void validate() const {
    if (hidden < 1) throw std::invalid_argument("projector hidden width must be positive");
    if (out < 2) throw std::invalid_argument("projector output width must be at least 2");
  }
};

// Expander: Linear-BN-ReLU, Linear-BN-ReLU, Linear.
class Projector : public nn::Module {
 public:
  Projector(int in, const ProjectorConfig& cfg, nn::Rng& rng)
      : fc1_(in, cfg.hidden, rng), bn1_(cfg.hidden), fc2_(cfg.hidden, cfg.hidden, rng), bn2_(cfg.hidden),
        fc3_(cfg.hidden, cfg.out, rng) {
    cfg.validate();
    register_module("fc1", fc1_);
    register_module("bn1", bn1_);
    register_module("fc2", fc2_);
    register_module("bn2", bn2_);
    register_module("fc3", fc3_);
  }

  nn::Tensor forward(const nn::Tensor& h) {
    nn::Tensor x = nn::relu(bn1_.forward(fc1_.forward(h)));
    x = nn::relu(bn2_.forward(fc2_.forward(x)));
    return fc3_.forward(x);
  }

 private:
  nn::Linear fc1_;
  nn::BatchNorm bn1_;
  nn::Linear fc2_;
  nn::BatchNorm bn2_;
  nn::Linear fc3_;
};

struct PretrainSchedule {
  int steps = 200;
  int batch_size = 32;
  float lr = 1e-3f;
  float weight_decay = 1e-6f;
  int warmup = 10;
  std::uint64_t seed = 0;
};

struct PretrainRecord {
  int step = 0;
  float lr = 0;
  LossBreakdown loss;
};

// Anything that yields preprocessed ROI images by flat index.
template <class S>
concept PatchSource = requires(const S& s, std::size_t i) {
  { s.size() } -> std::convertible_to<std::size_t>;
  { s.patch(i) } -> std::convertible_to<data::Image>;
};

struct ImageList {
  std::vector<data::Image> images;
  std::size_t size() const { return images.size(); }
  const data::Image& patch(std::size_t i) const { return images.at(i); }
};

inline std::uint64_t view_seed(std::uint64_t seed, std::uint64_t step, std::uint64_t slot) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(step), static_cast<std::uint32_t>(slot), 0x5eedu};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (std::uint64_t{words[0]} << 32) | words[1];
}

// Minimizes the VICReg objective on pairs of augmented views. Updates the
// encoder and projector in place and returns the per-step loss history.
template <PatchSource Source>
std::vector<PretrainRecord> pretrain(models::Encoder& encoder, Projector& projector, const Source& source,
                                     const AugmentationPolicy& policy, const VICRegWeights& weights,
                                     const PretrainSchedule& schedule) {
  policy.validate();
  weights.validate();
  if (schedule.batch_size < 2) throw std::invalid_argument("pretrain: batch size must be at least 2");
  if (source.size() == 0) throw std::invalid_argument("pretrain: dataset is empty");
  if (schedule.steps < 0) throw std::invalid_argument("pretrain: steps must be nonnegative");

  std::vector<nn::Tensor> params = encoder.parameters();
  for (const nn::Tensor& p : projector.parameters()) params.push_back(p);
  nn::AdamW optimizer(params, {schedule.lr, 0.9f, 0.999f, 1e-8f, schedule.weight_decay});
  encoder.train();
  projector.train();

  std::mt19937_64 rng(schedule.seed);
  std::vector<std::size_t> order(source.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto batch = static_cast<std::size_t>(std::min<std::size_t>(static_cast<std::size_t>(schedule.batch_size), source.size()));
  if (batch < 2) throw std::invalid_argument("pretrain: need at least 2 patches per batch");

  std::vector<PretrainRecord> history;
  history.reserve(static_cast<std::size_t>(schedule.steps));
  for (int step = 0; step < schedule.steps; ++step) {
    // Partial Fisher-Yates: the first `batch` entries become a uniform sample.
    for (std::size_t i = 0; i < batch; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, order.size() - 1);
      std::swap(order[i], order[pick(rng)]);
    }
    std::vector<data::Image> view1, view2;
    for (std::size_t i = 0; i < batch; ++i) {
      auto [a, b] = augment_pair(source.patch(order[i]), policy,
                                 view_seed(schedule.seed, static_cast<std::uint64_t>(step), i));
      view1.push_back(std::move(a));
      view2.push_back(std::move(b));
    }
    const float lr = nn::cosine_lr(schedule.lr, step, schedule.steps, schedule.warmup);
    optimizer.set_lr(lr);
    optimizer.zero_grad();
    const nn::Tensor z1 = projector.forward(encoder.forward(data::stack_images(view1)));
    const nn::Tensor z2 = projector.forward(encoder.forward(data::stack_images(view2)));
    PretrainRecord rec{step, lr, {}};
    nn::Tensor loss = vicreg_loss(z1, z2, weights, &rec.loss);
    if (const std::string bad = rec.loss.non_finite_part(); !bad.empty()) {
      throw std::runtime_error("pretraining diverged at step " + std::to_string(step) + ": " + bad + " term is not finite");
    }
    loss.backward();
    optimizer.step();
    history.push_back(std::move(rec));
  }
  return history;
}

inline nlohmann::json history_json(const std::vector<PretrainRecord>& history) {
  nlohmann::json log = nlohmann::json::array();
  for (const PretrainRecord& r : history) {
    nlohmann::json e{{"step", r.step}, {"lr", r.lr}, {"total", r.loss.total}};
    for (const auto& [name, v] : r.loss.terms) e[name] = v;
    log.push_back(std::move(e));
  }
  return log;
}

}  // namespace pcaus::ssl
