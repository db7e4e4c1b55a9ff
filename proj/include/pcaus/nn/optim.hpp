#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "pcaus/nn/tensor.hpp"

namespace pcaus::nn {

struct AdamOptions {
  float lr = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  float weight_decay = 0.0f;  // decoupled (AdamW)
};

class AdamW {
 public:
  AdamW(std::vector<Tensor> params, AdamOptions options) : params_(std::move(params)), opt_(options) {
    for (const auto& p : params_) {
      m_.emplace_back(static_cast<std::size_t>(p.numel()), 0.0f);
      v_.emplace_back(static_cast<std::size_t>(p.numel()), 0.0f);
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  void step() {
    ++t_;
    const float c1 = 1.0f - std::pow(opt_.beta1, static_cast<float>(t_));
    const float c2 = 1.0f - std::pow(opt_.beta2, static_cast<float>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Tensor& p = params_[i];
      if (!p.has_grad()) continue;
      float* w = p.mutable_data();
      const float* g = p.grad_values().data();
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t j = 0; j < m.size(); ++j) {
        m[j] = opt_.beta1 * m[j] + (1.0f - opt_.beta1) * g[j];
        v[j] = opt_.beta2 * v[j] + (1.0f - opt_.beta2) * g[j] * g[j];
        const float update = (m[j] / c1) / (std::sqrt(v[j] / c2) + opt_.eps);
        w[j] -= opt_.lr * (update + opt_.weight_decay * w[j]);
      }
    }
  }

  void set_lr(float lr) { opt_.lr = lr; }
  float lr() const { return opt_.lr; }
  std::int64_t steps() const { return t_; }

 private:
  std::vector<Tensor> params_;
  AdamOptions opt_;
  std::vector<std::vector<float>> m_, v_;
  std::int64_t t_ = 0;
};

// Cosine decay from `base` to zero after a linear warmup.
inline float cosine_lr(float base, int step, int total, int warmup = 0) {
  if (warmup > 0 && step < warmup) return base * static_cast<float>(step + 1) / static_cast<float>(warmup);
  const float progress = total > warmup ? static_cast<float>(step - warmup) / static_cast<float>(total - warmup) : 1.0f;
  return base * 0.5f * (1.0f + std::cos(3.14159265358979f * progress));
}

}  // namespace pcaus::nn
