#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "pcaus/nn/ops.hpp"
#include "pcaus/nn/tensor.hpp"

namespace pcaus::nn {

using Rng = std::mt19937_64;

inline Tensor uniform_parameter(Shape shape, float bound, Rng& rng) {
  std::uniform_real_distribution<float> dist(-bound, bound);
  std::vector<float> v(static_cast<std::size_t>(numel_of(shape)));
  for (float& x : v) x = dist(rng);
  return Tensor::from_vector(std::move(v), std::move(shape), true);
}

inline Tensor normal_parameter(Shape shape, float stddev, Rng& rng) {
  std::normal_distribution<float> dist(0.0f, stddev);
  std::vector<float> v(static_cast<std::size_t>(numel_of(shape)));
  for (float& x : v) x = dist(rng);
  return Tensor::from_vector(std::move(v), std::move(shape), true);
}

inline Tensor constant_parameter(Shape shape, float value) {
  std::vector<float> v(static_cast<std::size_t>(numel_of(shape)), value);
  return Tensor::from_vector(std::move(v), std::move(shape), true);
}

// Base for anything holding parameters. Children and parameters are registered
// by the owning constructor; modules are neither copyable nor movable so the
// registered pointers stay valid.
class Module {
 public:
  Module() = default;
  Module(const Module&) = delete;
  Module& operator=(const Module&) = delete;
  virtual ~Module() = default;

  void train(bool on = true) {
    training_ = on;
    for (auto& [name, child] : children_) child->train(on);
  }
  void eval() { train(false); }
  bool is_training() const { return training_; }

  std::vector<std::pair<std::string, Tensor>> named_parameters() const {
    std::vector<std::pair<std::string, Tensor>> out;
    collect(out, "", false);
    return out;
  }

  // Parameters followed by buffers (normalization running statistics).
  std::vector<std::pair<std::string, Tensor>> named_state() const {
    std::vector<std::pair<std::string, Tensor>> out;
    collect(out, "", true);
    return out;
  }

  std::vector<Tensor> parameters() const {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_parameters()) out.push_back(t);
    return out;
  }

  std::int64_t parameter_count() const {
    std::int64_t n = 0;
    for (auto& [name, t] : named_parameters()) n += t.numel();
    return n;
  }

  void set_trainable(bool on) {
    for (auto& t : parameters()) {
      t.set_requires_grad(on);
      t.zero_grad();
    }
  }

  void zero_grad() {
    for (auto& t : parameters()) t.zero_grad();
  }

 protected:
  Tensor register_parameter(std::string name, Tensor t) {
    params_.emplace_back(std::move(name), t);
    return t;
  }
  Tensor register_buffer(std::string name, Tensor t) {
    buffers_.emplace_back(std::move(name), t);
    return t;
  }
  void register_module(std::string name, Module& child) { children_.emplace_back(std::move(name), &child); }

 private:
  void collect(std::vector<std::pair<std::string, Tensor>>& out, const std::string& prefix,
               bool with_buffers) const {
    for (auto& [name, t] : params_) out.emplace_back(prefix + name, t);
    if (with_buffers) {
      for (auto& [name, t] : buffers_) out.emplace_back(prefix + name, t);
    }
    for (auto& [name, child] : children_) child->collect(out, prefix + name + ".", with_buffers);
  }

  bool training_ = true;
  std::vector<std::pair<std::string, Tensor>> params_;
  std::vector<std::pair<std::string, Tensor>> buffers_;
  std::vector<std::pair<std::string, Module*>> children_;
};

class Linear : public Module {
 public:
  Linear(int in, int out, Rng& rng, bool bias = true) {
    const float bound = 1.0f / std::sqrt(static_cast<float>(in));
    weight = register_parameter("weight", uniform_parameter({out, in}, bound, rng));
    if (bias) this->bias = register_parameter("bias", uniform_parameter({out}, bound, rng));
  }

  Tensor forward(const Tensor& x) const { return linear(x, weight, bias); }
  int in_features() const { return weight.dim(1); }
  int out_features() const { return weight.dim(0); }

  Tensor weight;
  Tensor bias;
};

class Conv2d : public Module {
 public:
  Conv2d(int in, int out, int kernel, int stride, int padding, Rng& rng, bool bias = true)
      : stride_(stride), padding_(padding) {
    const float bound = 1.0f / std::sqrt(static_cast<float>(in * kernel * kernel));
    weight = register_parameter("weight", uniform_parameter({out, in, kernel, kernel}, bound, rng));
    if (bias) this->bias = register_parameter("bias", uniform_parameter({out}, bound, rng));
  }

  Tensor forward(const Tensor& x) const { return conv2d(x, weight, bias, stride_, padding_); }

  Tensor weight;
  Tensor bias;

 private:
  int stride_;
  int padding_;
};

class BatchNorm : public Module {
 public:
  explicit BatchNorm(int channels) {
    gamma = register_parameter("weight", constant_parameter({channels}, 1.0f));
    beta = register_parameter("bias", constant_parameter({channels}, 0.0f));
    running_mean = register_buffer("running_mean", Tensor::zeros({channels}));
    running_var = register_buffer("running_var", Tensor::from_vector(std::vector<float>(channels, 1.0f), {channels}));
  }

  Tensor forward(const Tensor& x) { return batch_norm(x, gamma, beta, running_mean, running_var, is_training()); }

  Tensor gamma, beta, running_mean, running_var;
};

class LayerNorm : public Module {
 public:
  explicit LayerNorm(int width) {
    gamma = register_parameter("weight", constant_parameter({width}, 1.0f));
    beta = register_parameter("bias", constant_parameter({width}, 0.0f));
  }

  Tensor forward(const Tensor& x) const { return layer_norm(x, gamma, beta); }

  Tensor gamma, beta;
};

// Two-layer GELU feed-forward used inside transformer blocks.
class FeedForward : public Module {
 public:
  FeedForward(int width, int hidden, Rng& rng) : fc1_(width, hidden, rng), fc2_(hidden, width, rng) {
    register_module("fc1", fc1_);
    register_module("fc2", fc2_);
  }

  Tensor forward(const Tensor& x) const { return fc2_.forward(gelu(fc1_.forward(x))); }

 private:
  Linear fc1_, fc2_;
};

// Multi-head self-attention on [N, T, C]. With `reduction` > 1 keys and values
// come from a strided convolution over the token grid (spatial-reduction
// attention); the caller then has to pass the grid size.
class MultiHeadAttention : public Module {
 public:
  MultiHeadAttention(int width, int heads, Rng& rng, int reduction = 1)
      : heads_(heads), reduction_(reduction),
        q_(width, width, rng), k_(width, width, rng), v_(width, width, rng), out_(width, width, rng) {
    if (width % heads != 0) throw std::invalid_argument("attention width must be divisible by heads");
    register_module("q", q_);
    register_module("k", k_);
    register_module("v", v_);
    register_module("out", out_);
    if (reduction_ > 1) {
      sr_ = std::make_unique<Conv2d>(width, width, reduction_, reduction_, 0, rng);
      sr_norm_ = std::make_unique<LayerNorm>(width);
      register_module("sr", *sr_);
      register_module("sr_norm", *sr_norm_);
    }
  }

  Tensor forward(const Tensor& x, const std::vector<std::uint8_t>& key_valid = {}, int grid_h = 0,
                 int grid_w = 0) const {
    Tensor kv_source = x;
    if (reduction_ > 1) {
      if (grid_h * grid_w != x.dim(1)) throw std::invalid_argument("spatial-reduction attention needs the token grid");
      kv_source = sr_norm_->forward(to_tokens(sr_->forward(from_tokens(x, grid_h, grid_w))));
    }
    Tensor y = attention(q_.forward(x), k_.forward(kv_source), v_.forward(kv_source), heads_, key_valid);
    return out_.forward(y);
  }

 private:
  int heads_;
  int reduction_;
  Linear q_, k_, v_, out_;
  std::unique_ptr<Conv2d> sr_;
  std::unique_ptr<LayerNorm> sr_norm_;
};

// Pre-norm transformer encoder block.
class TransformerBlock : public Module {
 public:
  TransformerBlock(int width, int heads, int ffn_hidden, Rng& rng, int reduction = 1)
      : norm1_(width), attn_(width, heads, rng, reduction), norm2_(width), ffn_(width, ffn_hidden, rng) {
    register_module("norm1", norm1_);
    register_module("attn", attn_);
    register_module("norm2", norm2_);
    register_module("ffn", ffn_);
  }

  Tensor forward(const Tensor& x, const std::vector<std::uint8_t>& key_valid = {}, int grid_h = 0,
                 int grid_w = 0) const {
    Tensor h = add(x, attn_.forward(norm1_.forward(x), key_valid, grid_h, grid_w));
    return add(h, ffn_.forward(norm2_.forward(h)));
  }

 private:
  LayerNorm norm1_;
  MultiHeadAttention attn_;
  LayerNorm norm2_;
  FeedForward ffn_;
};

}  // namespace pcaus::nn
