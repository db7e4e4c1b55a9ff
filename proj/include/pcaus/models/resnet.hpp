#pragma once

#include <memory>
#include <string>
#include <vector>

#include "pcaus/models/encoder.hpp"

namespace pcaus::models {

// Residual block. The slim form computes relu(shortcut(x) + BN(conv(x))) with
// a single conv/BN pair; `two_conv` gives the standard two-pair block.
class ResidualBlock : public nn::Module {
 public:
  ResidualBlock(int in, int out, int stride, bool two_conv, nn::Rng& rng)
      : conv1_(in, out, 3, stride, 1, rng, false), bn1_(out) {
    register_module("conv1", conv1_);
    register_module("bn1", bn1_);
    if (two_conv) {
      conv2_ = std::make_unique<nn::Conv2d>(out, out, 3, 1, 1, rng, false);
      bn2_ = std::make_unique<nn::BatchNorm>(out);
      register_module("conv2", *conv2_);
      register_module("bn2", *bn2_);
    }
    if (stride != 1 || in != out) {
      shortcut_conv_ = std::make_unique<nn::Conv2d>(in, out, 1, stride, 0, rng, false);
      shortcut_bn_ = std::make_unique<nn::BatchNorm>(out);
      register_module("shortcut_conv", *shortcut_conv_);
      register_module("shortcut_bn", *shortcut_bn_);
    }
  }

  nn::Tensor forward(const nn::Tensor& x) {
    nn::Tensor main = bn1_.forward(conv1_.forward(x));
    if (conv2_) main = bn2_->forward(conv2_->forward(nn::relu(main)));
    const nn::Tensor skip = shortcut_conv_ ? shortcut_bn_->forward(shortcut_conv_->forward(x)) : x;
    return nn::relu(nn::add(skip, main));
  }

 private:
  nn::Conv2d conv1_;
  nn::BatchNorm bn1_;
  std::unique_ptr<nn::Conv2d> conv2_;
  std::unique_ptr<nn::BatchNorm> bn2_;
  std::unique_ptr<nn::Conv2d> shortcut_conv_;
  std::unique_ptr<nn::BatchNorm> shortcut_bn_;
};

// Four stages of residual blocks after a conv/BN/ReLU stem, global average pooled.
class ResNetSlim : public Encoder {
 public:
  ResNetSlim(const BackboneConfig& cfg, nn::Rng& rng)
      : opts_(cfg.resnet), image_size_(cfg.image_size),
        stem_(1, cfg.resnet.widths[0], cfg.resnet.stem_kernel, cfg.resnet.stem_stride, cfg.resnet.stem_kernel / 2, rng, false),
        stem_bn_(cfg.resnet.widths[0]) {
    register_module("stem", stem_);
    register_module("stem_bn", stem_bn_);
    int in = opts_.widths[0];
    for (int s = 0; s < 4; ++s) {
      const int out = opts_.widths[static_cast<std::size_t>(s)];
      for (int b = 0; b < opts_.blocks_per_stage; ++b) {
        const int stride = (b == 0 && s > 0) ? 2 : 1;
        blocks_.push_back(std::make_unique<ResidualBlock>(in, out, stride, opts_.two_conv_blocks, rng));
        register_module("layer" + std::to_string(s + 1) + "." + std::to_string(b), *blocks_.back());
        in = out;
      }
    }
  }

  nn::Tensor forward(const nn::Tensor& images) override {
    check_input(images);
    nn::Tensor x = nn::relu(stem_bn_.forward(stem_.forward(images)));
    if (opts_.stem_pool) x = nn::max_pool2d(x, 3, 2, 1);
    for (auto& block : blocks_) x = block->forward(x);
    return nn::global_avg_pool(x);
  }

  int feature_dim() const override { return opts_.widths[3]; }
  BackboneVariant variant() const override { return BackboneVariant::resnet18_slim; }
  int image_size() const override { return image_size_; }

 private:
  ResNetOptions opts_;
  int image_size_;
  nn::Conv2d stem_;
  nn::BatchNorm stem_bn_;
  std::vector<std::unique_ptr<ResidualBlock>> blocks_;
};

}  // namespace pcaus::models
