#pragma once

#include <memory>
#include <string>
#include <vector>

#include "pcaus/models/encoder.hpp"

namespace pcaus::models {

// Patchify embedding, class token, learned positions, pre-norm encoder stack.
class VisionTransformer : public Encoder {
 public:
  VisionTransformer(const BackboneConfig& cfg, nn::Rng& rng)
      : opts_(cfg.vit), image_size_(cfg.image_size),
        embed_(1, cfg.vit.width, cfg.vit.patch, cfg.vit.patch, 0, rng), norm_(cfg.vit.width) {
    const int grid = image_size_ / opts_.patch;
    register_module("patch_embed", embed_);
    cls_ = register_parameter("cls_token", nn::normal_parameter({opts_.width}, 0.02f, rng));
    pos_ = register_parameter("pos_embed", nn::normal_parameter({grid * grid + 1, opts_.width}, 0.02f, rng));
    for (int i = 0; i < opts_.depth; ++i) {
      blocks_.push_back(std::make_unique<nn::TransformerBlock>(opts_.width, opts_.heads, opts_.width * opts_.mlp_ratio, rng));
      register_module("blocks." + std::to_string(i), *blocks_.back());
    }
    register_module("norm", norm_);
  }

  nn::Tensor forward(const nn::Tensor& images) override {
    check_input(images);
    nn::Tensor x = nn::to_tokens(embed_.forward(images));
    x = nn::add_positional(nn::prepend_token(x, cls_), pos_);
    for (auto& b : blocks_) x = b->forward(x);
    return nn::select_token(norm_.forward(x), 0);
  }

  int feature_dim() const override { return opts_.width; }
  BackboneVariant variant() const override { return BackboneVariant::vit; }
  int image_size() const override { return image_size_; }

 private:
  VitOptions opts_;
  int image_size_;
  nn::Conv2d embed_;
  nn::Tensor cls_, pos_;
  std::vector<std::unique_ptr<nn::TransformerBlock>> blocks_;
  nn::LayerNorm norm_;
};

// Compact convolutional transformer: two conv/ReLU/max-pool tokenizer stages,
// transformer stack, and attention-weighted sequence pooling instead of a
// class token.
class CompactConvTransformer : public Encoder {
 public:
  CompactConvTransformer(const BackboneConfig& cfg, nn::Rng& rng)
      : opts_(cfg.cct), image_size_(cfg.image_size),
        conv1_(1, cfg.cct.tokenizer_channels, 7, 4, 3, rng, false),
        conv2_(cfg.cct.tokenizer_channels, cfg.cct.width, 3, 2, 1, rng, false),
        norm_(cfg.cct.width), pool_score_(cfg.cct.width, 1, rng) {
    register_module("tokenizer.conv1", conv1_);
    register_module("tokenizer.conv2", conv2_);
    const int tokens = token_grid() * token_grid();
    pos_ = register_parameter("pos_embed", nn::normal_parameter({tokens, opts_.width}, 0.02f, rng));
    for (int i = 0; i < opts_.depth; ++i) {
      blocks_.push_back(std::make_unique<nn::TransformerBlock>(opts_.width, opts_.heads, opts_.width * opts_.mlp_ratio, rng));
      register_module("blocks." + std::to_string(i), *blocks_.back());
    }
    register_module("norm", norm_);
    register_module("seq_pool", pool_score_);
  }

  nn::Tensor forward(const nn::Tensor& images) override {
    check_input(images);
    nn::Tensor x = nn::max_pool2d(nn::relu(conv1_.forward(images)), 3, 2, 1);
    x = nn::max_pool2d(nn::relu(conv2_.forward(x)), 3, 2, 1);
    x = nn::add_positional(nn::to_tokens(x), pos_);
    for (auto& b : blocks_) x = b->forward(x);
    x = norm_.forward(x);
    return nn::attention_pool(x, pool_score_.forward(x));
  }

  int feature_dim() const override { return opts_.width; }
  BackboneVariant variant() const override { return BackboneVariant::cct; }
  int image_size() const override { return image_size_; }

 private:
  int token_grid() const {
    auto out = [](int n, int k, int s, int p) { return (n + 2 * p - k) / s + 1; };
    int g = out(image_size_, 7, 4, 3);
    g = out(g, 3, 2, 1);
    g = out(g, 3, 2, 1);
    return out(g, 3, 2, 1);
  }

  CctOptions opts_;
  int image_size_;
  nn::Conv2d conv1_, conv2_;
  nn::Tensor pos_;
  std::vector<std::unique_ptr<nn::TransformerBlock>> blocks_;
  nn::LayerNorm norm_;
  nn::Linear pool_score_;
};

// Pyramid vision transformer: four stages, each a strided patch embedding
// followed by blocks with spatial-reduction attention; mean-pooled output.
class PyramidVisionTransformer : public Encoder {
 public:
  PyramidVisionTransformer(const BackboneConfig& cfg, nn::Rng& rng)
      : opts_(cfg.pvt), image_size_(cfg.image_size), norm_(cfg.pvt.widths[3]) {
    int in = 1;
    int grid = image_size_;
    for (std::size_t s = 0; s < 4; ++s) {
      Stage& st = stages_.emplace_back();
      grid /= opts_.patch[s];
      st.grid = grid;
      st.embed = std::make_unique<nn::Conv2d>(in, opts_.widths[s], opts_.patch[s], opts_.patch[s], 0, rng);
      st.embed_norm = std::make_unique<nn::LayerNorm>(opts_.widths[s]);
      const std::string prefix = "stage" + std::to_string(s + 1) + ".";
      register_module(prefix + "patch_embed", *st.embed);
      register_module(prefix + "embed_norm", *st.embed_norm);
      st.pos = register_parameter(prefix + "pos_embed", nn::normal_parameter({grid * grid, opts_.widths[s]}, 0.02f, rng));
      for (int b = 0; b < opts_.depths[s]; ++b) {
        st.blocks.push_back(std::make_unique<nn::TransformerBlock>(opts_.widths[s], opts_.heads[s],
                                                                   opts_.widths[s] * opts_.mlp_ratio[s], rng, opts_.reduction[s]));
        register_module(prefix + "blocks." + std::to_string(b), *st.blocks.back());
      }
      in = opts_.widths[s];
    }
    register_module("norm", norm_);
  }

  nn::Tensor forward(const nn::Tensor& images) override {
    check_input(images);
    nn::Tensor x = images;
    nn::Tensor tokens;
    for (std::size_t s = 0; s < stages_.size(); ++s) {
      Stage& st = stages_[s];
      tokens = nn::add_positional(st.embed_norm->forward(nn::to_tokens(st.embed->forward(x))), st.pos);
      for (auto& b : st.blocks) tokens = b->forward(tokens, {}, st.grid, st.grid);
      if (s + 1 < stages_.size()) x = nn::from_tokens(tokens, st.grid, st.grid);
    }
    return nn::mean_tokens(norm_.forward(tokens));
  }

  int feature_dim() const override { return opts_.widths[3]; }
  BackboneVariant variant() const override { return BackboneVariant::pvt; }
  int image_size() const override { return image_size_; }

 private:
  struct Stage {
    int grid = 0;
    std::unique_ptr<nn::Conv2d> embed;
    std::unique_ptr<nn::LayerNorm> embed_norm;
    nn::Tensor pos;
    std::vector<std::unique_ptr<nn::TransformerBlock>> blocks;
  };

  PvtOptions opts_;
  int image_size_;
  std::vector<Stage> stages_;
  nn::LayerNorm norm_;
};

}  // namespace pcaus::models
