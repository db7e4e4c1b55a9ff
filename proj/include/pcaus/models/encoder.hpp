#pragma once

#include <array>
#include <stdexcept>
#include <string>

#include "pcaus/nn/layers.hpp"

namespace pcaus::models {

enum class BackboneVariant { resnet18_slim, vit, cct, pvt };

inline std::string variant_name(BackboneVariant v) {
  switch (v) {
    case BackboneVariant::resnet18_slim: return "resnet18_slim";
    case BackboneVariant::vit: return "vit";
    case BackboneVariant::cct: return "cct";
    case BackboneVariant::pvt: return "pvt";
  }
  return "?";
}

inline BackboneVariant parse_variant(const std::string& name) {
  if (name == "resnet18_slim" || name == "resnet18") return BackboneVariant::resnet18_slim;
  if (name == "vit") return BackboneVariant::vit;
  if (name == "cct") return BackboneVariant::cct;
  if (name == "pvt") return BackboneVariant::pvt;
  throw std::invalid_argument("unknown backbone variant '" + name + "'");
}

// Display name used in report tables.
inline std::string display_name(BackboneVariant v) {
  switch (v) {
    case BackboneVariant::resnet18_slim: return "ResNet18";
    case BackboneVariant::vit: return "ViT";
    case BackboneVariant::cct: return "CCT";
    case BackboneVariant::pvt: return "PvT";
  }
  return "?";
}

struct ResNetOptions {
  std::array<int, 4> widths{16, 32, 64, 128};
  int blocks_per_stage = 2;
  int stem_kernel = 7;
  int stem_stride = 4;
  bool stem_pool = true;
  bool two_conv_blocks = false;  // standard ResNet block, kept for comparison
};

struct VitOptions {
  int patch = 32;
  int width = 256;
  int depth = 6;
  int heads = 8;
  int mlp_ratio = 4;
};

struct CctOptions {
  int tokenizer_channels = 64;
  int width = 256;
  int depth = 4;
  int heads = 4;
  int mlp_ratio = 2;
};

struct PvtOptions {
  std::array<int, 4> depths{1, 1, 2, 1};
  std::array<int, 4> widths{32, 64, 128, 256};
  std::array<int, 4> heads{1, 2, 4, 8};
  std::array<int, 4> patch{8, 2, 2, 2};
  std::array<int, 4> reduction{8, 4, 2, 1};
  std::array<int, 4> mlp_ratio{8, 8, 4, 4};
};

struct BackboneConfig {
  BackboneVariant variant = BackboneVariant::resnet18_slim;
  int image_size = 256;
  bool desk_scale = true;
  ResNetOptions resnet;
  VitOptions vit;
  CctOptions cct;
  PvtOptions pvt;

  int feature_dim() const {
    switch (variant) {
      case BackboneVariant::resnet18_slim: return resnet.widths[3];
      case BackboneVariant::vit: return vit.width;
      case BackboneVariant::cct: return cct.width;
      case BackboneVariant::pvt: return pvt.widths[3];
    }
    return 0;
  }

  void validate() const {
    auto positive = [](int v, const char* what) {
      if (v < 1) throw std::invalid_argument(std::string("backbone: ") + what + " must be positive");
    };
    if (feature_dim() < 8) throw std::invalid_argument("backbone: feature_dim must be at least 8");
    switch (variant) {
      case BackboneVariant::resnet18_slim:
        for (int w : resnet.widths) positive(w, "resnet width");
        positive(resnet.blocks_per_stage, "blocks per stage");
        positive(resnet.stem_stride, "stem stride");
        break;
      case BackboneVariant::vit:
        positive(vit.depth, "vit depth");
        positive(vit.patch, "vit patch");
        if (image_size % vit.patch != 0) {
          throw std::invalid_argument("backbone: vit patch size " + std::to_string(vit.patch) + " does not divide " +
                                      std::to_string(image_size));
        }
        if (vit.width % vit.heads != 0) throw std::invalid_argument("backbone: vit width not divisible by heads");
        break;
      case BackboneVariant::cct:
        positive(cct.depth, "cct depth");
        if (cct.width % cct.heads != 0) throw std::invalid_argument("backbone: cct width not divisible by heads");
        break;
      case BackboneVariant::pvt: {
        int grid = image_size;
        for (int s = 0; s < 4; ++s) {
          positive(pvt.depths[static_cast<std::size_t>(s)], "pvt depth");
          const int p = pvt.patch[static_cast<std::size_t>(s)];
          const int r = pvt.reduction[static_cast<std::size_t>(s)];
          if (grid % p != 0) throw std::invalid_argument("backbone: pvt patch size does not divide the stage grid");
          grid /= p;
          if (grid % r != 0) throw std::invalid_argument("backbone: pvt reduction does not divide the stage grid");
          if (pvt.widths[static_cast<std::size_t>(s)] % pvt.heads[static_cast<std::size_t>(s)] != 0) {
            throw std::invalid_argument("backbone: pvt width not divisible by heads");
          }
        }
        break;
      }
    }
  }

  // Desk-scale presets size every variant for CPU-only experiments; the
  // full-scale presets follow the standard model sizes.
  static BackboneConfig preset(BackboneVariant v, bool desk = true) {
    BackboneConfig c;
    c.variant = v;
    c.desk_scale = desk;
    if (!desk) {
      c.resnet = {{64, 128, 256, 512}, 2, 7, 2, true, false};
      c.vit = {16, 768, 12, 12, 4};
      c.cct = {64, 256, 7, 4, 2};
      c.pvt = {{2, 2, 2, 2}, {64, 128, 320, 512}, {1, 2, 5, 8}, {4, 2, 2, 2}, {8, 4, 2, 1}, {8, 8, 4, 4}};
    }
    return c;
  }
};

// Maps [N, 1, S, S] images to [N, feature_dim] features.
class Encoder : public nn::Module {
 public:
  virtual nn::Tensor forward(const nn::Tensor& images) = 0;
  virtual int feature_dim() const = 0;
  virtual BackboneVariant variant() const = 0;
  virtual int image_size() const = 0;

  void check_input(const nn::Tensor& images) const {
    const int s = image_size();
    if (images.rank() != 4 || images.dim(1) != 1 || images.dim(2) != s || images.dim(3) != s) {
      throw std::invalid_argument("encoder expects [N, 1, " + std::to_string(s) + ", " + std::to_string(s) + "] input, got " +
                                  nn::shape_string(images.shape()));
    }
  }
};

}  // namespace pcaus::models
