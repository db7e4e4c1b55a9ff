#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>

#include "pcaus/models/resnet.hpp"
#include "pcaus/models/transformers.hpp"

namespace pcaus::models {

enum class Mode { train, eval };

using EncoderFactory = std::function<std::unique_ptr<Encoder>(const BackboneConfig&, nn::Rng&)>;

// Name -> constructor registry used by the CLI.
inline const std::map<std::string, EncoderFactory>& encoder_registry() {
  static const std::map<std::string, EncoderFactory> registry = {
      {"resnet18_slim", [](const BackboneConfig& c, nn::Rng& r) { return std::make_unique<ResNetSlim>(c, r); }},
      {"vit", [](const BackboneConfig& c, nn::Rng& r) { return std::make_unique<VisionTransformer>(c, r); }},
      {"cct", [](const BackboneConfig& c, nn::Rng& r) { return std::make_unique<CompactConvTransformer>(c, r); }},
      {"pvt", [](const BackboneConfig& c, nn::Rng& r) { return std::make_unique<PyramidVisionTransformer>(c, r); }},
  };
  return registry;
}

inline std::unique_ptr<Encoder> build_backbone(const BackboneConfig& config, std::uint64_t seed) {
  config.validate();
  const auto& registry = encoder_registry();
  const auto it = registry.find(variant_name(config.variant));
  if (it == registry.end()) throw std::invalid_argument("unknown backbone variant");
  nn::Rng rng(seed);
  return it->second(config, rng);
}

using FeatureMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Runs the encoder without recording a graph. Eval mode uses running
// normalization statistics, so each row depends only on its own input.
inline FeatureMatrix encode(Encoder& encoder, const nn::Tensor& batch, Mode mode) {
  const bool was_training = encoder.is_training();
  if (mode == Mode::eval) {
    encoder.eval();
  } else {
    encoder.train();
  }
  nn::NoGradGuard no_grad;
  const nn::Tensor out = encoder.forward(batch);
  if (was_training) {
    encoder.train();
  } else {
    encoder.eval();
  }
  return nn::ConstMatMap(out.data(), out.dim(0), out.dim(1));
}

}  // namespace pcaus::models
