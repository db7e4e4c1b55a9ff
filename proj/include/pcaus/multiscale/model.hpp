#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "pcaus/finetune/roi_finetune.hpp"
#include "pcaus/models/backbone.hpp"

namespace pcaus::multiscale {

struct MOConfig {
  double gamma = 0.5;
  int layers = 12;
  int hidden = 72;
  int heads = 8;
  int ffn = 288;
  int sequence_length = 55;  // ROI positions; one more position holds the class token

  int positions() const { return sequence_length + 1; }

  void validate() const {
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw std::invalid_argument("MO config: gamma must lie in [0, 1]");
    if (layers < 1 || hidden < 1 || heads < 1 || ffn < 1 || sequence_length < 1) {
      throw std::invalid_argument("MO config: sizes must be positive");
    }
    if (hidden % heads != 0) throw std::invalid_argument("MO config: hidden width not divisible by heads");
  }
};

// Backbone features of one core's ROIs in needle order. Projection to the
// transformer width happens inside the model.
struct CoreSequence {
  models::FeatureMatrix features;  // [L, feature_dim]
  std::vector<std::uint8_t> valid;  // L entries
  int label = 0;
  std::string core_id;

  int length() const { return static_cast<int>(features.rows()); }

  void validate() const {
    if (static_cast<Eigen::Index>(valid.size()) != features.rows()) {
      throw std::invalid_argument("core sequence " + core_id + ": mask length differs from feature rows");
    }
    bool any = false;
    for (std::uint8_t v : valid) any = any || v != 0;
    if (!any) throw std::invalid_argument("core sequence " + core_id + ": all positions are masked");
    if (!features.allFinite()) throw std::invalid_argument("core sequence " + core_id + ": non-finite features");
  }
};

struct MultiScaleOutput {
  Eigen::Vector2f core_logits;
  models::FeatureMatrix roi_logits;  // [L, 2]
};

// Row-wise affine projection of [L, F] features to [L, out].
inline models::FeatureMatrix project_features(const models::FeatureMatrix& features, const nn::Linear& projector) {
  if (features.cols() != projector.weight.dim(1)) {
    throw std::invalid_argument("project_features: feature width " + std::to_string(features.cols()) +
                                " does not match projector input " + std::to_string(projector.weight.dim(1)));
  }
  nn::NoGradGuard no_grad;
  std::vector<float> v(features.data(), features.data() + features.size());
  const nn::Tensor y = projector.forward(
      nn::Tensor::from_vector(std::move(v), {static_cast<int>(features.rows()), static_cast<int>(features.cols())}));
  return nn::ConstMatMap(y.data(), y.dim(0), y.dim(1));
}

// Encoder-only transformer over [class token, ROI tokens] with learned
// positions; the class-token output feeds a 2-logit classifier.
class CoreTransformer : public nn::Module {
 public:
  CoreTransformer(const MOConfig& cfg, nn::Rng& rng) : cfg_(cfg), norm_(cfg.hidden), classifier_(cfg.hidden, 2, rng) {
    cfg.validate();
    cls_ = register_parameter("cls_token", nn::normal_parameter({cfg.hidden}, 0.02f, rng));
    pos_ = register_parameter("pos_embed", nn::normal_parameter({cfg.positions(), cfg.hidden}, 0.02f, rng));
    for (int i = 0; i < cfg.layers; ++i) {
      blocks_.push_back(std::make_unique<nn::TransformerBlock>(cfg.hidden, cfg.heads, cfg.ffn, rng));
      register_module("layers." + std::to_string(i), *blocks_.back());
    }
    register_module("norm", norm_);
    register_module("classifier", classifier_);
  }

  // tokens: [B, L, hidden]; valid: B*L entries. Returns [B, 2].
  nn::Tensor forward(const nn::Tensor& tokens, std::span<const std::uint8_t> valid) const {
    nn::expect_rank(tokens, 3, "core transformer");
    const int batch = tokens.dim(0), length = tokens.dim(1);
    if (length != cfg_.sequence_length) {
      throw std::invalid_argument("core transformer expects " + std::to_string(cfg_.sequence_length) + " positions, got " +
                                  std::to_string(length));
    }
    std::vector<std::uint8_t> key_valid;
    key_valid.reserve(static_cast<std::size_t>(batch * (length + 1)));
    for (int b = 0; b < batch; ++b) {
      key_valid.push_back(1);
      for (int i = 0; i < length; ++i) key_valid.push_back(valid[static_cast<std::size_t>(b * length + i)]);
    }
    nn::Tensor x = nn::add_positional(nn::prepend_token(tokens, cls_), pos_);
    for (const auto& block : blocks_) x = block->forward(x, key_valid);
    return classifier_.forward(nn::select_token(norm_.forward(x), 0));
  }

 private:
  MOConfig cfg_;
  nn::Tensor cls_, pos_;
  std::vector<std::unique_ptr<nn::TransformerBlock>> blocks_;
  nn::LayerNorm norm_;
  nn::Linear classifier_;
};

struct BatchOutput {
  nn::Tensor core_logits;  // [B, 2]
  nn::Tensor roi_logits;   // [B * L, 2]
  std::vector<int> labels;
  std::vector<std::uint8_t> valid;
};

// Projector + core transformer + ROI head. The ROI head reads the unprojected
// backbone features, so its logits do not depend on the transformer.
class MultiScaleModel : public nn::Module {
 public:
  MultiScaleModel(int feature_dim, const MOConfig& cfg, nn::Rng& rng)
      : cfg_(cfg), projector_(feature_dim, cfg.hidden, rng), transformer_(cfg, rng), roi_head_(feature_dim, rng) {
    register_module("projector", projector_);
    register_module("transformer", transformer_);
    register_module("roi_head", roi_head_);
  }

  const MOConfig& config() const { return cfg_; }
  int feature_dim() const { return projector_.weight.dim(1); }
  nn::Linear& projector() { return projector_; }
  const nn::Linear& projector() const { return projector_; }
  CoreTransformer& transformer() { return transformer_; }
  finetune::RoiHead& roi_head() { return roi_head_; }
  const finetune::RoiHead& roi_head() const { return roi_head_; }

  BatchOutput forward(std::span<const CoreSequence* const> batch) const {
    if (batch.empty()) throw std::invalid_argument("multi-scale forward: empty batch");
    const int length = cfg_.sequence_length, width = feature_dim();
    BatchOutput out;
    std::vector<float> feats;
    feats.reserve(batch.size() * static_cast<std::size_t>(length * width));
    for (const CoreSequence* seq : batch) {
      seq->validate();
      if (seq->length() != length || seq->features.cols() != width) {
        throw std::invalid_argument("multi-scale forward: sequence " + seq->core_id + " has shape [" +
                                    std::to_string(seq->length()) + ", " + std::to_string(seq->features.cols()) +
                                    "], expected [" + std::to_string(length) + ", " + std::to_string(width) + "]");
      }
      feats.insert(feats.end(), seq->features.data(), seq->features.data() + seq->features.size());
      out.valid.insert(out.valid.end(), seq->valid.begin(), seq->valid.end());
      out.labels.push_back(seq->label);
    }
    const int b = static_cast<int>(batch.size());
    const nn::Tensor rows = nn::Tensor::from_vector(std::move(feats), {b * length, width});
    out.roi_logits = roi_head_.forward(rows);
    const nn::Tensor tokens = nn::reshape(projector_.forward(rows), {b, length, cfg_.hidden});
    out.core_logits = transformer_.forward(tokens, out.valid);
    return out;
  }

 private:
  MOConfig cfg_;
  nn::Linear projector_;
  CoreTransformer transformer_;
  finetune::RoiHead roi_head_;
};

inline MultiScaleOutput core_forward(const CoreSequence& seq, const MultiScaleModel& model) {
  nn::NoGradGuard no_grad;
  const CoreSequence* one[] = {&seq};
  const BatchOutput b = model.forward(one);
  MultiScaleOutput out;
  out.core_logits = Eigen::Vector2f(b.core_logits.data()[0], b.core_logits.data()[1]);
  out.roi_logits = nn::ConstMatMap(b.roi_logits.data(), b.roi_logits.dim(0), 2);
  return out;
}

// Cancer-class probability of each core from the class-token logits.
inline std::vector<double> predict_cores(const MultiScaleModel& model, std::span<const CoreSequence> cores,
                                         std::size_t chunk = 32) {
  nn::NoGradGuard no_grad;
  std::vector<double> out;
  out.reserve(cores.size());
  for (std::size_t start = 0; start < cores.size(); start += chunk) {
    std::vector<const CoreSequence*> batch;
    for (std::size_t i = start; i < std::min(cores.size(), start + chunk); ++i) batch.push_back(&cores[i]);
    const BatchOutput b = model.forward(batch);
    for (double p : positive_probabilities<float>(nn::ConstMatMap(b.core_logits.data(), b.core_logits.dim(0), 2))) {
      out.push_back(p);
    }
  }
  return out;
}

}  // namespace pcaus::multiscale
