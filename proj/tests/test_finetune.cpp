#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "pcaus/data/preprocess.hpp"
#include "pcaus/data/roi_bank.hpp"
#include "pcaus/data/synth.hpp"
#include "pcaus/finetune/roi_finetune.hpp"
#include "pcaus/ssl/pretrain.hpp"

using namespace pcaus;

namespace {

models::BackboneConfig tiny_resnet() {
  models::BackboneConfig c;
  c.image_size = 32;
  c.resnet.widths = {8, 8, 16, 16};
  c.resnet.blocks_per_stage = 1;
  c.resnet.stem_stride = 2;
  return c;
}

// Texture patches: class 1 uses the rough, coarse-grained cancer texture.
struct TexturePatches {
  std::vector<data::Image> images;
  std::vector<int> labels;
  std::size_t size() const { return images.size(); }
  const data::Image& patch(std::size_t i) const { return images.at(i); }
};

TexturePatches texture_patches(int n, std::uint64_t seed) {
  const data::SynthConfig ref;
  std::mt19937_64 rng(seed);
  TexturePatches out;
  for (int i = 0; i < n; ++i) {
    const int label = i % 2;
    const data::ImageD field = data::detail::texture_field(32, 32, label ? ref.cancer_texture : ref.benign_texture, rng);
    out.images.push_back(data::normalize_rescale(field).cast<float>());
    out.labels.push_back(label);
  }
  return out;
}

nn::Tensor stack(const TexturePatches& p, std::size_t from, std::size_t n) {
  return data::stack_images({p.images.begin() + static_cast<std::ptrdiff_t>(from),
                             p.images.begin() + static_cast<std::ptrdiff_t>(from + n)});
}

double validation_ce(models::Encoder& enc, const finetune::RoiHead& head, const TexturePatches& val) {
  const auto probs = finetune::predict_roi(enc, head, stack(val, 0, val.size()));
  double ce = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = std::clamp(val.labels[i] ? probs[i] : 1.0 - probs[i], 1e-12, 1.0);
    ce -= std::log(p);
  }
  return ce / static_cast<double>(probs.size());
}

// Full fine-tuning steps until validation cross-entropy drops below `threshold`.
int steps_to_threshold(models::Encoder& enc, const TexturePatches& train, const TexturePatches& val, double threshold,
                       std::uint64_t seed) {
  nn::Rng rng(seed);
  finetune::RoiHead head(enc.feature_dim(), rng, 32);
  std::vector<nn::Tensor> params = enc.parameters();
  for (const auto& t : head.parameters()) params.push_back(t);
  nn::AdamW opt(params, {1e-3f, 0.9f, 0.999f, 1e-8f, 1e-4f});
  std::mt19937_64 order_rng(seed);
  std::vector<std::size_t> rows(train.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  constexpr int kMaxSteps = 300;
  for (int step = 0; step < kMaxSteps; step += 10) {
    if (validation_ce(enc, head, val) < threshold) return step;
    for (int s = 0; s < 10; ++s) {
      std::shuffle(rows.begin(), rows.end(), order_rng);
      std::vector<data::Image> images;
      std::vector<int> y;
      for (std::size_t i = 0; i < 32; ++i) {
        images.push_back(train.images[rows[i]]);
        y.push_back(train.labels[rows[i]]);
      }
      finetune::finetune_step(enc, head, data::stack_images(images), y, opt, step + s);
    }
  }
  return kMaxSteps;
}

}  // namespace

TEST(Aggregate, MeanOfRoiProbabilities) {
  EXPECT_NEAR(finetune::aggregate_core(std::vector<double>{0.2, 0.4, 0.9}), 0.5, 1e-12);
  EXPECT_NEAR(finetune::aggregate_core(std::vector<double>(55, 0.7)), 0.7, 1e-12);
  EXPECT_THROW(finetune::aggregate_core(std::vector<double>{}), std::invalid_argument);
}

TEST(Aggregate, BoundedAndPermutationInvariant) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> p(55);
    for (double& x : p) x = u(rng);
    const double m = finetune::aggregate_core(p);
    EXPECT_GE(m, *std::min_element(p.begin(), p.end()));
    EXPECT_LE(m, *std::max_element(p.begin(), p.end()));
    std::shuffle(p.begin(), p.end(), rng);
    EXPECT_NEAR(finetune::aggregate_core(p), m, 1e-12);
  }
}

TEST(Finetune, ModeNames) {
  EXPECT_EQ(finetune::parse_mode("linear"), finetune::FinetuneMode::linear_probe);
  EXPECT_EQ(finetune::parse_mode("full"), finetune::FinetuneMode::full);
  EXPECT_THROW(finetune::parse_mode("frozen"), std::invalid_argument);
  EXPECT_EQ(finetune::mode_label(finetune::FinetuneMode::linear_probe), "Linear");
}

TEST(Finetune, OverfitsEightPatches) {
  const TexturePatches p = texture_patches(8, 2);
  auto enc = models::build_backbone(tiny_resnet(), 3);
  nn::Rng rng(4);
  finetune::RoiHead head(enc->feature_dim(), rng);
  std::vector<nn::Tensor> params = enc->parameters();
  for (const auto& t : head.parameters()) params.push_back(t);
  nn::AdamW opt(params, {3e-3f, 0.9f, 0.999f, 1e-8f, 0.0f});
  const nn::Tensor batch = stack(p, 0, 8);
  LossBreakdown last;
  for (int step = 0; step < 200; ++step) last = finetune::finetune_step(*enc, head, batch, p.labels, opt, step);
  EXPECT_LT(last.total, 0.01);
}

TEST(Finetune, PredictRoiShapesAndRange) {
  const TexturePatches p = texture_patches(6, 5);
  auto enc = models::build_backbone(tiny_resnet(), 6);
  nn::Rng rng(7);
  finetune::RoiHead head(enc->feature_dim(), rng);
  const auto probs = finetune::predict_roi(*enc, head, stack(p, 0, 6));
  ASSERT_EQ(probs.size(), 6u);
  for (double x : probs) {
    EXPECT_GE(x, 0.0);
    EXPECT_LE(x, 1.0);
  }
  finetune::RoiHead narrow(enc->feature_dim() + 1, rng);
  EXPECT_THROW(finetune::predict_roi(*enc, narrow, stack(p, 0, 6)), std::invalid_argument);
}

TEST(Finetune, HeadLossFallsOnSeparableFeatures) {
  std::vector<double> drops;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> n;
    models::FeatureMatrix f(200, 16);
    std::vector<int> y(200);
    for (int i = 0; i < 200; ++i) {
      y[static_cast<std::size_t>(i)] = i % 2;
      for (int j = 0; j < 16; ++j) f(i, j) = n(rng) + (j < 4 ? (i % 2 ? 1.5f : -1.5f) : 0.0f);
    }
    nn::Rng init(seed);
    finetune::RoiHead head(16, init, 32);
    finetune::FinetuneSchedule sched;
    sched.steps = 200 / 20;  // one epoch
    sched.batch_size = 20;
    sched.lr = 1e-2f;
    sched.seed = seed;
    const auto history = finetune::train_head(head, f, y, sched);
    drops.push_back(history.front().total - history.back().total);
  }
  std::sort(drops.begin(), drops.end());
  EXPECT_GT(drops[2], 0.0);
}

TEST(Finetune, TrainHeadRejectsMismatchedLabels) {
  nn::Rng rng(0);
  finetune::RoiHead head(4, rng);
  const models::FeatureMatrix f = models::FeatureMatrix::Zero(3, 4);
  EXPECT_THROW(finetune::train_head(head, f, std::vector<int>{0, 1}, {}), std::invalid_argument);
}

TEST(Finetune, SelfSupervisedInitLearnsFaster) {
  std::vector<int> ssl_steps, random_steps;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const TexturePatches unlabeled = texture_patches(256, 100 + seed);
    const TexturePatches train = texture_patches(512, 200 + seed);
    const TexturePatches val = texture_patches(128, 300 + seed);

    auto random_enc = models::build_backbone(tiny_resnet(), seed);
    auto ssl_enc = models::build_backbone(tiny_resnet(), seed);
    nn::Rng rng(seed);
    ssl::Projector proj(ssl_enc->feature_dim(), {64, 64}, rng);
    ssl::PretrainSchedule sched;
    sched.steps = 150;
    sched.batch_size = 32;
    sched.lr = 3e-3f;
    sched.seed = seed;
    ssl::pretrain(*ssl_enc, proj, unlabeled, {}, {}, sched);

    ssl_steps.push_back(steps_to_threshold(*ssl_enc, train, val, 0.1, seed));
    random_steps.push_back(steps_to_threshold(*random_enc, train, val, 0.1, seed));
  }
  std::sort(ssl_steps.begin(), ssl_steps.end());
  std::sort(random_steps.begin(), random_steps.end());
  EXPECT_LT(ssl_steps[2], random_steps[2]);
}
