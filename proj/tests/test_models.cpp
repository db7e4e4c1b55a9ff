#include <gtest/gtest.h>

#include <random>

#include "pcaus/models/backbone.hpp"
#include "test_support.hpp"

using namespace pcaus;
using models::BackboneConfig;
using models::BackboneVariant;

namespace {

constexpr BackboneVariant kVariants[] = {BackboneVariant::resnet18_slim, BackboneVariant::vit, BackboneVariant::cct,
                                         BackboneVariant::pvt};

// Reduced widths at 64 px so property sweeps stay fast.
BackboneConfig small(BackboneVariant v) {
  BackboneConfig c = BackboneConfig::preset(v);
  c.image_size = 64;
  c.resnet.widths = {8, 8, 16, 16};
  c.resnet.stem_stride = 2;
  c.vit = {16, 32, 2, 4, 2};
  c.cct = {8, 32, 2, 4, 2};
  c.pvt.widths = {8, 16, 16, 32};
  c.pvt.heads = {1, 2, 2, 4};
  c.pvt.patch = {4, 2, 2, 2};
  c.pvt.reduction = {2, 2, 1, 1};
  return c;
}

nn::Tensor images(int n, int size, std::mt19937_64& rng, bool requires_grad = false) {
  return pcaus::testing::random_tensor({n, 1, size, size}, rng, 0.0f, 1.0f, requires_grad);
}

std::vector<float> values(const nn::Tensor& t) { return {t.data(), t.data() + t.numel()}; }

nn::Tensor rows_of(const nn::Tensor& batch, std::initializer_list<int> rows) {
  const auto per = batch.numel() / batch.dim(0);
  std::vector<float> v;
  for (int r : rows) v.insert(v.end(), batch.data() + r * per, batch.data() + (r + 1) * per);
  return nn::Tensor::from_vector(std::move(v), {static_cast<int>(rows.size()), 1, batch.dim(2), batch.dim(3)});
}

}  // namespace

TEST(Backbone, DeskPresetsProduceFeatureRows) {
  std::mt19937_64 rng(1);
  const nn::Tensor x = images(4, 256, rng);
  for (BackboneVariant v : kVariants) {
    const BackboneConfig cfg = BackboneConfig::preset(v);
    auto enc = models::build_backbone(cfg, 0);
    const auto f = models::encode(*enc, x, models::Mode::eval);
    EXPECT_EQ(f.rows(), 4) << models::variant_name(v);
    EXPECT_EQ(f.cols(), cfg.feature_dim()) << models::variant_name(v);
    EXPECT_TRUE(f.allFinite()) << models::variant_name(v);
  }
}

TEST(Backbone, EvalModeIsBatchIndependent) {
  std::mt19937_64 rng(2);
  const nn::Tensor x = images(3, 64, rng);
  for (BackboneVariant v : kVariants) {
    auto enc = models::build_backbone(small(v), 1);
    // A few training-mode passes so running statistics move off their initial values.
    for (int i = 0; i < 3; ++i) models::encode(*enc, images(4, 64, rng), models::Mode::train);
    const auto ab = models::encode(*enc, rows_of(x, {0, 1}), models::Mode::eval);
    const auto ac = models::encode(*enc, rows_of(x, {0, 2}), models::Mode::eval);
    EXPECT_LT((ab.row(0) - ac.row(0)).cwiseAbs().maxCoeff(), 1e-6f) << models::variant_name(v);
    const auto aa = models::encode(*enc, rows_of(x, {0, 0}), models::Mode::eval);
    EXPECT_LT((aa.row(0) - aa.row(1)).cwiseAbs().maxCoeff(), 1e-6f) << models::variant_name(v);
    EXPECT_TRUE(enc->is_training());
  }
}

TEST(Backbone, FiniteOverRandomBatches) {
  std::mt19937_64 rng(3);
  for (BackboneVariant v : kVariants) {
    auto enc = models::build_backbone(small(v), 2);
    for (int b = 0; b < 100; ++b) {
      const auto mode = b % 2 ? models::Mode::train : models::Mode::eval;
      ASSERT_TRUE(models::encode(*enc, images(2, 64, rng), mode).allFinite()) << models::variant_name(v) << " batch " << b;
    }
  }
}

TEST(Backbone, GradientReachesInput) {
  std::mt19937_64 rng(4);
  for (BackboneVariant v : kVariants) {
    auto enc = models::build_backbone(small(v), 3);
    enc->train();
    nn::Tensor x = images(2, 64, rng, true);
    nn::mean_all(enc->forward(x)).backward();
    ASSERT_TRUE(x.has_grad());
    double norm = 0;
    for (std::int64_t i = 0; i < x.numel(); ++i) norm += std::abs(x.grad_values()[i]);
    EXPECT_GT(norm, 0.0) << models::variant_name(v);
    for (const auto& [name, p] : enc->named_parameters()) {
      EXPECT_TRUE(p.has_grad()) << models::variant_name(v) << " " << name;
    }
  }
}

TEST(Backbone, SlimBlocksHaveFewerParameters) {
  for (bool desk : {true, false}) {
    BackboneConfig slim = BackboneConfig::preset(BackboneVariant::resnet18_slim, desk);
    BackboneConfig full = slim;
    full.resnet.two_conv_blocks = true;
    const auto a = models::build_backbone(slim, 0)->parameter_count();
    const auto b = models::build_backbone(full, 0)->parameter_count();
    EXPECT_LT(a, b);
  }
}

TEST(Backbone, FullScaleResNetHas512Features) {
  EXPECT_EQ(BackboneConfig::preset(BackboneVariant::resnet18_slim, false).feature_dim(), 512);
  EXPECT_EQ(BackboneConfig::preset(BackboneVariant::vit).feature_dim(), 256);
}

TEST(Backbone, SeededInitialization) {
  for (BackboneVariant v : kVariants) {
    auto a = models::build_backbone(small(v), 7), b = models::build_backbone(small(v), 7), c = models::build_backbone(small(v), 8);
    const auto pa = a->named_parameters(), pb = b->named_parameters(), pc = c->named_parameters();
    ASSERT_EQ(pa.size(), pb.size());
    bool any_diff = false;
    for (std::size_t i = 0; i < pa.size(); ++i) {
      EXPECT_EQ(values(pa[i].second), values(pb[i].second)) << pa[i].first;
      any_diff |= values(pa[i].second) != values(pc[i].second);
    }
    EXPECT_TRUE(any_diff) << models::variant_name(v);
  }
}

TEST(Backbone, ValidationErrors) {
  BackboneConfig vit = BackboneConfig::preset(BackboneVariant::vit);
  vit.vit.patch = 30;
  EXPECT_THROW(models::build_backbone(vit, 0), std::invalid_argument);
  BackboneConfig thin = BackboneConfig::preset(BackboneVariant::cct);
  thin.cct.width = 4;
  thin.cct.heads = 1;
  EXPECT_THROW(thin.validate(), std::invalid_argument);
  EXPECT_THROW(models::parse_variant("alexnet"), std::invalid_argument);

  auto enc = models::build_backbone(small(BackboneVariant::resnet18_slim), 0);
  std::mt19937_64 rng(5);
  EXPECT_THROW(enc->forward(images(1, 32, rng)), std::invalid_argument);
}

TEST(Backbone, RegistryCoversEveryVariant) {
  for (BackboneVariant v : kVariants) {
    EXPECT_EQ(models::encoder_registry().count(models::variant_name(v)), 1u);
    EXPECT_EQ(models::parse_variant(models::variant_name(v)), v);
    EXPECT_EQ(models::build_backbone(small(v), 0)->variant(), v);
  }
  EXPECT_EQ(models::display_name(BackboneVariant::pvt), "PvT");
}
