#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "pcaus/data/dataset_io.hpp"
#include "pcaus/data/needle.hpp"
#include "pcaus/data/preprocess.hpp"
#include "pcaus/data/roi.hpp"
#include "pcaus/data/roi_bank.hpp"
#include "pcaus/data/synth.hpp"
#include "test_support.hpp"

using namespace pcaus::data;

namespace {

RFFrame flat_frame(int rows, int cols, double axial, double lateral, Point origin) {
  RFFrame f;
  f.samples = Image::Zero(rows, cols);
  f.axial_spacing = axial;
  f.lateral_spacing = lateral;
  f.probe_origin = origin;
  return f;
}

SynthConfig small_cohort(std::uint64_t seed) {
  SynthConfig c;
  c.n_patients = 4;
  c.cores_per_patient = 2;
  c.cancer_core_rate = 0.5;
  c.seed = seed;
  return c;
}

// Core whose mask and frame are hand-built: needle straight down the middle.
BiopsyCore straight_core(int mask_top) {
  BiopsyCore core;
  core.core_id = "C";
  core.patient_id = "P";
  core.frame = flat_frame(400, 256, 0.05, 0.1, {0.0, 127.5});
  std::mt19937_64 rng(3);
  std::normal_distribution<float> n;
  for (Eigen::Index i = 0; i < core.frame.samples.size(); ++i) core.frame.samples.data()[i] = n(rng);
  core.needle = {0.0, 18.0, 1.5};
  core.mask.mask = MaskGrid::Zero(400, 256);
  core.mask.mask.block(mask_top, 0, 400 - mask_top, 256).setOnes();
  return core;
}

}  // namespace

TEST(Needle, ZeroAngleIsAxisAligned) {
  const RFFrame f = flat_frame(200, 200, 0.1, 0.5, {0.0, 100.0});
  const Rectangle r = needle_rectangle(f, {0.0, 10.0, 2.0});
  EXPECT_NEAR(r.t_start, 0.0, 1e-9);
  EXPECT_NEAR(r.t_end, 100.0, 1e-9);
  EXPECT_NEAR(r.width, 4.0, 1e-9);
  double min_col = 1e9, max_col = -1e9, max_row = -1e9;
  for (const Point& p : r.corners) {
    min_col = std::min(min_col, p.col);
    max_col = std::max(max_col, p.col);
    max_row = std::max(max_row, p.row);
  }
  EXPECT_NEAR(min_col, 98.0, 1e-9);
  EXPECT_NEAR(max_col, 102.0, 1e-9);
  EXPECT_NEAR(max_row, 100.0, 1e-9);
}

TEST(Needle, FortyFiveDegreesRotatesCorners) {
  const RFFrame f = flat_frame(400, 400, 0.1, 0.5, {0.0, 100.0});
  const Rectangle r = needle_rectangle(f, {45.0, 10.0, 2.0});
  EXPECT_NEAR(r.length(), 100.0, 1e-9);
  const double c = std::cos(std::numbers::pi / 4);
  EXPECT_NEAR(r.at(100.0).row, 100.0 * c, 1e-9);
  EXPECT_NEAR(r.at(100.0).col, 100.0 + 100.0 * c, 1e-9);
  const double dr = r.corners[2].row - r.corners[1].row, dc = r.corners[2].col - r.corners[1].col;
  EXPECT_NEAR(std::hypot(dr, dc), 100.0, 1e-9);
}

TEST(Needle, RejectsDegenerateGeometry) {
  const RFFrame f = flat_frame(100, 100, 0.1, 0.5, {0.0, 50.0});
  EXPECT_THROW(needle_rectangle(f, {0.0, 0.0, 2.0}), std::invalid_argument);
  const RFFrame off = flat_frame(100, 100, 0.1, 0.5, {0.0, 500.0});
  EXPECT_THROW(needle_rectangle(off, {0.0, 5.0, 2.0}), std::invalid_argument);
}

TEST(Resize, TwoByTwoToFourByFour) {
  ImageD w(2, 2);
  w << 0, 1, 2, 3;
  const ImageD out = resize_bilinear(w, 4);
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) EXPECT_NEAR(out(i, j), 2.0 * i / 3.0 + j / 3.0, 1e-6);
  }
}

TEST(Resize, IdentityConstantsAndCorners) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u;
  ImageD x(256, 256);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = u(rng);
  EXPECT_LT((resize_bilinear(x, 256) - x).cwiseAbs().maxCoeff(), 1e-12);

  const ImageD c = resize_bilinear(ImageD::Constant(5, 9, 0.3), 17);
  EXPECT_LT((c.array() - 0.3).abs().maxCoeff(), 1e-12);

  ImageD small(3, 5);
  for (Eigen::Index i = 0; i < small.size(); ++i) small.data()[i] = u(rng);
  const ImageD big = resize_bilinear(small, 11);
  EXPECT_DOUBLE_EQ(big(0, 0), small(0, 0));
  EXPECT_DOUBLE_EQ(big(0, 10), small(0, 4));
  EXPECT_DOUBLE_EQ(big(10, 0), small(2, 0));
  EXPECT_DOUBLE_EQ(big(10, 10), small(2, 4));
}

TEST(Resize, PreservesMonotoneRows) {
  ImageD x(4, 6);
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 6; ++j) x(i, j) = i * 1.5 + j * j;
  }
  const ImageD y = resize_bilinear(x, 32);
  for (int i = 0; i < 32; ++i) {
    for (int j = 1; j < 32; ++j) EXPECT_GE(y(i, j), y(i, j - 1));
  }
  for (int j = 0; j < 32; ++j) {
    for (int i = 1; i < 32; ++i) EXPECT_GE(y(i, j), y(i - 1, j));
  }
}

TEST(Resize, RejectsTinyWindow) { EXPECT_THROW(resize_bilinear(ImageD::Zero(1, 4), 8), std::invalid_argument); }

TEST(Normalize, HandCase) {
  ImageD x(2, 2);
  x << 1, 2, 3, 4;
  const ImageD s = standardize(x);
  EXPECT_NEAR(s(0, 0), -1.3416408, 1e-6);
  EXPECT_NEAR(s(0, 1), -0.4472136, 1e-6);
  EXPECT_NEAR(s(1, 0), 0.4472136, 1e-6);
  EXPECT_NEAR(s(1, 1), 1.3416408, 1e-6);
  const ImageD r = normalize_rescale(x);
  EXPECT_NEAR(r(0, 0), 0.0, 1e-6);
  EXPECT_NEAR(r(0, 1), 1.0 / 3.0, 1e-6);
  EXPECT_NEAR(r(1, 0), 2.0 / 3.0, 1e-6);
  EXPECT_NEAR(r(1, 1), 1.0, 1e-6);
}

TEST(Normalize, ConstantWindowMapsToZeros) {
  EXPECT_EQ(normalize_rescale(ImageD::Constant(8, 8, 4.2)).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Normalize, StandardizedMomentsAndRange) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(3.0, 7.0);
  for (int trial = 0; trial < 20; ++trial) {
    ImageD x(32, 32);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = n(rng);
    const ImageD s = standardize(x);
    EXPECT_LT(std::abs(s.mean()), 1e-6);
    EXPECT_NEAR(std::sqrt((s.array() - s.mean()).square().mean()), 1.0, 1e-6);
    const ImageD r = rescale_unit(s);
    EXPECT_GE(r.minCoeff(), 0.0);
    EXPECT_LE(r.maxCoeff(), 1.0);
  }
}

TEST(Normalize, RejectsNonFinite) {
  ImageD x = ImageD::Zero(2, 2);
  x(0, 0) = std::nan("");
  EXPECT_THROW(normalize_rescale(x), std::invalid_argument);
}

TEST(Extraction, FullMaskGivesEvenSpacing) {
  const BiopsyCore core = straight_core(0);
  const auto windows = extract_roi_grid(core);
  ASSERT_EQ(windows.size(), 55u);
  const double step = windows[1].t - windows[0].t;
  for (std::size_t i = 1; i < windows.size(); ++i) EXPECT_NEAR(windows[i].t - windows[i - 1].t, step, 1e-9);
  for (const RoiWindow& w : windows) {
    EXPECT_TRUE(core.mask.contains(round_index(w.center.row), round_index(w.center.col)));
  }
}

TEST(Extraction, DistalHalfMaskHalvesSpacing) {
  const auto full = extract_roi_grid(straight_core(0));
  const auto half = extract_roi_grid(straight_core(180));
  const double full_step = full[1].t - full[0].t;
  const double half_step = half[1].t - half[0].t;
  EXPECT_GE(half.front().t, 180.0 - 0.5);
  EXPECT_NEAR(half_step / full_step, 0.5, 0.01);
}

TEST(Extraction, DisjointMaskThrows) {
  BiopsyCore core = straight_core(0);
  core.mask.mask.setZero();
  core.mask.mask.block(0, 0, 400, 10).setOnes();
  EXPECT_THROW(extract_roi_grid(core), std::invalid_argument);
}

TEST(Extraction, PatchesCarryWeakLabelAndUnitRange) {
  const auto cores = synth_generate(small_cohort(5));
  for (const BiopsyCore& core : cores) {
    const auto patches = extract_patches(core);
    ASSERT_EQ(patches.size(), 55u);
    for (const ROIPatch& p : patches) {
      EXPECT_EQ(p.weak_label, core.label);
      EXPECT_EQ(p.pixels.rows(), 256);
      EXPECT_GE(p.pixels.minCoeff(), 0.0f);
      EXPECT_LE(p.pixels.maxCoeff(), 1.0f);
    }
  }
}

TEST(Synth, DeterministicPerSeed) {
  const auto a = synth_generate(small_cohort(9));
  const auto b = synth_generate(small_cohort(9));
  const auto c = synth_generate(small_cohort(10));
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].label, b[i].label);
    EXPECT_TRUE(a[i].frame.samples == b[i].frame.samples);
  }
  EXPECT_FALSE(a[0].frame.samples == c[0].frame.samples);
}

TEST(Synth, CancerRateAndCenterBalance) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    SynthConfig c;
    c.n_patients = 100;
    c.cores_per_patient = 1;
    c.axial_samples = 200;
    c.lateral_lines = 128;
    c.needle_depth_min = 7.0;
    c.needle_depth_max = 9.0;
    c.seed = seed;
    const auto cores = synth_generate(c);
    int cancer = 0;
    std::vector<int> per_center(5, 0);
    for (const auto& core : cores) {
      cancer += core.label;
      ++per_center[static_cast<std::size_t>(core.center_id)];
      core.validate();
    }
    EXPECT_NEAR(cancer / 100.0, 0.133, 0.03);
    EXPECT_LE(*std::max_element(per_center.begin(), per_center.end()) - *std::min_element(per_center.begin(), per_center.end()), 1);
  }
}

TEST(Synth, InvolvementMatchesTruthFraction) {
  SynthConfig c = small_cohort(4);
  c.n_patients = 6;
  c.cancer_core_rate = 1.0;
  c.involvement_min = c.involvement_max = 0.4;
  for (const auto& core : synth_generate(c)) {
    const RoiBank bank({core});
    int truth = 0;
    for (int r = 0; r < 55; ++r) truth += bank.truth(0, r).value();
    EXPECT_GE(truth / 55.0, 0.3);
    EXPECT_LE(truth / 55.0, 0.5);
  }
}

TEST(Synth, CancerTextureDiffersMeasurably) {
  SynthConfig c = small_cohort(6);
  c.cancer_core_rate = 1.0;
  c.involvement_min = c.involvement_max = 0.5;
  double var_cancer = 0, var_benign = 0;
  int n_cancer = 0, n_benign = 0;
  for (const auto& core : synth_generate(c)) {
    for (const RoiWindow& w : extract_roi_grid(core)) {
      const double v = (w.samples.array() - w.samples.mean()).square().mean();
      if (core.cancer_segment->contains(w.t)) {
        var_cancer += v;
        ++n_cancer;
      } else {
        var_benign += v;
        ++n_benign;
      }
    }
  }
  ASSERT_GT(n_cancer, 0);
  ASSERT_GT(n_benign, 0);
  EXPECT_GT(var_cancer / n_cancer, 1.2 * var_benign / n_benign);
}

TEST(Synth, RejectsInvalidConfig) {
  SynthConfig c;
  c.cancer_core_rate = 1.5;
  EXPECT_THROW(synth_generate(c), std::invalid_argument);
  c = SynthConfig{};
  c.involvement_min = 0.0;
  EXPECT_THROW(synth_generate(c), std::invalid_argument);
}

TEST(RoiBank, MatchesEagerExtraction) {
  const auto cores = synth_generate(small_cohort(7));
  const RoiBank bank(cores);
  ASSERT_EQ(bank.size(), cores.size() * 55);
  const auto eager = extract_patches(cores[1]);
  for (int r : {0, 17, 54}) {
    EXPECT_TRUE(bank.patch(1, r) == eager[static_cast<std::size_t>(r)].pixels);
    EXPECT_TRUE(bank.patch(55 + static_cast<std::size_t>(r)) == eager[static_cast<std::size_t>(r)].pixels);
  }
  EXPECT_EQ(bank.label_of(55), cores[1].label);
}

TEST(DatasetIo, RoundTripPreservesCores) {
  pcaus::testing::TempDir dir("dataset");
  const auto cores = synth_generate(small_cohort(8));
  const auto files = write_dataset(dir.path(), cores, {}, true);
  EXPECT_EQ(std::count(files.begin(), files.end(), "manifest.json"), 1);
  for (const auto& f : files) EXPECT_TRUE(std::filesystem::exists(dir.path() / f)) << f;
  const LoadedDataset loaded = load_dataset(dir.path() / "manifest.json");
  ASSERT_EQ(loaded.cores.size(), cores.size());
  for (std::size_t i = 0; i < cores.size(); ++i) {
    EXPECT_EQ(loaded.cores[i].core_id, cores[i].core_id);
    EXPECT_EQ(loaded.cores[i].label, cores[i].label);
    EXPECT_TRUE(loaded.cores[i].frame.samples == cores[i].frame.samples);
    EXPECT_TRUE(loaded.cores[i].mask.mask == cores[i].mask.mask);
  }
  const auto roi = load_image(dir.path() / "cores" / cores[0].core_id / "roi_03.pct");
  EXPECT_TRUE(roi == extract_patches(cores[0])[3].pixels);
}
