#include <gtest/gtest.h>

#include <fstream>
#include <random>

#include "pcaus/eval/metrics.hpp"
#include "pcaus/eval/report.hpp"
#include "test_support.hpp"

using namespace pcaus;
using eval::FoldMetrics;

namespace {

// Pairwise definition: P(score+ > score-) + 0.5 P(score+ == score-).
double brute_auroc(const std::vector<double>& s, const std::vector<int>& y) {
  double wins = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!y[i]) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j]) continue;
      pairs += 1;
      wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
    }
  }
  return wins / pairs;
}

eval::ReportRow row(eval::Scale scale, std::string backbone, std::vector<double> aurocs) {
  eval::ReportRow r{scale, {std::move(backbone), "Linear", {}}};
  for (std::size_t f = 0; f < aurocs.size(); ++f) r.metrics.per_fold.push_back({static_cast<int>(f), aurocs[f], 70, 60, 80, 0.5});
  return r;
}

}  // namespace

TEST(Auroc, HandCase) {
  const std::vector<double> s{0.1, 0.4, 0.35, 0.8};
  const std::vector<int> y{0, 0, 1, 1};
  EXPECT_DOUBLE_EQ(eval::auroc(s, y), 0.75);
}

TEST(Auroc, TiesPerfectAndReversed) {
  const std::vector<int> y{0, 1, 0, 1, 1};
  EXPECT_DOUBLE_EQ(eval::auroc(std::vector<double>(5, 0.3), y), 0.5);
  EXPECT_DOUBLE_EQ(eval::auroc(std::vector<double>{0.1, 0.9, 0.2, 0.8, 0.7}, y), 1.0);
  EXPECT_DOUBLE_EQ(eval::auroc(std::vector<double>{0.9, 0.1, 0.8, 0.2, 0.3}, y), 0.0);
}

TEST(Auroc, MatchesPairwiseDefinition) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 2 + static_cast<int>(rng() % 49);
    std::vector<double> s(static_cast<std::size_t>(n));
    std::vector<int> y(static_cast<std::size_t>(n));
    // Coarse grid so ties are frequent.
    for (int i = 0; i < n; ++i) {
      s[static_cast<std::size_t>(i)] = static_cast<double>(rng() % 7) / 6.0;
      y[static_cast<std::size_t>(i)] = static_cast<int>(rng() % 2);
    }
    y[0] = 0;
    y[1] = 1;
    EXPECT_EQ(eval::auroc(s, y), brute_auroc(s, y)) << "trial " << trial;
  }
}

TEST(Auroc, InvariantUnderMonotoneTransform) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> s(30), t(30), neg(30);
    std::vector<int> y(30);
    for (std::size_t i = 0; i < 30; ++i) {
      s[i] = u(rng);
      y[i] = static_cast<int>(i % 3 == 0);
      t[i] = std::exp(3 * s[i]) + 1;
      neg[i] = -s[i];
    }
    const double a = eval::auroc(s, y);
    EXPECT_NEAR(eval::auroc(t, y), a, 1e-12);
    EXPECT_NEAR(eval::auroc(neg, y), 1.0 - a, 1e-12);
  }
}

TEST(Auroc, SingleClassIsUndefined) {
  const std::vector<double> s{0.2, 0.7};
  try {
    eval::auroc(s, std::vector<int>{1, 1});
    FAIL() << "expected an exception";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("both classes must be present"), std::string::npos);
  }
  EXPECT_THROW(eval::auroc(s, std::vector<int>{0}), std::invalid_argument);
  EXPECT_THROW(eval::auroc(s, std::vector<int>{0, 2}), std::invalid_argument);
}

TEST(Confusion, WorkedExample) {
  const auto c = eval::confusion_metrics(std::vector<double>{0.9, 0.2, 0.6, 0.4}, std::vector<int>{1, 1, 0, 0});
  EXPECT_DOUBLE_EQ(c.sensitivity, 0.5);
  EXPECT_DOUBLE_EQ(c.specificity, 0.5);
  EXPECT_DOUBLE_EQ(c.balanced_accuracy, 0.5);
}

TEST(Confusion, ThresholdIsInclusiveAndPerfectSeparation) {
  const std::vector<int> y{1, 0};
  const auto at = eval::confusion_metrics(std::vector<double>{0.5, 0.49}, y);
  EXPECT_DOUBLE_EQ(at.balanced_accuracy, 1.0);
  const auto shifted = eval::confusion_metrics(std::vector<double>{0.5, 0.49}, y, 0.6);
  EXPECT_DOUBLE_EQ(shifted.sensitivity, 0.0);
  EXPECT_DOUBLE_EQ(shifted.specificity, 1.0);
}

TEST(Threshold, TunedThresholdNeverWorseThanDefault) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> s(40);
    std::vector<int> y(40);
    for (std::size_t i = 0; i < 40; ++i) {
      y[i] = static_cast<int>(i % 4 == 0);
      s[i] = 0.3 * u(rng) + (y[i] ? 0.05 : 0.0);
    }
    const double t = eval::tune_threshold(s, y);
    EXPECT_GE(eval::confusion_metrics(s, y, t).balanced_accuracy + 1e-12,
              eval::confusion_metrics(s, y, 0.5).balanced_accuracy);
  }
  // Already optimal at the default: ties keep 0.5.
  EXPECT_DOUBLE_EQ(eval::tune_threshold(std::vector<double>{0.9, 0.1}, std::vector<int>{1, 0}), 0.5);
}

TEST(Summary, MeanAndSampleDeviation) {
  const std::vector<double> v{76, 78, 80, 77, 79};
  const auto m = eval::mean_std(v);
  EXPECT_DOUBLE_EQ(m.mean, 78.0);
  EXPECT_NEAR(m.std, 1.5811388, 1e-6);
  EXPECT_EQ(eval::format_cell(m), "78.0 ± 1.58");
  EXPECT_EQ(eval::mean_std(std::vector<double>{81.25}).std, 0.0);
  EXPECT_THROW(eval::mean_std(std::vector<double>{}), std::invalid_argument);
  EXPECT_THROW(eval::cross_fold_summary(std::vector<FoldMetrics>{}), std::invalid_argument);
}

TEST(Summary, FoldMetricsInPercent) {
  const auto f = eval::fold_metrics(2, std::vector<double>{0.1, 0.4, 0.35, 0.8}, std::vector<int>{0, 0, 1, 1});
  EXPECT_EQ(f.fold, 2);
  EXPECT_DOUBLE_EQ(f.auroc, 75.0);
  EXPECT_DOUBLE_EQ(f.sensitivity, 50.0);
  EXPECT_DOUBLE_EQ(f.specificity, 100.0);
  EXPECT_DOUBLE_EQ(f.balanced_accuracy, 75.0);
}

TEST(Report, RoiRowsPrecedeCoreRows) {
  const std::vector<eval::ReportRow> rows{row(eval::Scale::core, "CoreNet", {80, 82}),
                                          row(eval::Scale::roi, "ResNet", {70, 72}),
                                          row(eval::Scale::roi, "ViT", {60, 64})};
  const std::string md = eval::markdown_table(rows);
  const auto resnet = md.find("| ResNet"), vit = md.find("| ViT"), core = md.find("| CoreNet");
  ASSERT_NE(core, std::string::npos);
  EXPECT_LT(resnet, vit);
  EXPECT_LT(vit, core);
  EXPECT_NE(md.find("71.0 ± 1.41"), std::string::npos);

  const std::string csv = eval::summary_csv(rows);
  EXPECT_LT(csv.find("roi,ResNet"), csv.find("core,CoreNet"));
}

TEST(Report, FoldCsvRoundTrip) {
  pcaus::testing::TempDir dir("eval");
  const auto a = row(eval::Scale::roi, "ResNet", {70.5, 72.25, 68});
  const auto b = row(eval::Scale::core, "Multiscale", {81, 83, 79.125});
  const auto path = dir.path() / "folds.csv";
  std::ofstream(path) << eval::fold_csv_header() << eval::fold_csv_rows(a) << eval::fold_csv_rows(b);
  const auto back = eval::read_fold_csvs({path}, 3);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(eval::summary_csv(back), eval::summary_csv({a, b}));
}

TEST(Report, MissingFoldsAreNamed) {
  pcaus::testing::TempDir dir("eval");
  const auto path = dir.path() / "folds.csv";
  std::ofstream(path) << eval::fold_csv_header() << eval::fold_csv_rows(row(eval::Scale::roi, "ViT", {70, 71}));
  try {
    eval::read_fold_csvs({path}, 4);
    FAIL() << "expected an exception";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("ViT/Linear:fold2"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("ViT/Linear:fold3"), std::string::npos);
  }
}

TEST(Report, EmptyInputIsAnError) {
  pcaus::testing::TempDir dir("eval");
  const auto path = dir.path() / "folds.csv";
  std::ofstream(path) << eval::fold_csv_header();
  EXPECT_THROW(eval::read_fold_csvs({path}, 5), std::runtime_error);
  EXPECT_THROW(eval::read_fold_csvs({dir.path() / "absent.csv"}, 5), std::runtime_error);
}

TEST(Report, RocCurveEndpoints) {
  const std::string csv = eval::roc_curve_csv(std::vector<double>{0.1, 0.4, 0.35, 0.8}, std::vector<int>{0, 0, 1, 1});
  EXPECT_EQ(csv.rfind("threshold,fpr,tpr\ninf,0,0\n", 0), 0u);
  EXPECT_NE(csv.find("0.100000,1.000000,1.000000\n"), std::string::npos);
}
