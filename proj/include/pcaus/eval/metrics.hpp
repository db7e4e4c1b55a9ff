#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace pcaus::eval {

namespace detail {

inline void check_inputs(std::span<const double> scores, std::span<const int> labels, const char* what) {
  if (scores.size() != labels.size()) throw std::invalid_argument(std::string(what) + ": scores and labels differ in length");
  bool pos = false, neg = false;
  for (int y : labels) {
    if (y != 0 && y != 1) throw std::invalid_argument(std::string(what) + ": labels must be 0 or 1");
    (y ? pos : neg) = true;
  }
  if (!pos || !neg) throw std::invalid_argument(std::string(what) + " undefined: both classes must be present");
}

}  // namespace detail

// Probability that a random positive outranks a random negative, ties 0.5.
// Rank-sum form with midranks for tied scores.
inline double auroc(std::span<const double> scores, std::span<const int> labels) {
  detail::check_inputs(scores, labels, "AUROC");
  const std::size_t n = scores.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[idx[j]] == scores[idx[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1 .. j
    for (std::size_t k = i; k < j; ++k) {
      if (labels[idx[k]] == 1) {
        rank_sum += midrank;
        ++n_pos;
      }
    }
    i = j;
  }
  const double p = static_cast<double>(n_pos), q = static_cast<double>(n - n_pos);
  return (rank_sum - p * (p + 1) / 2) / (p * q);
}

struct Confusion {
  double sensitivity = 0;
  double specificity = 0;
  double balanced_accuracy = 0;
};

// Positive iff score >= threshold.
inline Confusion confusion_metrics(std::span<const double> scores, std::span<const int> labels, double threshold = 0.5) {
  detail::check_inputs(scores, labels, "confusion metrics");
  double tp = 0, fn = 0, tn = 0, fp = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool predicted = scores[i] >= threshold;
    if (labels[i] == 1) {
      (predicted ? tp : fn) += 1;
    } else {
      (predicted ? fp : tn) += 1;
    }
  }
  Confusion c;
  c.sensitivity = tp / (tp + fn);
  c.specificity = tn / (tn + fp);
  c.balanced_accuracy = 0.5 * (c.sensitivity + c.specificity);
  return c;
}

// Threshold maximizing balanced accuracy; candidates are the observed scores
// and 0.5. Ties resolve to the candidate closest to 0.5.
inline double tune_threshold(std::span<const double> scores, std::span<const int> labels) {
  detail::check_inputs(scores, labels, "threshold tuning");
  std::vector<double> candidates(scores.begin(), scores.end());
  candidates.push_back(0.5);
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
  double best = 0.5, best_ba = -1;
  for (double t : candidates) {
    const double ba = confusion_metrics(scores, labels, t).balanced_accuracy;
    if (ba > best_ba + 1e-12 || (std::abs(ba - best_ba) <= 1e-12 && std::abs(t - 0.5) < std::abs(best - 0.5))) {
      best_ba = ba;
      best = t;
    }
  }
  return best;
}

// Metrics of one test fold, in percent.
struct FoldMetrics {
  int fold = 0;
  double auroc = 0;
  double balanced_accuracy = 0;
  double sensitivity = 0;
  double specificity = 0;
  double threshold = 0.5;
};

inline FoldMetrics fold_metrics(int fold, std::span<const double> scores, std::span<const int> labels,
                                double threshold = 0.5) {
  const Confusion c = confusion_metrics(scores, labels, threshold);
  return {fold, 100.0 * auroc(scores, labels), 100.0 * c.balanced_accuracy, 100.0 * c.sensitivity,
          100.0 * c.specificity, threshold};
}

struct MeanStd {
  double mean = 0;
  double std = 0;  // sample (n - 1); 0 for a single value
};

inline MeanStd mean_std(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("mean_std: no values");
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  if (values.size() == 1) return {mean, 0.0};
  double ss = 0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / (n - 1))};
}

struct Summary {
  MeanStd auroc, balanced_accuracy, sensitivity, specificity;
};

inline Summary cross_fold_summary(std::span<const FoldMetrics> folds) {
  if (folds.empty()) throw std::invalid_argument("cross_fold_summary: no folds");
  auto column = [&](double FoldMetrics::*field) {
    std::vector<double> v;
    for (const FoldMetrics& f : folds) v.push_back(f.*field);
    return mean_std(v);
  };
  return {column(&FoldMetrics::auroc), column(&FoldMetrics::balanced_accuracy), column(&FoldMetrics::sensitivity),
          column(&FoldMetrics::specificity)};
}

// "78.0 ± 1.58": mean to one decimal, deviation to two.
inline std::string format_cell(const MeanStd& m) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.1f ± %.2f", m.mean, m.std);
  return buf;
}

struct MetricsReport {
  std::string backbone;
  std::string finetuning;
  std::vector<FoldMetrics> per_fold;

  Summary aggregate() const { return cross_fold_summary(per_fold); }
};

}  // namespace pcaus::eval
