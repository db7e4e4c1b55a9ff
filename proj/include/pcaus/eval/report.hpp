#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <functional>
#include <set>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "pcaus/eval/metrics.hpp"

namespace pcaus::eval {

enum class Scale { roi, core };

struct ReportRow {
  Scale scale = Scale::roi;
  MetricsReport metrics;
};

inline std::string fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

// ROI-scale rows first, otherwise in insertion order.
inline std::vector<ReportRow> ordered(std::vector<ReportRow> rows) {
  std::stable_sort(rows.begin(), rows.end(),
                   [](const ReportRow& a, const ReportRow& b) { return a.scale == Scale::roi && b.scale == Scale::core; });
  return rows;
}

inline std::string markdown_table(const std::vector<ReportRow>& rows) {
  std::ostringstream os;
  os << "| Backbone | Finetuning | AUROC | Bal. Accuracy | Sensitivity | Specificity |\n";
  os << "|---|---|---|---|---|---|\n";
  for (const ReportRow& r : ordered(rows)) {
    const Summary s = r.metrics.aggregate();
    os << "| " << r.metrics.backbone << " | " << r.metrics.finetuning << " | " << format_cell(s.auroc) << " | "
       << format_cell(s.balanced_accuracy) << " | " << format_cell(s.sensitivity) << " | " << format_cell(s.specificity)
       << " |\n";
  }
  return os.str();
}

inline std::string summary_csv(const std::vector<ReportRow>& rows) {
  std::ostringstream os;
  os << "scale,backbone,finetuning,folds,auroc_mean,auroc_std,bal_acc_mean,bal_acc_std,sensitivity_mean,"
        "sensitivity_std,specificity_mean,specificity_std\n";
  for (const ReportRow& r : ordered(rows)) {
    const Summary s = r.metrics.aggregate();
    os << (r.scale == Scale::roi ? "roi" : "core") << ',' << r.metrics.backbone << ',' << r.metrics.finetuning << ','
       << r.metrics.per_fold.size();
    for (const MeanStd& m : {s.auroc, s.balanced_accuracy, s.sensitivity, s.specificity}) {
      os << ',' << fixed(m.mean) << ',' << fixed(m.std);
    }
    os << '\n';
  }
  return os.str();
}

inline std::string fold_csv_header() { return "scale,backbone,finetuning,fold,auroc,bal_acc,sensitivity,specificity,threshold\n"; }

inline std::string fold_csv_rows(const ReportRow& r) {
  std::ostringstream os;
  for (const FoldMetrics& f : r.metrics.per_fold) {
    os << (r.scale == Scale::roi ? "roi" : "core") << ',' << r.metrics.backbone << ',' << r.metrics.finetuning << ','
       << f.fold << ',' << fixed(f.auroc) << ',' << fixed(f.balanced_accuracy) << ',' << fixed(f.sensitivity) << ','
       << fixed(f.specificity) << ',' << fixed(f.threshold) << '\n';
  }
  return os.str();
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

}  // namespace detail

// Groups per-fold CSV files (fold_csv_header layout) into report rows. Every
// row must cover folds 0..expected_folds-1; missing folds are listed in the error.
inline std::vector<ReportRow> read_fold_csvs(const std::vector<std::filesystem::path>& files, int expected_folds) {
  std::vector<ReportRow> rows;
  std::map<std::pair<std::string, std::string>, std::size_t> index;
  for (const auto& path : files) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot read metrics file " + path.string());
    std::string line;
    std::getline(is, line);
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      const auto c = detail::split_csv_line(line);
      if (c.size() != 9) throw std::runtime_error("malformed metrics line in " + path.string() + ": " + line);
      const auto key = std::make_pair(c[1], c[2]);
      auto it = index.find(key);
      if (it == index.end()) {
        it = index.emplace(key, rows.size()).first;
        rows.push_back({c[0] == "roi" ? Scale::roi : Scale::core, {c[1], c[2], {}}});
      }
      rows[it->second].metrics.per_fold.push_back(
          {std::stoi(c[3]), std::stod(c[4]), std::stod(c[5]), std::stod(c[6]), std::stod(c[7]), std::stod(c[8])});
    }
  }
  if (rows.empty()) throw std::runtime_error("no per-fold metrics found");
  std::string missing;
  for (ReportRow& r : rows) {
    std::sort(r.metrics.per_fold.begin(), r.metrics.per_fold.end(),
              [](const FoldMetrics& a, const FoldMetrics& b) { return a.fold < b.fold; });
    std::set<int> have;
    for (const FoldMetrics& f : r.metrics.per_fold) have.insert(f.fold);
    for (int k = 0; k < expected_folds; ++k) {
      if (!have.count(k)) missing += " " + r.metrics.backbone + "/" + r.metrics.finetuning + ":fold" + std::to_string(k);
    }
  }
  if (!missing.empty()) throw std::runtime_error("missing metrics for folds:" + missing);
  return rows;
}

// ROC operating points (false-positive rate, true-positive rate) as CSV.
inline std::string roc_curve_csv(std::span<const double> scores, std::span<const int> labels) {
  detail::check_inputs(scores, labels, "ROC curve");
  std::vector<double> thresholds(scores.begin(), scores.end());
  std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
  std::ostringstream os;
  os << "threshold,fpr,tpr\ninf,0,0\n";
  for (double t : thresholds) {
    const Confusion c = confusion_metrics(scores, labels, t);
    os << fixed(t) << ',' << fixed(1.0 - c.specificity) << ',' << fixed(c.sensitivity) << '\n';
  }
  return os.str();
}

}  // namespace pcaus::eval
