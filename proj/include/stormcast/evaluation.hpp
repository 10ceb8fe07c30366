#pragma once

// Confusion-matrix verification for rare-event forecasts.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "stormcast/raster.hpp"

namespace stormcast {

// Counts are doubles so that re-weighted matrices stay representable.
struct ConfusionMatrix {
  double tp = 0.0;
  double fp = 0.0;
  double fn = 0.0;
  double tn = 0.0;

  double total() const { return tp + fp + fn + tn; }
  ConfusionMatrix& operator+=(const ConfusionMatrix& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }
  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

// A pixel is predicted positive when prob >= threshold; truth must be 0/1.
ConfusionMatrix confuse(std::span<const double> probs, std::span<const double> truth, double threshold = 0.5);
ConfusionMatrix confuse(const Raster& probs, const Raster& truth, double threshold = 0.5);

// Undefined ratios (zero denominator) are empty optionals.
struct MetricReport {
  ConfusionMatrix counts;
  double threshold = 0.5;
  std::optional<double> tpr;        // TP / (TP + FN), probability of detection
  std::optional<double> tnr;        // TN / (TN + FP)
  std::optional<double> accuracy;   // (TP + TN) / total
  std::optional<double> far;        // FP / (TP + FP), false alarm ratio
  std::optional<double> precision;  // TP / (TP + FP)
};

// Throws Errc::invalid_argument for an all-zero matrix.
MetricReport metrics(const ConfusionMatrix& cm, double threshold = 0.5);

// Scales the negative-class counts (TN, FP) by factor to emulate the full
// class imbalance of an evaluation that saw a balanced subset.
ConfusionMatrix reweight_negatives(const ConfusionMatrix& cm, double factor = 1500.0);

struct FoldReport {
  int fold = 0;
  std::string variant;
  MetricReport report;
};

// Micro-average: sums raw counts over folds, then recomputes the ratios.
MetricReport aggregate(std::span<const FoldReport> folds);

// CSV with one row per fold plus an "all" row per variant:
//   fold,variant,threshold,tp,fp,fn,tn,tpr,tnr,accuracy,far,precision
void write_report_csv(const std::string& path, std::span<const FoldReport> folds);
std::vector<FoldReport> read_report_csv(const std::string& path);

// Tab-separated "metric<TAB>variant<TAB>value" rows for bar charts.
void write_plot_data(const std::string& path, const std::string& variant, const MetricReport& report);
void write_plot_data(const std::string& path, std::span<const std::pair<std::string, MetricReport>> reports);

// Fold-summed report of each variant, in order of first appearance.
std::vector<std::pair<std::string, MetricReport>> aggregate_by_variant(std::span<const FoldReport> folds);

}  // namespace stormcast
