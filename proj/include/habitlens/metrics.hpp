#pragma once

#include <optional>
#include <span>
#include <vector>

namespace habitlens::metrics {

/// Classification metrics over one evaluation set. Threshold metrics are
/// macro-averaged over the two classes; per-class precision/recall that
/// are undefined (zero denominator) enter the average as 0.
struct EvalReport {
  std::optional<double> auc;  // empty when only one class is present
  double accuracy = 0.0;
  double precision = 0.0;  // macro
  double recall = 0.0;     // macro
  double f1 = 0.0;         // macro
  size_t n = 0;
  double positive_fraction = 0.0;
};

/// Rank-based (Mann-Whitney) AUC with average ranks for ties: tied
/// positive/negative pairs count one half. Empty when either class is
/// absent. Throws on length mismatch.
std::optional<double> roc_auc(std::span<const double> scores, std::span<const int> labels);

/// Accuracy plus macro precision/recall/F1 at `threshold` (prediction is
/// positive when score >= threshold). Throws on empty or mismatched input.
EvalReport threshold_metrics(std::span<const double> scores, std::span<const int> labels,
                             double threshold = 0.5);

/// threshold_metrics plus AUC in one pass.
EvalReport evaluate(std::span<const double> scores, std::span<const int> labels,
                    double threshold = 0.5);

/// Product-moment correlation; empty when either vector has zero
/// variance. Throws on length mismatch or n < 2.
std::optional<double> pearson_r(std::span<const double> x, std::span<const double> y);

struct SummaryDistribution {
  double mean = 0.0;
  double sd = 0.0;  // sample SD (n-1); reported 0 when n == 1
  double min = 0.0;
  double q25 = 0.0;
  double median = 0.0;
  double q75 = 0.0;
  double max = 0.0;
  size_t n = 0;
  size_t n_excluded = 0;  // undefined entries dropped by the caller
};

/// Sample statistics with linearly interpolated quartiles.
/// Throws on empty input.
SummaryDistribution summarize_distribution(std::span<const double> values, size_t n_excluded = 0);

}  // namespace habitlens::metrics
