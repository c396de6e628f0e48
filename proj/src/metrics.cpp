#include "habitlens/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace habitlens::metrics {

std::optional<double> roc_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("roc_auc: length mismatch");
  const size_t n = scores.size();
  size_t n_pos = 0;
  for (int y : labels) n_pos += (y != 0);
  const size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) return std::nullopt;

  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return scores[a] < scores[b]; });

  // Average ranks over tie groups, accumulate positive-class rank sum.
  double rank_sum_pos = 0.0;
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
    for (size_t k = i; k <= j; ++k)
      if (labels[order[k]] != 0) rank_sum_pos += avg_rank;
    i = j + 1;
  }
  double u = rank_sum_pos - static_cast<double>(n_pos) * (static_cast<double>(n_pos) + 1.0) / 2.0;
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

EvalReport threshold_metrics(std::span<const double> scores, std::span<const int> labels,
                             double threshold) {
  if (scores.size() != labels.size())
    throw std::invalid_argument("threshold_metrics: length mismatch");
  if (scores.empty()) throw std::invalid_argument("threshold_metrics: empty input");

  size_t tp = 0, fp = 0, tn = 0, fn = 0;
  for (size_t i = 0; i < scores.size(); ++i) {
    bool pred = scores[i] >= threshold;
    bool truth = labels[i] != 0;
    if (pred && truth)
      ++tp;
    else if (pred && !truth)
      ++fp;
    else if (!pred && truth)
      ++fn;
    else
      ++tn;
  }
  auto safe_div = [](double num, double den) { return den > 0.0 ? num / den : 0.0; };
  double pre_pos = safe_div(double(tp), double(tp + fp));
  double rec_pos = safe_div(double(tp), double(tp + fn));
  double pre_neg = safe_div(double(tn), double(tn + fn));
  double rec_neg = safe_div(double(tn), double(tn + fp));
  double f1_pos = safe_div(2.0 * pre_pos * rec_pos, pre_pos + rec_pos);
  double f1_neg = safe_div(2.0 * pre_neg * rec_neg, pre_neg + rec_neg);

  EvalReport r;
  r.n = scores.size();
  r.positive_fraction = double(tp + fn) / double(r.n);
  r.accuracy = double(tp + tn) / double(r.n);
  r.precision = 0.5 * (pre_pos + pre_neg);
  r.recall = 0.5 * (rec_pos + rec_neg);
  r.f1 = 0.5 * (f1_pos + f1_neg);
  return r;
}

EvalReport evaluate(std::span<const double> scores, std::span<const int> labels,
                    double threshold) {
  EvalReport r = threshold_metrics(scores, labels, threshold);
  r.auc = roc_auc(scores, labels);
  return r;
}

std::optional<double> pearson_r(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw std::invalid_argument("pearson_r: length mismatch");
  if (x.size() < 2) throw std::invalid_argument("pearson_r: need at least 2 points");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  bool x_constant = true, y_constant = true;
  for (size_t i = 1; i < x.size(); ++i) {
    x_constant = x_constant && x[i] == x[0];
    y_constant = y_constant && y[i] == y[0];
  }
  if (x_constant || y_constant) return std::nullopt;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  return sxy / std::sqrt(sxx * syy);
}

SummaryDistribution summarize_distribution(std::span<const double> values, size_t n_excluded) {
  if (values.empty()) throw std::invalid_argument("summarize_distribution: empty input");
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  const size_t n = v.size();

  auto quantile = [&](double p) {
    double idx = p * static_cast<double>(n - 1);
    size_t lo = static_cast<size_t>(idx);
    size_t hi = std::min(lo + 1, n - 1);
    double frac = idx - static_cast<double>(lo);
    return v[lo] * (1.0 - frac) + v[hi] * frac;
  };

  SummaryDistribution s;
  s.n = n;
  s.n_excluded = n_excluded;
  s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(n);
  if (n > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.sd = std::sqrt(ss / static_cast<double>(n - 1));
  }
  s.min = v.front();
  s.max = v.back();
  s.q25 = quantile(0.25);
  s.median = quantile(0.50);
  s.q75 = quantile(0.75);
  return s;
}

}  // namespace habitlens::metrics
