#include "doctest.h"
#include "habitlens/common.hpp"
#include "habitlens/metrics.hpp"
#include "oracles.hpp"

using namespace habitlens;

TEST_CASE("roc_auc on the four-point example") {
  std::vector<double> scores = {0.1, 0.4, 0.35, 0.8};
  std::vector<int> labels = {0, 0, 1, 1};
  CHECK(metrics::roc_auc(scores, labels).value() == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("roc_auc: constant scores give 0.5, perfect separation gives 1") {
  std::vector<double> constant = {0.3, 0.3, 0.3, 0.3};
  std::vector<int> labels = {0, 1, 0, 1};
  CHECK(metrics::roc_auc(constant, labels).value() == doctest::Approx(0.5));

  std::vector<double> perfect = {0.1, 0.2, 0.8, 0.9};
  std::vector<int> ordered = {0, 0, 1, 1};
  CHECK(metrics::roc_auc(perfect, ordered).value() == doctest::Approx(1.0));
}

TEST_CASE("roc_auc: degenerate and malformed inputs") {
  std::vector<double> scores = {0.1, 0.9};
  std::vector<int> all_pos = {1, 1}, all_neg = {0, 0};
  CHECK(!metrics::roc_auc(scores, all_pos).has_value());
  CHECK(!metrics::roc_auc(scores, all_neg).has_value());
  std::vector<int> short_labels = {1};
  CHECK_THROWS(metrics::roc_auc(scores, short_labels));
}

TEST_CASE("roc_auc equals the brute-force pairwise oracle on 1000 tied instances") {
  Rng rng(101);
  for (int it = 0; it < 1000; ++it) {
    size_t n = static_cast<size_t>(rng.uniform_int(2, 50));
    std::vector<double> scores(n);
    std::vector<int> labels(n);
    bool has_pos = false, has_neg = false;
    for (size_t i = 0; i < n; ++i) {
      scores[i] = static_cast<double>(rng.uniform_int(0, 7)) / 7.0;  // deliberate ties
      labels[i] = rng.bernoulli(0.4) ? 1 : 0;
      (labels[i] ? has_pos : has_neg) = true;
    }
    if (!has_pos || !has_neg) continue;
    double expected = oracles::pairwise_auc(scores, labels);
    CHECK(metrics::roc_auc(scores, labels).value() == expected);
  }
}

TEST_CASE("roc_auc is invariant under strictly increasing transforms") {
  Rng rng(17);
  for (int it = 0; it < 50; ++it) {
    size_t n = static_cast<size_t>(rng.uniform_int(4, 40));
    std::vector<double> scores(n), transformed(n);
    std::vector<int> labels(n);
    bool both = false;
    for (size_t i = 0; i < n; ++i) {
      scores[i] = static_cast<double>(rng.uniform_int(0, 9)) / 9.0;
      transformed[i] = std::exp(2.0 * scores[i]) + 1.0;
      labels[i] = rng.bernoulli(0.5) ? 1 : 0;
    }
    for (size_t i = 1; i < n; ++i) both |= labels[i] != labels[0];
    if (!both) continue;
    CHECK(metrics::roc_auc(scores, labels).value() ==
          metrics::roc_auc(transformed, labels).value());
  }
}

TEST_CASE("roc_auc label-flip symmetry in the tie-free case") {
  Rng rng(23);
  for (int it = 0; it < 50; ++it) {
    size_t n = static_cast<size_t>(rng.uniform_int(4, 30));
    std::vector<double> scores(n);
    std::vector<int> labels(n), flipped(n);
    bool both = false;
    for (size_t i = 0; i < n; ++i) {
      scores[i] = rng.uniform01();  // continuous, ties have measure zero
      labels[i] = rng.bernoulli(0.5) ? 1 : 0;
      flipped[i] = 1 - labels[i];
    }
    for (size_t i = 1; i < n; ++i) both |= labels[i] != labels[0];
    if (!both) continue;
    CHECK(metrics::roc_auc(scores, flipped).value() ==
          doctest::Approx(1.0 - metrics::roc_auc(scores, labels).value()).epsilon(1e-12));
  }
}

TEST_CASE("threshold metrics reproduce the degenerate majority-classifier rows") {
  // 25.9% positives, every score below threshold
  const size_t n = 1000, n_pos = 259;
  std::vector<double> scores(n, 0.1);
  std::vector<int> labels(n, 0);
  for (size_t i = 0; i < n_pos; ++i) labels[i] = 1;
  metrics::EvalReport r = metrics::threshold_metrics(scores, labels);
  const double tol = 5e-4 + 1e-12;  // "rounds to the published value"
  CHECK(std::abs(r.accuracy - 0.741) <= tol);
  CHECK(std::abs(r.precision - 0.371) <= tol);
  CHECK(std::abs(r.recall - 0.500) <= tol);
  CHECK(std::abs(r.f1 - 0.426) <= tol);
}

TEST_CASE("threshold metrics: macro identity holds for any prevalence") {
  // majority-negative predictor: acc=1-p, pre=(1-p)/2, rec=0.5,
  // f1=(2(1-p)/(2-p))/2
  Rng rng(5);
  for (int it = 0; it < 20; ++it) {
    size_t n = 400;
    size_t n_pos = static_cast<size_t>(rng.uniform_int(1, 399));
    double p = static_cast<double>(n_pos) / static_cast<double>(n);
    std::vector<double> scores(n, 0.0);
    std::vector<int> labels(n, 0);
    for (size_t i = 0; i < n_pos; ++i) labels[i] = 1;
    metrics::EvalReport r = metrics::threshold_metrics(scores, labels);
    CHECK(r.accuracy == doctest::Approx(1.0 - p).epsilon(1e-12));
    CHECK(r.precision == doctest::Approx((1.0 - p) / 2.0).epsilon(1e-12));
    CHECK(r.recall == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(r.f1 == doctest::Approx(0.5 * 2.0 * (1.0 - p) / (2.0 - p)).epsilon(1e-12));
  }
}

TEST_CASE("threshold metrics: perfect predictions and the counting oracle") {
  std::vector<double> scores = {0.9, 0.8, 0.1, 0.2};
  std::vector<int> labels = {1, 1, 0, 0};
  metrics::EvalReport r = metrics::threshold_metrics(scores, labels);
  CHECK(r.accuracy == 1.0);
  CHECK(r.precision == 1.0);
  CHECK(r.recall == 1.0);
  CHECK(r.f1 == 1.0);

  Rng rng(7);
  std::vector<double> s(200);
  std::vector<int> y(200);
  for (size_t i = 0; i < 200; ++i) {
    s[i] = rng.uniform01();
    y[i] = rng.bernoulli(0.3) ? 1 : 0;
  }
  metrics::EvalReport got = metrics::threshold_metrics(s, y);
  oracles::ConfusionMetrics want = oracles::confusion_metrics(s, y, 0.5);
  CHECK(got.accuracy == want.acc);
  CHECK(got.precision == want.pre);
  CHECK(got.recall == want.rec);
  CHECK(got.f1 == want.f1);

  std::vector<double> es;
  std::vector<int> el;
  CHECK_THROWS(metrics::threshold_metrics(es, el));
}

TEST_CASE("pearson_r basics") {
  std::vector<double> x = {1, 2, 3, 4};
  std::vector<double> y_affine = {3, 5, 7, 9};  // 2x+1
  CHECK(metrics::pearson_r(x, y_affine).value() == doctest::Approx(1.0).epsilon(1e-12));

  std::vector<double> y_neg = {-1, -2, -3, -4};
  CHECK(metrics::pearson_r(x, y_neg).value() == doctest::Approx(-1.0).epsilon(1e-12));

  std::vector<double> y = {2, 1, 4, 3};
  CHECK(metrics::pearson_r(x, y).value() == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(metrics::pearson_r(x, y).value() == doctest::Approx(oracles::pearson_direct(x, y)));

  std::vector<double> flat = {5, 5, 5, 5};
  CHECK(!metrics::pearson_r(x, flat).has_value());
  std::vector<double> shorter = {1, 2};
  CHECK_THROWS(metrics::pearson_r(x, shorter));
}

TEST_CASE("summarize_distribution") {
  std::vector<double> single = {3.5};
  metrics::SummaryDistribution s = metrics::summarize_distribution(single);
  CHECK(s.mean == 3.5);
  CHECK(s.min == 3.5);
  CHECK(s.max == 3.5);
  CHECK(s.sd == 0.0);
  CHECK(s.n == 1);

  std::vector<double> range;
  for (int i = 1; i <= 100; ++i) range.push_back(i);
  CHECK(metrics::summarize_distribution(range).median == doctest::Approx(50.5));

  Rng rng(13);
  std::vector<double> values(37);
  for (double& v : values) v = rng.normal();
  metrics::SummaryDistribution d = metrics::summarize_distribution(values);
  CHECK(d.q25 == doctest::Approx(oracles::quantile_sorted_scan(values, 0.25)).epsilon(1e-12));
  CHECK(d.median == doctest::Approx(oracles::quantile_sorted_scan(values, 0.50)).epsilon(1e-12));
  CHECK(d.q75 == doctest::Approx(oracles::quantile_sorted_scan(values, 0.75)).epsilon(1e-12));

  std::vector<double> empty;
  CHECK_THROWS(metrics::summarize_distribution(empty));
}
