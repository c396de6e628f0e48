#include <cmath>
#include <set>
#include <sstream>

#include "doctest.h"
#include "habitlens/common.hpp"
#include "habitlens/hpo.hpp"

using namespace habitlens;

namespace {

hpo::SearchSpace one_dim_log() {
  hpo::SearchSpace s;
  s.name = "onedim";
  s.params = {{"x", hpo::ParamKind::LogReal, 1e-4, 1e-2, 0}};
  return s;
}

/// Smooth 1-D objective with its optimum at x = 1e-3.
hpo::TrialOutcome analytic_objective(const hpo::HyperConfig& cfg) {
  double v = std::log10(cfg[0]) + 3.0;
  return {-v * v, {}};
}

}  // namespace

TEST_CASE("sample_random_config respects grids and log ranges") {
  hpo::SearchSpace s;
  s.params = {{"units", hpo::ParamKind::GridInt, 4, 8, 4}};
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    double v = hpo::sample_random_config(s, rng)[0];
    CHECK((v == 4.0 || v == 8.0));
  }

  Rng rng2(2);
  hpo::SearchSpace log_space = one_dim_log();
  std::vector<double> samples;
  for (int i = 0; i < 10000; ++i)
    samples.push_back(hpo::sample_random_config(log_space, rng2)[0]);
  std::nth_element(samples.begin(), samples.begin() + 5000, samples.end());
  double median = samples[5000];
  CHECK(median > 8e-4);
  CHECK(median < 1.25e-3);

  Rng a(3), b(3);
  CHECK(hpo::sample_random_config(log_space, a) == hpo::sample_random_config(log_space, b));
}

TEST_CASE("expected improvement closed form") {
  CHECK(hpo::expected_improvement(1.0, 0.0, 1.0) == 0.0);
  CHECK(hpo::expected_improvement(0.5, 0.0, 1.0) == 0.0);
  CHECK(hpo::expected_improvement(1.0, 1.0, 1.0) == doctest::Approx(0.3989).epsilon(1e-3));
  CHECK(hpo::expected_improvement(2.0, 1e-12, 1.0) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("budget equal to random starts degenerates to random search") {
  hpo::SearchSpace s = one_dim_log();
  hpo::TrialLog log = hpo::bayesian_search(s, analytic_objective, 5, 5, 17);
  CHECK(log.trials.size() == 5);
  double best = -1e18;
  for (const auto& t : log.trials) best = std::max(best, t.objective);
  CHECK(log.best().objective == best);
}

TEST_CASE("the analytic optimum is found within a factor of two") {
  hpo::SearchSpace s = one_dim_log();
  int hits = 0;
  for (uint64_t seed = 0; seed < 10; ++seed) {
    hpo::TrialLog log = hpo::bayesian_search(s, analytic_objective, 20, 5, seed);
    CHECK(log.trials.size() == 20);
    double x = log.best().config[0];
    if (x > 0.5e-3 && x < 2e-3) ++hits;
  }
  CHECK(hits >= 9);
}

TEST_CASE("a throwing objective yields a complete log of failed trials") {
  hpo::SearchSpace s = one_dim_log();
  hpo::ObjectiveFn bad = [](const hpo::HyperConfig&) -> hpo::TrialOutcome {
    throw std::runtime_error("objective exploded");
  };
  hpo::TrialLog log = hpo::bayesian_search(s, bad, 20, 5, 3);
  CHECK(log.trials.size() == 20);
  CHECK(log.best_index == -1);
  for (const auto& t : log.trials) {
    CHECK(!t.ok);
    CHECK(t.error == "objective exploded");
  }
  CHECK_THROWS(log.best());
}

TEST_CASE("search is deterministic for a deterministic objective") {
  const hpo::SearchSpace& s = hpo::SearchSpace::lstm();
  hpo::ObjectiveFn objective = [](const hpo::HyperConfig& cfg) -> hpo::TrialOutcome {
    double score = 0.0;
    for (double v : cfg) score += std::sin(v);
    return {score, {}};
  };
  hpo::TrialLog a = hpo::bayesian_search(s, objective, 12, 5, 21);
  hpo::TrialLog b = hpo::bayesian_search(s, objective, 12, 5, 21);
  REQUIRE(a.trials.size() == b.trials.size());
  CHECK(a.best_index == b.best_index);
  for (size_t i = 0; i < a.trials.size(); ++i) {
    CHECK(a.trials[i].config == b.trials[i].config);
    CHECK(a.trials[i].objective == b.trials[i].objective);
  }
}

TEST_CASE("every proposed grid value lies exactly on its grid") {
  const hpo::SearchSpace& s = hpo::SearchSpace::transformer();
  hpo::ObjectiveFn objective = [](const hpo::HyperConfig& cfg) -> hpo::TrialOutcome {
    return {cfg[0] / 50.0, {}};
  };
  hpo::TrialLog log = hpo::bayesian_search(s, objective, 15, 5, 31);
  for (const auto& t : log.trials) {
    for (size_t d = 0; d < s.params.size(); ++d) {
      const hpo::ParamDesc& p = s.params[d];
      CHECK(t.config[d] >= p.min - 1e-12);
      CHECK(t.config[d] <= p.max + 1e-12);
      if (p.kind != hpo::ParamKind::LogReal) {
        double k = (t.config[d] - p.min) / p.step;
        CHECK(std::abs(k - std::round(k)) < 1e-9);
      }
    }
  }
}

TEST_CASE("the best trial dominates the random starts") {
  const hpo::SearchSpace& s = hpo::SearchSpace::lstm();
  const size_t lr_dim = static_cast<size_t>(s.index_of("lr"));
  hpo::ObjectiveFn objective = [lr_dim](const hpo::HyperConfig& cfg) -> hpo::TrialOutcome {
    return {-std::abs(cfg[lr_dim] - 1e-3), {}};
  };
  hpo::TrialLog log = hpo::bayesian_search(s, objective, 14, 5, 41);
  for (int i = 0; i < 5; ++i) CHECK(log.best().objective >= log.trials[i].objective);
}

TEST_CASE("trial log CSV has the expected shape and is stable") {
  hpo::SearchSpace s = one_dim_log();
  hpo::TrialLog log = hpo::bayesian_search(s, analytic_objective, 8, 4, 51);
  std::ostringstream a, b;
  hpo::write_trial_log_csv(log, a);
  hpo::write_trial_log_csv(log, b);
  std::string text = a.str();
  CHECK(text == b.str());
  CHECK(text.rfind("rank,acc,pre,rec,f1,auc\n", 0) == 0);
  // 8 trials -> 8 ranked rows + header
  size_t lines = static_cast<size_t>(std::count(text.begin(), text.end(), '\n'));
  CHECK(lines == 9);
}
