#pragma once

#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "habitlens/common.hpp"

namespace habitlens::hpo {

enum class ParamKind { GridInt, GridReal, LogReal };

struct ParamDesc {
  std::string name;
  ParamKind kind;
  double min = 0.0;
  double max = 0.0;
  double step = 0.0;  // grid kinds only

  int grid_points() const;
};

/// One point is a vector of doubles aligned with the space's parameters;
/// grid dimensions always hold exact grid values.
using HyperConfig = std::vector<double>;

struct SearchSpace {
  std::string name;
  std::vector<ParamDesc> params;

  int index_of(const std::string& param) const;
  void validate() const;

  // Built-in tuning spaces for the three model families.
  static const SearchSpace& lstm();
  static const SearchSpace& transformer();
  static const SearchSpace& fine_tune();
};

struct TrialMetrics {
  double acc = std::numeric_limits<double>::quiet_NaN();
  double pre = std::numeric_limits<double>::quiet_NaN();
  double rec = std::numeric_limits<double>::quiet_NaN();
  double f1 = std::numeric_limits<double>::quiet_NaN();
};

struct Trial {
  HyperConfig config;
  double objective = -std::numeric_limits<double>::infinity();
  bool ok = false;
  std::string error;
  TrialMetrics metrics;
};

struct TrialLog {
  std::vector<Trial> trials;
  int best_index = -1;  // -1 when every trial failed

  const Trial& best() const;
};

struct TrialOutcome {
  double objective = 0.0;  // validation AUC, maximized
  TrialMetrics metrics;
};

using ObjectiveFn = std::function<TrialOutcome(const HyperConfig&)>;

/// Uniform over grid points; log-uniform over continuous ranges.
HyperConfig sample_random_config(const SearchSpace& space, Rng& rng);

/// EI = (mu - best) * Phi(z) + sigma * phi(z), z = (mu - best) / sigma;
/// at sigma == 0 this degenerates to max(mu - best, 0).
double expected_improvement(double mu, double sigma, double best);

/// Random warm start followed by GP-guided proposals (Matern-5/2 on the
/// unit cube, expected improvement over 1024 seeded candidates).
/// A throwing objective records a failed trial and the search continues;
/// the log always holds exactly `budget` trials.
TrialLog bayesian_search(const SearchSpace& space, const ObjectiveFn& objective, int budget,
                         int random_starts, uint64_t seed);

/// Per-trial table ranked by objective: rank,acc,pre,rec,f1,auc.
void write_trial_log_csv(const TrialLog& log, std::ostream& out);

/// Full hyperparameter values per trial, in trial order.
void write_trial_configs_csv(const SearchSpace& space, const TrialLog& log, std::ostream& out);

}  // namespace habitlens::hpo
