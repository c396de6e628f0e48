#include "habitlens/hpo.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "habitlens/csv.hpp"

namespace habitlens::hpo {

int ParamDesc::grid_points() const {
  if (kind == ParamKind::LogReal) return 0;
  return static_cast<int>(std::round((max - min) / step)) + 1;
}

int SearchSpace::index_of(const std::string& param) const {
  for (size_t i = 0; i < params.size(); ++i)
    if (params[i].name == param) return static_cast<int>(i);
  throw std::invalid_argument("SearchSpace: no parameter named " + param);
}

void SearchSpace::validate() const {
  for (const ParamDesc& p : params) {
    if (p.min > p.max) throw std::invalid_argument("SearchSpace: min > max for " + p.name);
    if (p.kind != ParamKind::LogReal) {
      if (p.step <= 0) throw std::invalid_argument("SearchSpace: step must be positive");
      double k = (p.max - p.min) / p.step;
      if (std::abs(k - std::round(k)) > 1e-9)
        throw std::invalid_argument("SearchSpace: step does not divide range for " + p.name);
    } else if (p.min <= 0) {
      throw std::invalid_argument("SearchSpace: log range requires positive bounds");
    }
  }
}

const SearchSpace& SearchSpace::lstm() {
  static const SearchSpace space = [] {
    SearchSpace s;
    s.name = "lstm";
    s.params = {
        {"embed_dim", ParamKind::GridInt, 5, 50, 5},
        {"num_layers", ParamKind::GridInt, 1, 3, 1},
        {"layer_units", ParamKind::GridInt, 4, 64, 4},
        {"dropout_inner", ParamKind::GridReal, 0.2, 0.5, 0.1},
        {"l1_layer", ParamKind::LogReal, 1e-5, 1e-3, 0},
        {"l2_layer", ParamKind::LogReal, 1e-4, 1e-2, 0},
        {"dense_units", ParamKind::GridInt, 4, 64, 4},
        {"l1_dense", ParamKind::LogReal, 1e-5, 1e-3, 0},
        {"l2_dense", ParamKind::LogReal, 1e-4, 1e-2, 0},
        {"dropout_top", ParamKind::GridReal, 0.2, 0.5, 0.1},
        {"lr", ParamKind::LogReal, 1e-5, 1e-2, 0},
    };
    s.validate();
    return s;
  }();
  return space;
}

const SearchSpace& SearchSpace::transformer() {
  static const SearchSpace space = [] {
    SearchSpace s = lstm();
    s.name = "transformer";
    s.params[static_cast<size_t>(s.index_of("lr"))] = {"lr", ParamKind::LogReal, 1e-4, 1e-2, 0};
    s.validate();
    return s;
  }();
  return space;
}

const SearchSpace& SearchSpace::fine_tune() {
  static const SearchSpace space = [] {
    SearchSpace s;
    s.name = "fine_tune";
    s.params = {
        {"dense_units", ParamKind::GridInt, 4, 64, 4},
        {"l1_dense", ParamKind::LogReal, 1e-5, 1e-3, 0},
        {"l2_dense", ParamKind::LogReal, 1e-4, 1e-2, 0},
        {"dropout_top", ParamKind::GridReal, 0.2, 0.5, 0.1},
        {"lr", ParamKind::LogReal, 1e-4, 1e-2, 0},
    };
    s.validate();
    return s;
  }();
  return space;
}

const Trial& TrialLog::best() const {
  if (best_index < 0) throw std::runtime_error("TrialLog: no successful trial");
  return trials[static_cast<size_t>(best_index)];
}

HyperConfig sample_random_config(const SearchSpace& space, Rng& rng) {
  HyperConfig cfg(space.params.size());
  for (size_t i = 0; i < space.params.size(); ++i) {
    const ParamDesc& p = space.params[i];
    if (p.kind == ParamKind::LogReal) {
      cfg[i] = rng.log_uniform(p.min, p.max);
    } else {
      int k = static_cast<int>(rng.uniform_int(0, p.grid_points() - 1));
      cfg[i] = p.min + static_cast<double>(k) * p.step;
    }
  }
  return cfg;
}

double expected_improvement(double mu, double sigma, double best) {
  if (sigma <= 0.0) return std::max(mu - best, 0.0);
  double z = (mu - best) / sigma;
  double phi = std::exp(-0.5 * z * z) / std::sqrt(2.0 * M_PI);
  double cdf = 0.5 * std::erfc(-z / std::sqrt(2.0));
  return (mu - best) * cdf + sigma * phi;
}

namespace {

std::vector<double> normalize(const SearchSpace& space, const HyperConfig& cfg) {
  std::vector<double> x(cfg.size());
  for (size_t i = 0; i < cfg.size(); ++i) {
    const ParamDesc& p = space.params[i];
    if (p.kind == ParamKind::LogReal)
      x[i] = (std::log(cfg[i]) - std::log(p.min)) / (std::log(p.max) - std::log(p.min));
    else
      x[i] = p.max > p.min ? (cfg[i] - p.min) / (p.max - p.min) : 0.0;
  }
  return x;
}

double matern52(double r, double ell) {
  double d = std::sqrt(5.0) * r / ell;
  return (1.0 + d + d * d / 3.0) * std::exp(-d);
}

/// GP posterior over standardized objectives; hyperparameters picked by
/// log marginal likelihood on a small (length-scale x variance) grid.
class Surrogate {
 public:
  Surrogate(const std::vector<std::vector<double>>& xs, const std::vector<double>& ys) {
    n_ = xs.size();
    xs_ = xs;
    double mean = std::accumulate(ys.begin(), ys.end(), 0.0) / static_cast<double>(n_);
    double var = 0.0;
    for (double y : ys) var += (y - mean) * (y - mean);
    double sd = n_ > 1 ? std::sqrt(var / static_cast<double>(n_ - 1)) : 0.0;
    if (sd < 1e-12) sd = 1.0;
    y_ = Eigen::VectorXd(n_);
    for (size_t i = 0; i < n_; ++i) y_(static_cast<Eigen::Index>(i)) = (ys[i] - mean) / sd;

    Eigen::MatrixXd dist(n_, n_);
    for (size_t i = 0; i < n_; ++i)
      for (size_t j = 0; j < n_; ++j) {
        double r = 0.0;
        for (size_t d = 0; d < xs[i].size(); ++d) {
          double diff = xs[i][d] - xs[j][d];
          r += diff * diff;
        }
        dist(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = std::sqrt(r);
      }

    const double noise = 1e-6;
    static const double ell_grid[] = {0.05, 0.1, 0.2, 0.3, 0.5, 0.75, 1.0, 1.5, 2.0};
    static const double var_grid[] = {0.25, 0.5, 1.0, 2.0, 4.0};
    double best_lml = -std::numeric_limits<double>::infinity();
    for (double ell : ell_grid) {
      for (double s2 : var_grid) {
        Eigen::MatrixXd K(n_, n_);
        for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(n_); ++i)
          for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(n_); ++j)
            K(i, j) = s2 * matern52(dist(i, j), ell) + (i == j ? noise : 0.0);
        Eigen::LLT<Eigen::MatrixXd> llt(K);
        if (llt.info() != Eigen::Success) continue;
        Eigen::VectorXd alpha = llt.solve(y_);
        double logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
        double lml = -0.5 * y_.dot(alpha) - 0.5 * logdet -
                     0.5 * static_cast<double>(n_) * std::log(2.0 * M_PI);
        if (lml > best_lml) {
          best_lml = lml;
          ell_ = ell;
          s2_ = s2;
          llt_ = llt;
          alpha_ = alpha;
        }
      }
    }
    if (alpha_.size() == 0) {  // every candidate failed to factor
      Eigen::MatrixXd K(n_, n_);
      for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(n_); ++i)
        for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(n_); ++j)
          K(i, j) = matern52(dist(i, j), ell_) + (i == j ? 1e-4 : 0.0);
      llt_.compute(K);
      alpha_ = llt_.solve(y_);
      s2_ = 1.0;
    }
    best_std_ = y_.maxCoeff();
  }

  void predict(const std::vector<double>& x, double& mu, double& sigma) const {
    Eigen::VectorXd k(n_);
    for (size_t i = 0; i < n_; ++i) {
      double r = 0.0;
      for (size_t d = 0; d < x.size(); ++d) {
        double diff = x[d] - xs_[i][d];
        r += diff * diff;
      }
      k(static_cast<Eigen::Index>(i)) = s2_ * matern52(std::sqrt(r), ell_);
    }
    mu = k.dot(alpha_);
    Eigen::VectorXd v = llt_.matrixL().solve(k);
    double var = s2_ + 1e-6 - v.squaredNorm();
    sigma = var > 0.0 ? std::sqrt(var) : 0.0;
  }

  double best_standardized() const { return best_std_; }

 private:
  size_t n_ = 0;
  std::vector<std::vector<double>> xs_;
  Eigen::VectorXd y_;
  Eigen::LLT<Eigen::MatrixXd> llt_;
  Eigen::VectorXd alpha_;
  double ell_ = 0.5, s2_ = 1.0;
  double best_std_ = 0.0;
};

bool same_config(const HyperConfig& a, const HyperConfig& b) {
  for (size_t i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

bool is_duplicate(const std::vector<Trial>& trials, const HyperConfig& cfg) {
  for (const Trial& t : trials)
    if (same_config(t.config, cfg)) return true;
  return false;
}

HyperConfig perturb(const SearchSpace& space, HyperConfig cfg, Rng& rng) {
  for (size_t i = 0; i < cfg.size(); ++i) {
    const ParamDesc& p = space.params[i];
    if (p.kind == ParamKind::LogReal) {
      cfg[i] = std::min(p.max, std::max(p.min, cfg[i] * std::exp(0.1 * rng.normal())));
    } else {
      int k = static_cast<int>(std::round((cfg[i] - p.min) / p.step));
      k += rng.bernoulli(0.5) ? 1 : -1;
      k = std::max(0, std::min(p.grid_points() - 1, k));
      cfg[i] = p.min + static_cast<double>(k) * p.step;
    }
  }
  return cfg;
}

}  // namespace

TrialLog bayesian_search(const SearchSpace& space, const ObjectiveFn& objective, int budget,
                         int random_starts, uint64_t seed) {
  space.validate();
  if (budget < random_starts || random_starts < 1)
    throw std::invalid_argument("bayesian_search: need budget >= random_starts >= 1");

  TrialLog log;
  Rng start_rng(derive_seed(seed, "hpo-starts"));

  auto run_trial = [&](HyperConfig cfg) {
    Trial t;
    t.config = std::move(cfg);
    try {
      TrialOutcome outcome = objective(t.config);
      t.objective = outcome.objective;
      t.metrics = outcome.metrics;
      t.ok = std::isfinite(t.objective);
      if (!t.ok) {
        t.error = "non-finite objective";
        t.objective = -std::numeric_limits<double>::infinity();
      }
    } catch (const std::exception& e) {
      t.ok = false;
      t.error = e.what();
      t.objective = -std::numeric_limits<double>::infinity();
    }
    if (t.ok && (log.best_index < 0 ||
                 t.objective > log.trials[static_cast<size_t>(log.best_index)].objective))
      log.best_index = static_cast<int>(log.trials.size());
    log.trials.push_back(std::move(t));
  };

  for (int i = 0; i < random_starts; ++i) run_trial(sample_random_config(space, start_rng));

  for (int t = random_starts; t < budget; ++t) {
    Rng cand_rng(derive_seed(seed, "hpo-cand", static_cast<uint64_t>(t)));

    std::vector<std::vector<double>> xs;
    std::vector<double> ys;
    for (const Trial& tr : log.trials) {
      if (!tr.ok) continue;
      xs.push_back(normalize(space, tr.config));
      ys.push_back(tr.objective);
    }

    HyperConfig proposal;
    if (xs.size() >= 2) {
      Surrogate gp(xs, ys);
      double best_ei = -1.0;
      for (int c = 0; c < 1024; ++c) {
        HyperConfig cand = sample_random_config(space, cand_rng);
        double mu, sigma;
        gp.predict(normalize(space, cand), mu, sigma);
        double ei = expected_improvement(mu, sigma, gp.best_standardized());
        if (ei > best_ei) {
          best_ei = ei;
          proposal = std::move(cand);
        }
      }
    } else {
      proposal = sample_random_config(space, cand_rng);
    }

    int attempts = 0;
    while (is_duplicate(log.trials, proposal) && attempts < 10) {
      proposal = perturb(space, std::move(proposal), cand_rng);
      ++attempts;
    }
    if (is_duplicate(log.trials, proposal)) proposal = sample_random_config(space, cand_rng);

    run_trial(std::move(proposal));
  }
  return log;
}

namespace {
std::string metric_str(double v) {
  if (std::isnan(v)) return "";
  return format_double(v, 6);
}
}  // namespace

void write_trial_log_csv(const TrialLog& log, std::ostream& out) {
  std::vector<size_t> order(log.trials.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    const Trial& ta = log.trials[a];
    const Trial& tb = log.trials[b];
    if (ta.ok != tb.ok) return ta.ok;
    return ta.objective > tb.objective;
  });
  out << "rank,acc,pre,rec,f1,auc\n";
  int rank = 1;
  for (size_t idx : order) {
    const Trial& t = log.trials[idx];
    csv::write_row(out, {std::to_string(rank++), metric_str(t.metrics.acc),
                         metric_str(t.metrics.pre), metric_str(t.metrics.rec),
                         metric_str(t.metrics.f1),
                         t.ok ? format_double(t.objective, 6) : ""});
  }
}

void write_trial_configs_csv(const SearchSpace& space, const TrialLog& log, std::ostream& out) {
  std::vector<std::string> header = {"trial", "ok", "objective"};
  for (const ParamDesc& p : space.params) header.push_back(p.name);
  csv::write_row(out, header);
  for (size_t i = 0; i < log.trials.size(); ++i) {
    const Trial& t = log.trials[i];
    std::vector<std::string> row = {std::to_string(i), t.ok ? "1" : "0",
                                    t.ok ? format_double(t.objective, 6) : ""};
    for (size_t d = 0; d < t.config.size(); ++d) {
      const ParamDesc& p = space.params[d];
      if (p.kind == ParamKind::GridInt)
        row.push_back(std::to_string(static_cast<long long>(std::llround(t.config[d]))));
      else
        row.push_back(format_double(t.config[d], 8));
    }
    csv::write_row(out, row);
  }
}

}  // namespace habitlens::hpo
