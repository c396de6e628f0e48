#pragma once

#include <map>
#include <optional>
#include <ostream>

#include "habitlens/dataset.hpp"
#include "habitlens/events.hpp"
#include "habitlens/hpo.hpp"
#include "habitlens/metrics.hpp"
#include "habitlens/model.hpp"
#include "habitlens/train.hpp"

namespace habitlens::experiments {

enum class Regime { Global, Personal, FinetuneFull, FinetuneFrozen, BaselineLr };
const char* regime_name(Regime r);

struct ExperimentPlan {
  Regime regime = Regime::Global;
  nn::Arch arch = nn::Arch::Lstm;
  int seq_len = 20;
  bool same_day = false;
  bool weighted = false;
  int hpo_budget = 20;
  int hpo_random_starts = 5;
  uint64_t root_seed = 1;
  int max_epochs = 1000;
  int batch_size = 1024;
  int patience = 5;
  double finetune_lr = 1e-4;
  int jobs = 1;  // bound on the per-person worker pool
  std::optional<hpo::HyperConfig> fixed_config;  // pins hyperparameters, skips the search
};

/// A cohort with its per-user temporal splits, shared vocabulary and the
/// sequence dataset every regime consumes. Splits depend only on event
/// counts, so all regimes trained from one Env stay split-constant.
struct Env {
  ingest::CohortLog cohort;
  data::SplitFractions fractions;
  std::vector<data::SplitIndex> splits;
  data::Vocab vocab;
  data::SequenceDataset ds;
  uint64_t cohort_hash = 0;

  training::DataView view(data::Split split) const;
  training::DataView view(data::Split split, uint32_t user) const;
};

Env build_env(ingest::CohortLog cohort, int seq_len, bool same_day,
              data::SplitFractions fractions = {});

/// Materializes a model spec plus learning rate from a search-space point.
struct TrialSetup {
  nn::ModelSpec spec;
  double lr = 0.0;
};
TrialSetup setup_from_config(nn::Arch arch, const hpo::SearchSpace& space,
                             const hpo::HyperConfig& cfg, int vocab_size, int seq_len);

struct PersonEval {
  std::string user_id;
  metrics::EvalReport report;
};

struct AucSummary {
  metrics::SummaryDistribution dist;  // over persons with a defined AUC
  size_t undefined_excluded = 0;
};
AucSummary summarize_person_aucs(const std::vector<PersonEval>& evals);

struct GlobalResult {
  hpo::TrialLog trials;
  hpo::HyperConfig winner;
  nn::ModelSpec spec;
  nn::Parameters<float> params;
  training::FitHistory history;
  metrics::EvalReport pooled;
  std::vector<PersonEval> per_person;
  AucSummary auc_summary;
};

/// Hyperparameter search on pooled validation AUC; the winner is refit
/// deterministically and evaluated on the pooled test set and on every
/// person's test subset.
GlobalResult run_global(const Env& env, const ExperimentPlan& plan);

struct PersonalModel {
  std::string user_id;
  uint32_t user_index = 0;
  nn::ModelSpec spec;
  nn::Parameters<float> params;
  hpo::TrialLog trials;
  metrics::EvalReport report;  // own test set
};

struct PersonalResult {
  std::vector<PersonalModel> models;
  std::vector<std::pair<std::string, std::string>> skipped;  // user, reason
  AucSummary auc_summary;
};

/// Full search per person on person-level validation data, same splits as
/// the global run.
PersonalResult run_personal(const Env& env, const ExperimentPlan& plan);

struct FineTunePerson {
  std::string user_id;
  nn::ModelSpec spec;
  nn::Parameters<float> params;
  metrics::EvalReport report;
  double global_val_loss = 0.0;  // starting model on this person's validation set
  double tuned_val_loss = 0.0;
};

struct FineTuneResult {
  std::vector<FineTunePerson> persons;
  std::vector<std::pair<std::string, std::string>> skipped;
  AucSummary auc_summary;
};

FineTuneResult run_finetune_full(const Env& env, const ExperimentPlan& plan,
                                 const nn::ModelSpec& global_spec,
                                 const nn::Parameters<float>& global_params);

FineTuneResult run_finetune_frozen(const Env& env, const ExperimentPlan& plan,
                                   const nn::ModelSpec& global_spec,
                                   const nn::Parameters<float>& global_params);

struct CrossMatrix {
  std::vector<std::string> user_ids;
  Eigen::MatrixXd auc;  // NaN marks undefined entries
  double diagonal_mean = 0.0;
  double off_diagonal_mean = 0.0;
  bool off_diagonal_defined = false;
  size_t undefined_count = 0;
};

/// Evaluates every person-specific model on every person's test set.
CrossMatrix cross_generalization(const Env& env, const std::vector<PersonalModel>& models);

struct SweepPoint {
  int length = 0;
  double auc = 0.0;
};

/// Re-trains the pinned configuration at each sequence length and reports
/// pooled test AUC per length. Hyperparameters are reused from the L=20
/// winner rather than re-searched per length.
std::vector<SweepPoint> sequence_length_sweep(const ingest::CohortLog& cohort,
                                              const ExperimentPlan& plan,
                                              const hpo::HyperConfig& winner,
                                              std::span<const int> lengths);

struct NgramRow {
  std::vector<std::string> gram;
  double probability = 0.0;  // P(next event is social | this n-gram just occurred)
  size_t frequency = 0;      // occurrences that have a successor
};

struct NgramReport {
  int n = 3;
  std::vector<NgramRow> pooled;
  std::vector<std::pair<std::string, std::vector<NgramRow>>> per_user;
};

/// Sliding windows within each user (never across users, days may differ);
/// top_k by frequency, ties broken lexicographically.
NgramReport ngram_transition_report(const ingest::CohortLog& cohort, int n = 3,
                                    size_t top_k = 20);

struct UserStat {
  std::string user_id;
  size_t sessions = 0;
  size_t distinct_apps = 0;
  double social_fraction = 0.0;
};

struct StageDescriptives {
  size_t n_users = 0;
  size_t n_events = 0;
  metrics::SummaryDistribution sessions;
  metrics::SummaryDistribution distinct_apps;
  metrics::SummaryDistribution social_fraction;
  std::vector<UserStat> users;  // plot-ready per-user rows
};

struct AppShare {
  std::string app;
  double share_pre = 0.0, users_pre = 0.0;    // percent
  double share_post = 0.0, users_post = 0.0;  // percent
};

struct DescriptivesReport {
  StageDescriptives pre, post;
  std::vector<AppShare> apps;  // sorted by pre-cleaning session share
};

DescriptivesReport compute_descriptives(const ingest::CohortLog& pre,
                                        const ingest::CohortLog& post);

struct CorrelationRow {
  std::string regime;
  std::string arch;
  std::string measure;  // total_sessions | social_sessions | social_fraction
  std::optional<double> r;
  size_t n = 0;
};

struct AucSet {
  std::string regime;
  std::string arch;
  std::map<std::string, double> per_user_auc;
};

/// Pearson r of per-person AUC against frequency measures, one row per
/// (result set, measure). Requires at least 3 matched persons per set.
std::vector<CorrelationRow> predictability_frequency_correlations(
    const std::vector<AucSet>& auc_sets, const ingest::CohortLog& cohort);

// ------------------------------------------------------------- reports

void write_person_evals_csv(const std::vector<PersonEval>& evals, std::ostream& out);
void write_auc_summary_csv(const AucSummary& summary, std::ostream& out);
void write_cross_matrix_csv(const CrossMatrix& m, std::ostream& out);
void write_sweep_csv(const std::vector<SweepPoint>& points, std::ostream& out);
void write_ngram_csv(const std::vector<NgramRow>& rows, std::ostream& out);
void write_descriptives_csv(const DescriptivesReport& d, std::ostream& summary_out,
                            std::ostream& users_out, std::ostream& apps_out);
void write_correlations_csv(const std::vector<CorrelationRow>& rows, std::ostream& out);
void write_finetune_csv(const FineTuneResult& r, std::ostream& out);

}  // namespace habitlens::experiments
