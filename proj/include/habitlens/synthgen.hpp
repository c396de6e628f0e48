#pragma once

#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "habitlens/dataset.hpp"
#include "habitlens/events.hpp"

namespace habitlens::synth {

/// Controls for the synthetic habitual-user generator. An event stream is
/// a mixture of a first-order base chain and "motifs": short app chains
/// that, once triggered by their first app, continue with probability
/// habit_strength at every step and typically end in a social app.
struct SynthConfig {
  int n_users = 20;
  int days = 14;
  double sessions_per_day = 110.0;
  int vocab_size = 12;  // total apps including social ones
  int social_apps = 2;
  double habit_strength = 0.6;  // h: per-step motif continuation probability
  int motif_length = 3;         // full chain length including the terminal app
  int motifs_per_user = 2;
  double idiosyncrasy = 0.0;  // P(user draws private motifs+chain vs the shared pool)
  double base_skew = 0.0;     // 0 = uniform base rows; >0 adds first-order structure
  uint64_t seed = 1;
  // midnight-aligned so `days` of activity span exactly `days` UTC dates
  int64_t start_ms = 1610668800000;  // 2021-01-15T00:00:00Z

  void validate() const;
};

struct Motif {
  std::vector<int> apps;  // last entry is the terminal (social) app
};

struct UserModel {
  std::vector<double> base;   // vocab x vocab, row-major, rows sum to 1
  std::vector<Motif> motifs;  // distinct first apps, so triggering is unambiguous
};

struct GeneratorModel {
  int n_apps = 0;
  int n_social = 0;  // social apps occupy ids [n_apps - n_social, n_apps)
  double habit_strength = 0.0;
  std::vector<std::string> app_names;
  std::vector<std::string> user_ids;
  std::vector<UserModel> users;

  bool is_social(int app) const { return app >= n_apps - n_social; }
  int app_index(const std::string& name) const;  // -1 when unknown
  std::vector<std::string> social_app_names() const;
};

GeneratorModel build_generator(const SynthConfig& cfg);

struct UserEvents {
  std::vector<int64_t> ts;  // strictly increasing
  std::vector<int> app;
};

/// Exponential inter-arrivals at sessions_per_day, app choices from the
/// motif/base process. Deterministic per seed.
std::vector<UserEvents> generate_events(const GeneratorModel& model, const SynthConfig& cfg);

struct Cohort {
  GeneratorModel model;
  std::vector<UserEvents> events;
};

Cohort generate_cohort(const SynthConfig& cfg);

/// Ingest-compatible CSV (user_id,timestamp,app_id).
void write_cohort_csv(const GeneratorModel& model, const std::vector<UserEvents>& events,
                      std::ostream& out);

/// Ground-truth manifest (apps, per-user chains and motifs, seed) that
/// makes the oracle reproducible without the generator in memory.
void write_truth_json(const GeneratorModel& model, const SynthConfig& cfg, std::ostream& out);
GeneratorModel load_truth_json(std::istream& in);

/// Exact P(event t is social | events 0..t-1) for one user stream, with
/// the latent motif state marginalized by a forward pass.
std::vector<double> oracle_scores_stream(const GeneratorModel& model, size_t user_index,
                                         std::span<const int> apps);

/// Oracle scores aligned to dataset rows (matched on user id and target
/// timestamp). Throws when a row cannot be matched to the generator
/// output (model/dataset mismatch).
std::vector<double> oracle_scores_for_rows(const GeneratorModel& model,
                                           const ingest::CohortLog& cohort,
                                           const data::SequenceDataset& ds,
                                           std::span<const uint32_t> rows);

/// Rank AUC of oracle scores over the rows' labels; 0.5 when undefined.
double oracle_auc(const GeneratorModel& model, const ingest::CohortLog& cohort,
                  const data::SequenceDataset& ds, std::span<const uint32_t> rows);

}  // namespace habitlens::synth
