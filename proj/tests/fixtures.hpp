#pragma once

// Shared synthetic fixtures: run generator output through the real ingest
// path so tests exercise the same pipeline the CLI uses.

#include <sstream>

#include "habitlens/experiments.hpp"
#include "habitlens/synthgen.hpp"

namespace fixtures {

using namespace habitlens;

struct SynthEnv {
  synth::GeneratorModel model;
  experiments::Env env;
};

inline ingest::CohortLog cohort_from_model(const synth::GeneratorModel& model,
                                           const std::vector<synth::UserEvents>& events,
                                           size_t min_sessions = 1) {
  std::ostringstream csv;
  synth::write_cohort_csv(model, events, csv);
  std::istringstream in(csv.str());
  ingest::ParseResult parsed = ingest::parse_log_file(in, ingest::LogFormat::Csv);
  ingest::CleanResult cleaned = ingest::clean_events(parsed.events, ingest::CleaningConfig{});
  ingest::CohortConfig cfg;
  cfg.min_days = 1;
  cfg.truncate_days = 100000;
  cfg.min_sessions = min_sessions;
  cfg.min_social_fraction = 0.0;
  std::vector<std::string> social = model.social_app_names();
  cfg.social_apps = {social.begin(), social.end()};
  return ingest::filter_and_truncate_users(cleaned.events, cfg);
}

inline SynthEnv make_env(const synth::SynthConfig& cfg, int seq_len) {
  SynthEnv out;
  synth::Cohort cohort = synth::generate_cohort(cfg);
  out.model = cohort.model;
  out.env = experiments::build_env(cohort_from_model(cohort.model, cohort.events), seq_len,
                                   false);
  return out;
}

inline SynthEnv make_env_from_model(const synth::GeneratorModel& model,
                                    const synth::SynthConfig& cfg, int seq_len) {
  SynthEnv out;
  out.model = model;
  std::vector<synth::UserEvents> events = synth::generate_events(model, cfg);
  out.env = experiments::build_env(cohort_from_model(model, events), seq_len, false);
  return out;
}

/// Generator with explicit motifs and a uniform base chain; when
/// base_excludes_social is set, social events can only arise from motif
/// completions, which places the oracle ceiling near 1.
inline synth::GeneratorModel manual_model(int n_apps, int n_social, double h,
                                          std::vector<synth::Motif> motifs,
                                          bool base_excludes_social = false, int n_users = 1) {
  synth::GeneratorModel m;
  m.n_apps = n_apps;
  m.n_social = n_social;
  m.habit_strength = h;
  char buf[32];
  for (int a = 0; a < n_apps - n_social; ++a) {
    std::snprintf(buf, sizeof(buf), "app_%02d", a);
    m.app_names.push_back(buf);
  }
  for (int a = 0; a < n_social; ++a) {
    std::snprintf(buf, sizeof(buf), "social_%02d", a);
    m.app_names.push_back(buf);
  }
  synth::UserModel um;
  um.motifs = std::move(motifs);
  int regular = n_apps - n_social;
  for (int r = 0; r < n_apps; ++r)
    for (int c = 0; c < n_apps; ++c) {
      double p;
      if (base_excludes_social)
        p = c < regular ? 1.0 / regular : 0.0;
      else
        p = 1.0 / n_apps;
      um.base.push_back(p);
    }
  for (int u = 0; u < n_users; ++u) {
    std::snprintf(buf, sizeof(buf), "u%03d", u);
    m.user_ids.push_back(buf);
    m.users.push_back(um);
  }
  return m;
}

/// Hyperparameter point for the model spaces: modest capacity, mild
/// penalties, a learning rate that converges quickly at desk scale.
inline hpo::HyperConfig pinned_config(const hpo::SearchSpace& space) {
  hpo::HyperConfig cfg(space.params.size());
  auto set = [&](const char* name, double v) {
    cfg[static_cast<size_t>(space.index_of(name))] = v;
  };
  set("embed_dim", 10);
  set("num_layers", 1);
  set("layer_units", 16);
  set("dropout_inner", 0.2);
  set("l1_layer", 1e-5);
  set("l2_layer", 1e-4);
  set("dense_units", 16);
  set("l1_dense", 1e-5);
  set("l2_dense", 1e-4);
  set("dropout_top", 0.2);
  set("lr", 3e-3);
  return cfg;
}

}  // namespace fixtures
