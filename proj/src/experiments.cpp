#include "habitlens/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "habitlens/csv.hpp"

namespace habitlens::experiments {

const char* regime_name(Regime r) {
  switch (r) {
    case Regime::Global: return "global";
    case Regime::Personal: return "personal";
    case Regime::FinetuneFull: return "finetune_full";
    case Regime::FinetuneFrozen: return "finetune_frozen";
    case Regime::BaselineLr: return "baseline_lr";
  }
  return "?";
}

training::DataView Env::view(data::Split split) const {
  return {&ds, data::rows_of(ds, split)};
}

training::DataView Env::view(data::Split split, uint32_t user) const {
  return {&ds, data::rows_of(ds, split, user)};
}

Env build_env(ingest::CohortLog cohort, int seq_len, bool same_day,
              data::SplitFractions fractions) {
  Env env;
  env.cohort = std::move(cohort);
  env.fractions = fractions;
  env.cohort_hash = ingest::cohort_content_hash(env.cohort);
  for (const ingest::UserLog& u : env.cohort.users)
    env.splits.push_back(data::temporal_split(u.events.size(), fractions));
  env.vocab = data::build_vocab(env.cohort, env.splits);
  env.ds = data::build_sequences(env.cohort, env.splits, env.vocab, seq_len, same_day);
  return env;
}

TrialSetup setup_from_config(nn::Arch arch, const hpo::SearchSpace& space,
                             const hpo::HyperConfig& cfg, int vocab_size, int seq_len) {
  auto value = [&](const char* name) {
    return cfg.at(static_cast<size_t>(space.index_of(name)));
  };
  TrialSetup ts;
  ts.spec.arch = arch;
  ts.spec.vocab_size = vocab_size;
  ts.spec.seq_len = seq_len;
  ts.spec.embed_dim = static_cast<int>(std::llround(value("embed_dim")));
  ts.spec.num_layers = static_cast<int>(std::llround(value("num_layers")));
  ts.spec.layer_units = static_cast<int>(std::llround(value("layer_units")));
  ts.spec.dense_units = static_cast<int>(std::llround(value("dense_units")));
  ts.spec.dropout_inner = value("dropout_inner");
  ts.spec.dropout_top = value("dropout_top");
  ts.spec.l1_layer = value("l1_layer");
  ts.spec.l2_layer = value("l2_layer");
  ts.spec.l1_dense = value("l1_dense");
  ts.spec.l2_dense = value("l2_dense");
  ts.lr = value("lr");
  ts.spec.validate();
  return ts;
}

AucSummary summarize_person_aucs(const std::vector<PersonEval>& evals) {
  std::vector<double> aucs;
  size_t undefined = 0;
  for (const PersonEval& e : evals) {
    if (e.report.auc)
      aucs.push_back(*e.report.auc);
    else
      ++undefined;
  }
  AucSummary s;
  s.undefined_excluded = undefined;
  if (!aucs.empty()) s.dist = metrics::summarize_distribution(aucs, undefined);
  return s;
}

namespace {

const hpo::SearchSpace& space_for(nn::Arch arch) {
  return arch == nn::Arch::Lstm ? hpo::SearchSpace::lstm() : hpo::SearchSpace::transformer();
}

training::TrainConfig train_config(const ExperimentPlan& plan, double lr, uint64_t seed) {
  training::TrainConfig tc;
  tc.max_epochs = plan.max_epochs;
  tc.batch_size = plan.batch_size;
  tc.patience = plan.patience;
  tc.lr = lr;
  tc.shuffle_seed = seed;
  tc.weighted = plan.weighted;
  return tc;
}

hpo::TrialMetrics metrics_of(const metrics::EvalReport& r) {
  return {r.accuracy, r.precision, r.recall, r.f1};
}

std::vector<PersonEval> per_person_reports(const Env& env, const nn::ModelSpec& spec,
                                           const nn::Parameters<float>& params,
                                           const training::DataView& test_view,
                                           const Eigen::VectorXd& probs) {
  // group the already-computed pooled test predictions by user
  std::map<uint32_t, std::pair<std::vector<double>, std::vector<int>>> grouped;
  for (size_t i = 0; i < test_view.rows.size(); ++i) {
    uint32_t r = test_view.rows[i];
    auto& g = grouped[env.ds.user_index[r]];
    g.first.push_back(probs(static_cast<Eigen::Index>(i)));
    g.second.push_back(env.ds.targets[r]);
  }
  (void)spec;
  (void)params;
  std::vector<PersonEval> out;
  for (auto& [user, g] : grouped)
    out.push_back({env.ds.user_ids[user], metrics::evaluate(g.first, g.second)});
  return out;
}

}  // namespace

GlobalResult run_global(const Env& env, const ExperimentPlan& plan) {
  const hpo::SearchSpace& space = space_for(plan.arch);
  training::DataView train_view = env.view(data::Split::Train);
  training::DataView val_view = env.view(data::Split::Val);
  training::DataView test_view = env.view(data::Split::Test);

  GlobalResult result;
  int trial_no = 0;
  std::vector<uint64_t> trial_seeds;
  auto run_config = [&](const hpo::HyperConfig& cfg, uint64_t seed) {
    TrialSetup ts = setup_from_config(plan.arch, space, cfg, env.vocab.size(), env.ds.seq_len);
    return training::fit_from_spec(ts.spec, derive_seed(seed, "init"), train_view, val_view,
                                   train_config(plan, ts.lr, seed));
  };

  if (plan.fixed_config) {
    result.winner = *plan.fixed_config;
    uint64_t seed = derive_seed(plan.root_seed, "global-trial", 0);
    trial_seeds.push_back(seed);
    training::FitResult fr = run_config(result.winner, seed);
    metrics::EvalReport val_report = training::evaluate_view(fr.spec, fr.params, val_view,
                                                             plan.batch_size);
    hpo::Trial trial;
    trial.config = result.winner;
    trial.objective = val_report.auc.value_or(0.5);
    trial.ok = true;
    trial.metrics = metrics_of(val_report);
    result.trials.trials.push_back(trial);
    result.trials.best_index = 0;
    result.spec = fr.spec;
    result.params = std::move(fr.params);
    result.history = fr.history;
  } else {
    hpo::ObjectiveFn objective = [&](const hpo::HyperConfig& cfg) {
      uint64_t seed = derive_seed(plan.root_seed, "global-trial",
                                  static_cast<uint64_t>(trial_no++));
      trial_seeds.push_back(seed);
      training::FitResult fr = run_config(cfg, seed);
      metrics::EvalReport val_report =
          training::evaluate_view(fr.spec, fr.params, val_view, plan.batch_size);
      hpo::TrialOutcome out;
      out.objective = val_report.auc.value_or(0.5);
      out.metrics = metrics_of(val_report);
      return out;
    };
    result.trials = hpo::bayesian_search(space, objective, plan.hpo_budget,
                                         plan.hpo_random_starts,
                                         derive_seed(plan.root_seed, "global-search"));
    result.winner = result.trials.best().config;
    // deterministic refit of the winning trial
    uint64_t seed = trial_seeds.at(static_cast<size_t>(result.trials.best_index));
    training::FitResult fr = run_config(result.winner, seed);
    result.spec = fr.spec;
    result.params = std::move(fr.params);
    result.history = fr.history;
  }

  Eigen::VectorXd probs = training::predict(result.spec, result.params, test_view,
                                            plan.batch_size);
  std::vector<double> scores(probs.data(), probs.data() + probs.size());
  result.pooled = metrics::evaluate(scores, test_view.labels_int());
  result.per_person = per_person_reports(env, result.spec, result.params, test_view, probs);
  result.auc_summary = summarize_person_aucs(result.per_person);
  return result;
}

PersonalResult run_personal(const Env& env, const ExperimentPlan& plan) {
  const hpo::SearchSpace& space = space_for(plan.arch);
  const size_t n_users = env.cohort.users.size();
  std::vector<std::optional<PersonalModel>> slots(n_users);
  std::vector<std::optional<std::pair<std::string, std::string>>> skipped(n_users);

  parallel_for(n_users, plan.jobs, [&](size_t ui) {
    const uint32_t u = static_cast<uint32_t>(ui);
    const std::string& user_id = env.cohort.users[u].user_id;
    training::DataView train_view = env.view(data::Split::Train, u);
    training::DataView val_view = env.view(data::Split::Val, u);
    training::DataView test_view = env.view(data::Split::Test, u);
    try {
      int trial_no = 0;
      std::vector<uint64_t> trial_seeds;
      auto run_config = [&](const hpo::HyperConfig& cfg, uint64_t seed) {
        TrialSetup ts =
            setup_from_config(plan.arch, space, cfg, env.vocab.size(), env.ds.seq_len);
        return training::fit_from_spec(ts.spec, derive_seed(seed, "init"), train_view, val_view,
                                       train_config(plan, ts.lr, seed));
      };

      PersonalModel pm;
      pm.user_id = user_id;
      pm.user_index = u;
      if (plan.fixed_config) {
        uint64_t seed = derive_seed(plan.root_seed, "personal-trial", u);
        training::FitResult fr = run_config(*plan.fixed_config, seed);
        pm.spec = fr.spec;
        pm.params = std::move(fr.params);
        hpo::Trial trial;
        trial.config = *plan.fixed_config;
        trial.ok = true;
        trial.objective =
            training::evaluate_view(pm.spec, pm.params, val_view, plan.batch_size)
                .auc.value_or(0.5);
        pm.trials.trials.push_back(trial);
        pm.trials.best_index = 0;
      } else {
        hpo::ObjectiveFn objective = [&](const hpo::HyperConfig& cfg) {
          uint64_t seed = derive_seed(plan.root_seed, "personal-trial",
                                      (static_cast<uint64_t>(u) << 32) |
                                          static_cast<uint64_t>(trial_no++));
          trial_seeds.push_back(seed);
          training::FitResult fr = run_config(cfg, seed);
          metrics::EvalReport val_report =
              training::evaluate_view(fr.spec, fr.params, val_view, plan.batch_size);
          hpo::TrialOutcome out;
          out.objective = val_report.auc.value_or(0.5);
          out.metrics = metrics_of(val_report);
          return out;
        };
        pm.trials = hpo::bayesian_search(space, objective, plan.hpo_budget,
                                         plan.hpo_random_starts,
                                         derive_seed(plan.root_seed, "personal-search", u));
        uint64_t seed = trial_seeds.at(static_cast<size_t>(pm.trials.best_index));
        training::FitResult fr = run_config(pm.trials.best().config, seed);
        pm.spec = fr.spec;
        pm.params = std::move(fr.params);
      }
      pm.report = training::evaluate_view(pm.spec, pm.params, test_view, plan.batch_size);
      slots[ui] = std::move(pm);
    } catch (const std::exception& e) {
      skipped[ui] = {user_id, e.what()};
    }
  });

  PersonalResult result;
  for (size_t ui = 0; ui < n_users; ++ui) {
    if (slots[ui]) result.models.push_back(std::move(*slots[ui]));
    if (skipped[ui]) result.skipped.push_back(std::move(*skipped[ui]));
  }
  std::vector<PersonEval> evals;
  for (const PersonalModel& m : result.models) evals.push_back({m.user_id, m.report});
  result.auc_summary = summarize_person_aucs(evals);
  return result;
}

namespace {

FineTuneResult run_finetune_impl(
    const Env& env, const ExperimentPlan& plan, const nn::ModelSpec& global_spec,
    const nn::Parameters<float>& global_params,
    const std::function<std::pair<nn::ModelSpec, nn::Parameters<float>>(
        uint32_t, const training::DataView&, const training::DataView&)>& tune_one) {
  const size_t n_users = env.cohort.users.size();
  std::vector<std::optional<FineTunePerson>> slots(n_users);
  std::vector<std::optional<std::pair<std::string, std::string>>> skipped(n_users);

  parallel_for(n_users, plan.jobs, [&](size_t ui) {
    const uint32_t u = static_cast<uint32_t>(ui);
    const std::string& user_id = env.cohort.users[u].user_id;
    try {
      training::DataView train_view = env.view(data::Split::Train, u);
      training::DataView val_view = env.view(data::Split::Val, u);
      training::DataView test_view = env.view(data::Split::Test, u);

      auto [spec, params] = tune_one(u, train_view, val_view);

      FineTunePerson person;
      person.user_id = user_id;
      person.spec = spec;
      person.global_val_loss = training::validation_bce(global_spec, global_params, val_view,
                                                        {1.0, 1.0}, plan.batch_size);
      person.tuned_val_loss =
          training::validation_bce(spec, params, val_view, {1.0, 1.0}, plan.batch_size);
      person.report = training::evaluate_view(spec, params, test_view, plan.batch_size);
      person.params = std::move(params);
      slots[ui] = std::move(person);
    } catch (const std::exception& e) {
      skipped[ui] = {user_id, e.what()};
    }
  });

  FineTuneResult result;
  for (size_t ui = 0; ui < n_users; ++ui) {
    if (slots[ui]) result.persons.push_back(std::move(*slots[ui]));
    if (skipped[ui]) result.skipped.push_back(std::move(*skipped[ui]));
  }
  std::vector<PersonEval> evals;
  for (const FineTunePerson& p : result.persons) evals.push_back({p.user_id, p.report});
  result.auc_summary = summarize_person_aucs(evals);
  return result;
}

}  // namespace

FineTuneResult run_finetune_full(const Env& env, const ExperimentPlan& plan,
                                 const nn::ModelSpec& global_spec,
                                 const nn::Parameters<float>& global_params) {
  return run_finetune_impl(
      env, plan, global_spec, global_params,
      [&](uint32_t u, const training::DataView& train_view, const training::DataView& val_view) {
        training::TrainConfig tc =
            train_config(plan, plan.finetune_lr, derive_seed(plan.root_seed, "finetune", u));
        training::FitResult fr =
            training::fine_tune_full(global_spec, global_params, train_view, val_view, tc);
        return std::make_pair(fr.spec, std::move(fr.params));
      });
}

FineTuneResult run_finetune_frozen(const Env& env, const ExperimentPlan& plan,
                                   const nn::ModelSpec& global_spec,
                                   const nn::Parameters<float>& global_params) {
  return run_finetune_impl(
      env, plan, global_spec, global_params,
      [&](uint32_t u, const training::DataView& train_view, const training::DataView& val_view) {
        training::TrainConfig tc =
            train_config(plan, plan.finetune_lr, derive_seed(plan.root_seed, "frozen", u));
        training::FrozenFineTuneResult fr = training::fine_tune_frozen(
            global_spec, global_params, train_view, val_view, plan.hpo_budget,
            plan.hpo_random_starts, derive_seed(plan.root_seed, "frozen-user", u), tc);
        return std::make_pair(fr.spec, std::move(fr.params));
      });
}

CrossMatrix cross_generalization(const Env& env, const std::vector<PersonalModel>& models) {
  CrossMatrix m;
  const size_t n = models.size();
  m.auc = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n),
                                    std::numeric_limits<double>::quiet_NaN());
  for (const PersonalModel& pm : models) m.user_ids.push_back(pm.user_id);

  // score each model once over the pooled test rows, then slice per user
  training::DataView test_view = env.view(data::Split::Test);
  std::vector<int> labels = test_view.labels_int();
  std::map<uint32_t, std::vector<size_t>> rows_by_user;
  for (size_t i = 0; i < test_view.rows.size(); ++i)
    rows_by_user[env.ds.user_index[test_view.rows[i]]].push_back(i);

  double diag_sum = 0.0, off_sum = 0.0;
  size_t diag_n = 0, off_n = 0;
  for (size_t i = 0; i < n; ++i) {
    Eigen::VectorXd probs =
        training::predict(models[i].spec, models[i].params, test_view, 1024);
    for (size_t j = 0; j < n; ++j) {
      auto it = rows_by_user.find(models[j].user_index);
      if (it == rows_by_user.end()) continue;
      std::vector<double> scores;
      std::vector<int> sub_labels;
      scores.reserve(it->second.size());
      for (size_t idx : it->second) {
        scores.push_back(probs(static_cast<Eigen::Index>(idx)));
        sub_labels.push_back(labels[idx]);
      }
      auto auc = metrics::roc_auc(scores, sub_labels);
      if (!auc) {
        ++m.undefined_count;
        continue;
      }
      m.auc(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = *auc;
      if (i == j) {
        diag_sum += *auc;
        ++diag_n;
      } else {
        off_sum += *auc;
        ++off_n;
      }
    }
  }
  if (diag_n) m.diagonal_mean = diag_sum / static_cast<double>(diag_n);
  m.off_diagonal_defined = off_n > 0;
  if (off_n) m.off_diagonal_mean = off_sum / static_cast<double>(off_n);
  return m;
}

std::vector<SweepPoint> sequence_length_sweep(const ingest::CohortLog& cohort,
                                              const ExperimentPlan& plan,
                                              const hpo::HyperConfig& winner,
                                              std::span<const int> lengths) {
  const hpo::SearchSpace& space = space_for(plan.arch);
  std::vector<SweepPoint> points;
  for (int L : lengths) {
    Env env = build_env(cohort, L, plan.same_day);
    TrialSetup ts = setup_from_config(plan.arch, space, winner, env.vocab.size(), L);
    uint64_t seed = derive_seed(plan.root_seed, "sweep", static_cast<uint64_t>(L));
    training::FitResult fr =
        training::fit_from_spec(ts.spec, derive_seed(seed, "init"), env.view(data::Split::Train),
                                env.view(data::Split::Val), train_config(plan, ts.lr, seed));
    metrics::EvalReport report = training::evaluate_view(
        fr.spec, fr.params, env.view(data::Split::Test), plan.batch_size);
    points.push_back({L, report.auc.value_or(0.5)});
  }
  return points;
}

NgramReport ngram_transition_report(const ingest::CohortLog& cohort, int n, size_t top_k) {
  if (n < 1) throw std::invalid_argument("ngram_transition_report: n must be >= 1");
  NgramReport report;
  report.n = n;

  using Counts = std::map<std::vector<std::string>, std::pair<size_t, size_t>>;  // freq, social
  Counts pooled;
  auto top_rows = [&](const Counts& counts) {
    std::vector<NgramRow> rows;
    for (const auto& [gram, c] : counts)
      rows.push_back({gram, static_cast<double>(c.second) / static_cast<double>(c.first),
                      c.first});
    std::sort(rows.begin(), rows.end(), [](const NgramRow& a, const NgramRow& b) {
      if (a.frequency != b.frequency) return a.frequency > b.frequency;
      return a.gram < b.gram;
    });
    if (rows.size() > top_k) rows.resize(top_k);
    return rows;
  };

  for (const ingest::UserLog& user : cohort.users) {
    Counts mine;
    const size_t len = user.events.size();
    if (len >= static_cast<size_t>(n) + 1) {
      std::vector<std::string> gram(static_cast<size_t>(n));
      for (size_t i = 0; i + static_cast<size_t>(n) < len; ++i) {
        for (size_t k = 0; k < static_cast<size_t>(n); ++k) gram[k] = user.events[i + k].app_id;
        bool social = user.social[i + static_cast<size_t>(n)] != 0;
        auto& mc = mine[gram];
        ++mc.first;
        mc.second += social;
        auto& pc = pooled[gram];
        ++pc.first;
        pc.second += social;
      }
    }
    report.per_user.push_back({user.user_id, top_rows(mine)});
  }
  report.pooled = top_rows(pooled);
  return report;
}

namespace {

StageDescriptives stage_descriptives(const ingest::CohortLog& cohort) {
  StageDescriptives s;
  s.n_users = cohort.users.size();
  std::vector<double> sessions, distinct, social;
  for (const ingest::UserLog& u : cohort.users) {
    s.n_events += u.sessions;
    sessions.push_back(static_cast<double>(u.sessions));
    distinct.push_back(static_cast<double>(u.distinct_apps));
    social.push_back(u.social_fraction);
    s.users.push_back({u.user_id, u.sessions, u.distinct_apps, u.social_fraction});
  }
  if (!sessions.empty()) {
    s.sessions = metrics::summarize_distribution(sessions);
    s.distinct_apps = metrics::summarize_distribution(distinct);
    s.social_fraction = metrics::summarize_distribution(social);
  }
  return s;
}

}  // namespace

DescriptivesReport compute_descriptives(const ingest::CohortLog& pre,
                                        const ingest::CohortLog& post) {
  DescriptivesReport d;
  d.pre = stage_descriptives(pre);
  d.post = stage_descriptives(post);

  struct Share {
    size_t sessions = 0;
    size_t users = 0;
  };
  auto shares = [](const ingest::CohortLog& cohort) {
    std::map<std::string, Share> by_app;
    for (const ingest::UserLog& u : cohort.users) {
      std::set<std::string> seen;
      for (const ingest::AppEvent& ev : u.events) {
        ++by_app[ev.app_id].sessions;
        seen.insert(ev.app_id);
      }
      for (const std::string& app : seen) ++by_app[app].users;
    }
    return by_app;
  };
  auto pre_shares = shares(pre);
  auto post_shares = shares(post);

  std::set<std::string> apps;
  for (const auto& [app, share] : pre_shares) apps.insert(app);
  for (const auto& [app, share] : post_shares) apps.insert(app);
  for (const std::string& app : apps) {
    AppShare row;
    row.app = app;
    if (auto it = pre_shares.find(app); it != pre_shares.end() && d.pre.n_events > 0) {
      row.share_pre = 100.0 * static_cast<double>(it->second.sessions) /
                      static_cast<double>(d.pre.n_events);
      row.users_pre =
          100.0 * static_cast<double>(it->second.users) / static_cast<double>(d.pre.n_users);
    }
    if (auto it = post_shares.find(app); it != post_shares.end() && d.post.n_events > 0) {
      row.share_post = 100.0 * static_cast<double>(it->second.sessions) /
                       static_cast<double>(d.post.n_events);
      row.users_post =
          100.0 * static_cast<double>(it->second.users) / static_cast<double>(d.post.n_users);
    }
    d.apps.push_back(std::move(row));
  }
  std::sort(d.apps.begin(), d.apps.end(), [](const AppShare& a, const AppShare& b) {
    if (a.share_pre != b.share_pre) return a.share_pre > b.share_pre;
    return a.app < b.app;
  });
  return d;
}

std::vector<CorrelationRow> predictability_frequency_correlations(
    const std::vector<AucSet>& auc_sets, const ingest::CohortLog& cohort) {
  std::map<std::string, const ingest::UserLog*> users;
  for (const ingest::UserLog& u : cohort.users) users[u.user_id] = &u;

  std::vector<CorrelationRow> rows;
  for (const AucSet& set : auc_sets) {
    std::vector<double> auc, total, social_n, social_frac;
    for (const auto& [user_id, value] : set.per_user_auc) {
      auto it = users.find(user_id);
      if (it == users.end()) continue;
      auc.push_back(value);
      total.push_back(static_cast<double>(it->second->sessions));
      social_n.push_back(static_cast<double>(it->second->social_sessions));
      social_frac.push_back(it->second->social_fraction);
    }
    auto add = [&](const char* measure, const std::vector<double>& x) {
      CorrelationRow row;
      row.regime = set.regime;
      row.arch = set.arch;
      row.measure = measure;
      row.n = auc.size();
      if (auc.size() >= 3) row.r = metrics::pearson_r(auc, x);
      rows.push_back(std::move(row));
    };
    add("total_sessions", total);
    add("social_sessions", social_n);
    add("social_fraction", social_frac);
  }
  return rows;
}

// ------------------------------------------------------------- reports

void write_person_evals_csv(const std::vector<PersonEval>& evals, std::ostream& out) {
  out << "user_id,auc,acc,pre,rec,f1,n,positive_fraction\n";
  for (const PersonEval& e : evals) {
    csv::write_row(out, {e.user_id, e.report.auc ? format_double(*e.report.auc, 6) : "",
                         format_double(e.report.accuracy, 6),
                         format_double(e.report.precision, 6),
                         format_double(e.report.recall, 6), format_double(e.report.f1, 6),
                         std::to_string(e.report.n),
                         format_double(e.report.positive_fraction, 6)});
  }
}

void write_auc_summary_csv(const AucSummary& summary, std::ostream& out) {
  out << "stat,value\n";
  const metrics::SummaryDistribution& d = summary.dist;
  csv::write_row(out, {"mean", format_double(d.mean, 6)});
  csv::write_row(out, {"std", format_double(d.sd, 6)});
  csv::write_row(out, {"min", format_double(d.min, 6)});
  csv::write_row(out, {"25%", format_double(d.q25, 6)});
  csv::write_row(out, {"50%", format_double(d.median, 6)});
  csv::write_row(out, {"75%", format_double(d.q75, 6)});
  csv::write_row(out, {"max", format_double(d.max, 6)});
  csv::write_row(out, {"n", std::to_string(d.n)});
  csv::write_row(out, {"undefined_excluded", std::to_string(summary.undefined_excluded)});
}

void write_cross_matrix_csv(const CrossMatrix& m, std::ostream& out) {
  std::vector<std::string> header = {"model_user"};
  for (const std::string& u : m.user_ids) header.push_back(u);
  csv::write_row(out, header);
  for (size_t i = 0; i < m.user_ids.size(); ++i) {
    std::vector<std::string> row = {m.user_ids[i]};
    for (size_t j = 0; j < m.user_ids.size(); ++j) {
      double v = m.auc(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      row.push_back(std::isnan(v) ? "" : format_double(v, 6));
    }
    csv::write_row(out, row);
  }
}

void write_sweep_csv(const std::vector<SweepPoint>& points, std::ostream& out) {
  out << "length,auc\n";
  for (const SweepPoint& p : points)
    csv::write_row(out, {std::to_string(p.length), format_double(p.auc, 6)});
}

void write_ngram_csv(const std::vector<NgramRow>& rows, std::ostream& out) {
  out << "ngram,transition_probability,frequency\n";
  for (const NgramRow& r : rows) {
    std::string gram;
    for (size_t i = 0; i < r.gram.size(); ++i) {
      if (i) gram += ", ";
      gram += r.gram[i];
    }
    csv::write_row(out, {gram, format_double(r.probability, 2), std::to_string(r.frequency)});
  }
}

namespace {
void write_stage_rows(const char* stage, const StageDescriptives& s, std::ostream& out) {
  auto row = [&](const char* measure, const metrics::SummaryDistribution& d) {
    csv::write_row(out, {stage, measure, format_double(d.mean, 4), format_double(d.median, 4),
                         format_double(d.sd, 4), format_double(d.min, 4),
                         format_double(d.max, 4)});
  };
  row("sessions", s.sessions);
  row("distinct_apps", s.distinct_apps);
  row("social_fraction", s.social_fraction);
}
}  // namespace

void write_descriptives_csv(const DescriptivesReport& d, std::ostream& summary_out,
                            std::ostream& users_out, std::ostream& apps_out) {
  summary_out << "stage,measure,mean,median,sd,min,max\n";
  write_stage_rows("pre", d.pre, summary_out);
  write_stage_rows("post", d.post, summary_out);

  users_out << "stage,user_id,sessions,distinct_apps,social_fraction\n";
  for (const UserStat& u : d.pre.users)
    csv::write_row(users_out, {"pre", u.user_id, std::to_string(u.sessions),
                               std::to_string(u.distinct_apps),
                               format_double(u.social_fraction, 6)});
  for (const UserStat& u : d.post.users)
    csv::write_row(users_out, {"post", u.user_id, std::to_string(u.sessions),
                               std::to_string(u.distinct_apps),
                               format_double(u.social_fraction, 6)});

  apps_out << "app,share_pre,users_pre,share_post,users_post\n";
  for (const AppShare& a : d.apps)
    csv::write_row(apps_out, {a.app, format_double(a.share_pre, 4),
                              format_double(a.users_pre, 4), format_double(a.share_post, 4),
                              format_double(a.users_post, 4)});
}

void write_correlations_csv(const std::vector<CorrelationRow>& rows, std::ostream& out) {
  out << "regime,arch,measure,r,n\n";
  for (const CorrelationRow& r : rows)
    csv::write_row(out, {r.regime, r.arch, r.measure, r.r ? format_double(*r.r, 6) : "",
                         std::to_string(r.n)});
}

void write_finetune_csv(const FineTuneResult& r, std::ostream& out) {
  out << "user_id,auc,acc,pre,rec,f1,global_val_loss,tuned_val_loss\n";
  for (const FineTunePerson& p : r.persons) {
    csv::write_row(out, {p.user_id, p.report.auc ? format_double(*p.report.auc, 6) : "",
                         format_double(p.report.accuracy, 6),
                         format_double(p.report.precision, 6),
                         format_double(p.report.recall, 6), format_double(p.report.f1, 6),
                         format_double(p.global_val_loss, 6),
                         format_double(p.tuned_val_loss, 6)});
  }
}

}  // namespace habitlens::experiments
