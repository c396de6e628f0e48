#include "habitlens/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "habitlens/common.hpp"
#include "habitlens/csv.hpp"
#include "habitlens/metrics.hpp"
#include "json.hpp"

namespace habitlens::synth {

void SynthConfig::validate() const {
  if (n_users < 1 || days < 1) throw std::invalid_argument("SynthConfig: users/days must be >= 1");
  if (sessions_per_day <= 0) throw std::invalid_argument("SynthConfig: sessions_per_day <= 0");
  if (social_apps < 1) throw std::invalid_argument("SynthConfig: need at least one social app");
  if (vocab_size <= social_apps)
    throw std::invalid_argument("SynthConfig: vocab must exceed social app count");
  if (motif_length < 1) throw std::invalid_argument("SynthConfig: motif_length must be >= 1");
  if (habit_strength < 0 || habit_strength > 1 || idiosyncrasy < 0 || idiosyncrasy > 1)
    throw std::invalid_argument("SynthConfig: probabilities must lie in [0,1]");
  if (motifs_per_user < 0 || motifs_per_user > vocab_size - social_apps)
    throw std::invalid_argument("SynthConfig: motifs_per_user exceeds distinct trigger apps");
}

int GeneratorModel::app_index(const std::string& name) const {
  for (size_t i = 0; i < app_names.size(); ++i)
    if (app_names[i] == name) return static_cast<int>(i);
  return -1;
}

std::vector<std::string> GeneratorModel::social_app_names() const {
  std::vector<std::string> out;
  for (int a = n_apps - n_social; a < n_apps; ++a) out.push_back(app_names[a]);
  return out;
}

namespace {

std::vector<double> make_base_row(int v, double skew, Rng& rng) {
  std::vector<double> row(static_cast<size_t>(v));
  if (skew <= 0.0) {
    std::fill(row.begin(), row.end(), 1.0 / static_cast<double>(v));
    return row;
  }
  double sum = 0.0;
  for (double& x : row) {
    x = std::exp(skew * rng.normal());
    sum += x;
  }
  for (double& x : row) x /= sum;
  return row;
}

std::vector<Motif> make_motifs(const SynthConfig& cfg, Rng& rng) {
  std::vector<Motif> motifs;
  if (cfg.motif_length < 2 || cfg.motifs_per_user == 0) return motifs;
  const int n_regular = cfg.vocab_size - cfg.social_apps;
  std::vector<uint8_t> first_used(static_cast<size_t>(n_regular), 0);
  for (int m = 0; m < cfg.motifs_per_user; ++m) {
    Motif motif;
    int first;
    do {
      first = static_cast<int>(rng.uniform_int(0, n_regular - 1));
    } while (first_used[static_cast<size_t>(first)]);
    first_used[static_cast<size_t>(first)] = 1;
    motif.apps.push_back(first);
    for (int p = 1; p < cfg.motif_length - 1; ++p)
      motif.apps.push_back(static_cast<int>(rng.uniform_int(0, n_regular - 1)));
    motif.apps.push_back(
        static_cast<int>(rng.uniform_int(n_regular, cfg.vocab_size - 1)));  // terminal social
    motifs.push_back(std::move(motif));
  }
  return motifs;
}

std::vector<double> make_base(const SynthConfig& cfg, Rng& rng) {
  std::vector<double> base;
  base.reserve(static_cast<size_t>(cfg.vocab_size) * cfg.vocab_size);
  for (int r = 0; r < cfg.vocab_size; ++r) {
    auto row = make_base_row(cfg.vocab_size, cfg.base_skew, rng);
    base.insert(base.end(), row.begin(), row.end());
  }
  return base;
}

}  // namespace

GeneratorModel build_generator(const SynthConfig& cfg) {
  cfg.validate();
  GeneratorModel model;
  model.n_apps = cfg.vocab_size;
  model.n_social = cfg.social_apps;
  model.habit_strength = cfg.habit_strength;

  const int n_regular = cfg.vocab_size - cfg.social_apps;
  char buf[32];
  for (int a = 0; a < n_regular; ++a) {
    std::snprintf(buf, sizeof(buf), "app_%02d", a);
    model.app_names.push_back(buf);
  }
  for (int a = 0; a < cfg.social_apps; ++a) {
    std::snprintf(buf, sizeof(buf), "social_%02d", a);
    model.app_names.push_back(buf);
  }

  Rng pool_rng(derive_seed(cfg.seed, "synth-pool"));
  const std::vector<Motif> pool_motifs = make_motifs(cfg, pool_rng);
  const std::vector<double> pool_base = make_base(cfg, pool_rng);

  for (int u = 0; u < cfg.n_users; ++u) {
    std::snprintf(buf, sizeof(buf), "u%03d", u);
    model.user_ids.push_back(buf);
    Rng user_rng(derive_seed(cfg.seed, "synth-user", static_cast<uint64_t>(u)));
    UserModel um;
    if (user_rng.bernoulli(cfg.idiosyncrasy)) {
      um.motifs = make_motifs(cfg, user_rng);
      um.base = make_base(cfg, user_rng);
    } else {
      um.motifs = pool_motifs;
      um.base = pool_base;
    }
    model.users.push_back(std::move(um));
  }
  return model;
}

namespace {

int sample_row(const std::vector<double>& base, int v, int prev, Rng& rng) {
  double u = rng.uniform01();
  const double* row = base.data() + static_cast<size_t>(prev) * v;
  double acc = 0.0;
  for (int a = 0; a < v; ++a) {
    acc += row[a];
    if (u < acc) return a;
  }
  return v - 1;
}

/// first-app -> candidate motifs (several motifs may share a trigger;
/// the generator picks uniformly among them, so duplicates act as weights)
std::vector<std::vector<int>> trigger_table(const UserModel& um, int v) {
  std::vector<std::vector<int>> trig(static_cast<size_t>(v));
  for (size_t k = 0; k < um.motifs.size(); ++k)
    if (um.motifs[k].apps.size() >= 2)
      trig[static_cast<size_t>(um.motifs[k].apps[0])].push_back(static_cast<int>(k));
  return trig;
}

}  // namespace

std::vector<UserEvents> generate_events(const GeneratorModel& model, const SynthConfig& cfg) {
  cfg.validate();
  std::vector<UserEvents> all;
  const double rate = cfg.sessions_per_day / static_cast<double>(kMsPerDay);
  const int64_t end_ms = cfg.start_ms + static_cast<int64_t>(cfg.days) * kMsPerDay;
  const int v = model.n_apps;

  for (size_t u = 0; u < model.users.size(); ++u) {
    Rng rng(derive_seed(cfg.seed, "synth-events", static_cast<uint64_t>(u)));
    UserEvents ev;
    int64_t t = cfg.start_ms;
    while (true) {
      int64_t dt = std::max<int64_t>(1, std::llround(rng.exponential(rate)));
      t += dt;
      if (t >= end_ms) break;
      ev.ts.push_back(t);
    }

    const UserModel& um = model.users[u];
    const std::vector<std::vector<int>> trig = trigger_table(um, v);
    auto choose_trigger = [&](int app, Rng& r) {
      const std::vector<int>& candidates = trig[static_cast<size_t>(app)];
      if (candidates.empty()) return -1;
      if (candidates.size() == 1) return candidates[0];
      return candidates[static_cast<size_t>(
          r.uniform_int(0, static_cast<int64_t>(candidates.size()) - 1))];
    };

    int motif = -1, pos = 0;
    int prev = -1;
    ev.app.resize(ev.ts.size());
    for (size_t i = 0; i < ev.ts.size(); ++i) {
      int a;
      if (i == 0) {
        a = static_cast<int>(rng.uniform_int(0, v - 1));
        motif = choose_trigger(a, rng);
        pos = 1;
      } else if (motif >= 0 && rng.bernoulli(model.habit_strength)) {
        const Motif& mo = um.motifs[static_cast<size_t>(motif)];
        a = mo.apps[static_cast<size_t>(pos)];
        ++pos;
        if (pos >= static_cast<int>(mo.apps.size())) motif = -1;  // completed
      } else {
        a = sample_row(um.base, v, prev, rng);
        motif = choose_trigger(a, rng);
        pos = 1;
      }
      ev.app[i] = a;
      prev = a;
    }
    all.push_back(std::move(ev));
  }
  return all;
}

Cohort generate_cohort(const SynthConfig& cfg) {
  Cohort c;
  c.model = build_generator(cfg);
  c.events = generate_events(c.model, cfg);
  return c;
}

void write_cohort_csv(const GeneratorModel& model, const std::vector<UserEvents>& events,
                      std::ostream& out) {
  out << "user_id,timestamp,app_id\n";
  for (size_t u = 0; u < events.size(); ++u)
    for (size_t i = 0; i < events[u].ts.size(); ++i)
      csv::write_row(out, {model.user_ids[u], std::to_string(events[u].ts[i]),
                           model.app_names[static_cast<size_t>(events[u].app[i])]});
}

void write_truth_json(const GeneratorModel& model, const SynthConfig& cfg, std::ostream& out) {
  nlohmann::json j;
  j["tool_version"] = kToolVersion;
  j["n_apps"] = model.n_apps;
  j["n_social"] = model.n_social;
  j["habit_strength"] = model.habit_strength;
  j["app_names"] = model.app_names;
  j["user_ids"] = model.user_ids;
  j["seed"] = cfg.seed;
  j["config"] = {{"n_users", cfg.n_users},
                 {"days", cfg.days},
                 {"sessions_per_day", cfg.sessions_per_day},
                 {"vocab_size", cfg.vocab_size},
                 {"social_apps", cfg.social_apps},
                 {"habit_strength", cfg.habit_strength},
                 {"motif_length", cfg.motif_length},
                 {"motifs_per_user", cfg.motifs_per_user},
                 {"idiosyncrasy", cfg.idiosyncrasy},
                 {"base_skew", cfg.base_skew},
                 {"start_ms", cfg.start_ms}};
  nlohmann::json users = nlohmann::json::array();
  for (const UserModel& um : model.users) {
    nlohmann::json ju;
    ju["base"] = um.base;
    nlohmann::json motifs = nlohmann::json::array();
    for (const Motif& m : um.motifs) motifs.push_back(m.apps);
    ju["motifs"] = motifs;
    users.push_back(std::move(ju));
  }
  j["users"] = users;
  out << j.dump(2) << "\n";
}

GeneratorModel load_truth_json(std::istream& in) {
  nlohmann::json j = nlohmann::json::parse(in);
  GeneratorModel model;
  model.n_apps = j.at("n_apps").get<int>();
  model.n_social = j.at("n_social").get<int>();
  model.habit_strength = j.at("habit_strength").get<double>();
  model.app_names = j.at("app_names").get<std::vector<std::string>>();
  model.user_ids = j.at("user_ids").get<std::vector<std::string>>();
  for (const auto& ju : j.at("users")) {
    UserModel um;
    um.base = ju.at("base").get<std::vector<double>>();
    for (const auto& jm : ju.at("motifs")) {
      Motif m;
      m.apps = jm.get<std::vector<int>>();
      um.motifs.push_back(std::move(m));
    }
    model.users.push_back(std::move(um));
  }
  return model;
}

// ----------------------------------------------------------------- oracle

namespace {

/// Latent states: 0 = no active motif; otherwise (motif k, position p)
/// with p in [1, len_k - 1] meaning "expecting apps[p] next".
struct StateSpace {
  std::vector<int> motif_of;  // state -> motif (none for state 0)
  std::vector<int> pos_of;
  std::vector<std::vector<int>> state_of;  // [motif][pos] -> state id

  explicit StateSpace(const UserModel& um) {
    motif_of.push_back(-1);
    pos_of.push_back(0);
    state_of.resize(um.motifs.size());
    for (size_t k = 0; k < um.motifs.size(); ++k) {
      state_of[k].assign(um.motifs[k].apps.size(), -1);
      for (size_t p = 1; p < um.motifs[k].apps.size(); ++p) {
        state_of[k][p] = static_cast<int>(motif_of.size());
        motif_of.push_back(static_cast<int>(k));
        pos_of.push_back(static_cast<int>(p));
      }
    }
  }
  size_t size() const { return motif_of.size(); }
};

}  // namespace

std::vector<double> oracle_scores_stream(const GeneratorModel& model, size_t user_index,
                                         std::span<const int> apps) {
  const UserModel& um = model.users.at(user_index);
  const int v = model.n_apps;
  const double h = model.habit_strength;
  const StateSpace ss(um);
  const std::vector<std::vector<int>> trig = trigger_table(um, v);

  auto base_social = [&](int prev) {
    const double* row = um.base.data() + static_cast<size_t>(prev) * v;
    double p = 0.0;
    for (int a = v - model.n_social; a < v; ++a) p += row[a];
    return p;
  };
  // a base emission of `app` starts one of its candidate motifs uniformly
  auto add_trigger_mass = [&](std::vector<double>& dist, int app, double mass) {
    const std::vector<int>& candidates = trig[static_cast<size_t>(app)];
    if (candidates.empty()) {
      dist[0] += mass;
      return;
    }
    double each = mass / static_cast<double>(candidates.size());
    for (int k : candidates)
      dist[static_cast<size_t>(ss.state_of[static_cast<size_t>(k)][1])] += each;
  };

  std::vector<double> scores(apps.size());
  if (apps.empty()) return scores;

  std::vector<double> alpha(ss.size(), 0.0), next(ss.size(), 0.0);
  scores[0] = static_cast<double>(model.n_social) / static_cast<double>(v);
  add_trigger_mass(alpha, apps[0], 1.0);

  for (size_t t = 1; t < apps.size(); ++t) {
    const int prev = apps[t - 1];
    const int cur = apps[t];
    const double bs = base_social(prev);

    double score = 0.0;
    for (size_t s = 0; s < ss.size(); ++s) {
      if (alpha[s] == 0.0) continue;
      if (s == 0) {
        score += alpha[s] * bs;
      } else {
        const Motif& mo = um.motifs[static_cast<size_t>(ss.motif_of[s])];
        bool next_social = model.is_social(mo.apps[static_cast<size_t>(ss.pos_of[s])]);
        score += alpha[s] * (h * (next_social ? 1.0 : 0.0) + (1.0 - h) * bs);
      }
    }
    scores[t] = score;

    std::fill(next.begin(), next.end(), 0.0);
    const double* row = um.base.data() + static_cast<size_t>(prev) * v;
    const double base_p = row[cur];
    for (size_t s = 0; s < ss.size(); ++s) {
      if (alpha[s] == 0.0) continue;
      if (s == 0) {
        add_trigger_mass(next, cur, alpha[s] * base_p);
      } else {
        const Motif& mo = um.motifs[static_cast<size_t>(ss.motif_of[s])];
        const int p = ss.pos_of[s];
        if (mo.apps[static_cast<size_t>(p)] == cur) {
          int ns = p + 1 < static_cast<int>(mo.apps.size())
                       ? ss.state_of[static_cast<size_t>(ss.motif_of[s])][static_cast<size_t>(p + 1)]
                       : 0;  // emitting the last symbol completes the motif
          next[static_cast<size_t>(ns)] += alpha[s] * h;
        }
        add_trigger_mass(next, cur, alpha[s] * (1.0 - h) * base_p);
      }
    }
    double total = 0.0;
    for (double x : next) total += x;
    if (total <= 0.0) {
      std::fill(next.begin(), next.end(), 0.0);
      next[0] = 1.0;
      total = 1.0;
    }
    for (size_t s = 0; s < ss.size(); ++s) alpha[s] = next[s] / total;
  }
  return scores;
}

std::vector<double> oracle_scores_for_rows(const GeneratorModel& model,
                                           const ingest::CohortLog& cohort,
                                           const data::SequenceDataset& ds,
                                           std::span<const uint32_t> rows) {
  // per cohort user: oracle scores over the full stream, indexed by timestamp
  std::map<std::string, std::map<int64_t, double>> by_user;
  for (const ingest::UserLog& user : cohort.users) {
    int mu = -1;
    for (size_t i = 0; i < model.user_ids.size(); ++i)
      if (model.user_ids[i] == user.user_id) mu = static_cast<int>(i);
    if (mu < 0)
      throw std::runtime_error("oracle: user " + user.user_id + " not in generator model");
    std::vector<int> apps(user.events.size());
    for (size_t i = 0; i < user.events.size(); ++i) {
      int a = model.app_index(user.events[i].app_id);
      if (a < 0)
        throw std::runtime_error("oracle: app " + user.events[i].app_id +
                                 " not in generator model");
      apps[i] = a;
    }
    std::vector<double> scores =
        oracle_scores_stream(model, static_cast<size_t>(mu), apps);
    auto& ts_map = by_user[user.user_id];
    for (size_t i = 0; i < user.events.size(); ++i)
      ts_map[user.events[i].timestamp_ms] = scores[i];
  }

  std::vector<double> out(rows.size());
  for (size_t i = 0; i < rows.size(); ++i) {
    uint32_t r = rows[i];
    const std::string& user = ds.user_ids[ds.user_index[r]];
    auto uit = by_user.find(user);
    if (uit == by_user.end()) throw std::runtime_error("oracle: row user missing: " + user);
    auto tit = uit->second.find(ds.target_ts[r]);
    if (tit == uit->second.end())
      throw std::runtime_error("oracle: no generated event at row timestamp for " + user);
    out[i] = tit->second;
  }
  return out;
}

double oracle_auc(const GeneratorModel& model, const ingest::CohortLog& cohort,
                  const data::SequenceDataset& ds, std::span<const uint32_t> rows) {
  std::vector<double> scores = oracle_scores_for_rows(model, cohort, ds, rows);
  std::vector<int> labels(rows.size());
  for (size_t i = 0; i < rows.size(); ++i) labels[i] = ds.targets[rows[i]];
  return metrics::roc_auc(scores, labels).value_or(0.5);
}

}  // namespace habitlens::synth
