#include "habitlens/runner.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <thread>

#include "habitlens/csv.hpp"
#include "habitlens/experiments.hpp"
#include "habitlens/synthgen.hpp"

namespace habitlens::runner {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ------------------------------------------------------------- options

std::string get_str(const json& opts, const std::string& key, const std::string& def) {
  if (!opts.contains(key)) return def;
  const json& v = opts.at(key);
  return v.is_string() ? v.get<std::string>() : v.dump();
}

double get_num(const json& opts, const std::string& key, double def) {
  if (!opts.contains(key)) return def;
  const json& v = opts.at(key);
  if (v.is_number()) return v.get<double>();
  if (v.is_string()) return std::stod(v.get<std::string>());
  throw std::invalid_argument("option " + key + " is not numeric");
}

int64_t get_int(const json& opts, const std::string& key, int64_t def) {
  return static_cast<int64_t>(std::llround(get_num(opts, key, static_cast<double>(def))));
}

bool get_bool(const json& opts, const std::string& key, bool def) {
  if (!opts.contains(key)) return def;
  const json& v = opts.at(key);
  if (v.is_boolean()) return v.get<bool>();
  if (v.is_number()) return v.get<double>() != 0;
  if (v.is_string()) {
    std::string s = to_lower(v.get<std::string>());
    return s == "1" || s == "true" || s == "yes" || s == "on";
  }
  throw std::invalid_argument("option " + key + " is not a flag");
}

uint64_t get_seed(const json& opts) {
  if (opts.contains("seed")) return static_cast<uint64_t>(get_int(opts, "seed", 1));
  if (const char* env = std::getenv("HABITLENS_SEED")) return std::strtoull(env, nullptr, 10);
  return 1;
}

fs::path out_dir_of(const json& opts) {
  std::string dir = get_str(opts, "out_dir", "");
  if (dir.empty()) throw std::invalid_argument("out_dir is required");
  fs::create_directories(dir);
  return dir;
}

int jobs_of(const json& opts) {
  int64_t jobs = get_int(opts, "jobs", 0);
  if (jobs <= 0) jobs = static_cast<int64_t>(std::max(1u, std::thread::hardware_concurrency()));
  return static_cast<int>(jobs);
}

// ------------------------------------------------------------- manifest

std::string file_hash_hex(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return "";
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a64(bytes.data(), bytes.size())));
  return buf;
}

class Manifest {
 public:
  Manifest(fs::path out_dir, std::string stage, const json& opts)
      : path_(out_dir / "manifest.json"), stage_(std::move(stage)), start_(clock_t::now()) {
    if (fs::exists(path_)) {
      std::ifstream in(path_);
      root_ = json::parse(in, nullptr, false);
      if (root_.is_discarded()) root_ = json::object();
    }
    record_["options"] = opts;
    record_["seed"] = get_seed(opts);
  }

  void input(const fs::path& p) { record_["inputs"][p.string()] = file_hash_hex(p); }
  void output(const fs::path& p) { outputs_.push_back(p); }

  void commit() {
    json out_hashes = json::object();
    for (const fs::path& p : outputs_) out_hashes[p.string()] = file_hash_hex(p);
    record_["outputs"] = out_hashes;
    record_["elapsed_ms"] = std::chrono::duration_cast<std::chrono::milliseconds>(
                                clock_t::now() - start_)
                                .count();
    root_["tool_version"] = kToolVersion;
    root_["stages"][stage_] = record_;
    std::ofstream out(path_, std::ios::binary);
    out << root_.dump(2) << "\n";
  }

 private:
  using clock_t = std::chrono::steady_clock;
  fs::path path_;
  std::string stage_;
  clock_t::time_point start_;
  json root_ = json::object();
  json record_ = json::object();
  std::vector<fs::path> outputs_;
};

// --------------------------------------------------------------- shared

ingest::LogFormat format_of(const json& opts, const fs::path& data) {
  std::string fmt = to_lower(get_str(opts, "format", "auto"));
  if (fmt == "csv") return ingest::LogFormat::Csv;
  if (fmt == "jsonl") return ingest::LogFormat::Jsonl;
  return data.extension() == ".jsonl" ? ingest::LogFormat::Jsonl : ingest::LogFormat::Csv;
}

std::set<std::string> social_set(const json& opts, const fs::path& out_dir) {
  std::string path = get_str(opts, "social_apps_file", "");
  if (path.empty()) {
    fs::path candidate = out_dir / "social_apps.txt";
    if (fs::exists(candidate)) path = candidate.string();
  }
  if (path.empty()) return ingest::default_social_apps();
  auto list = ingest::load_app_list_file(path);
  return {list.begin(), list.end()};
}

ingest::CleaningConfig cleaning_config(const json& opts) {
  ingest::CleaningConfig cfg;
  cfg.drop_empty = get_bool(opts, "drop_empty", true);
  if (get_bool(opts, "keep_system", false)) {
    cfg.system_ui_patterns.clear();  // the less conservative cleaning variant
  } else if (std::string p = get_str(opts, "patterns_file", ""); !p.empty()) {
    cfg.system_ui_patterns = ingest::load_app_list_file(p);
  }
  if (std::string p = get_str(opts, "blocked_file", ""); !p.empty()) {
    auto list = ingest::load_app_list_file(p);
    cfg.blocked_app_ids = {list.begin(), list.end()};
  }
  return cfg;
}

ingest::CohortConfig cohort_config(const json& opts, const std::set<std::string>& social) {
  ingest::CohortConfig cfg;
  cfg.min_days = static_cast<int>(get_int(opts, "min_days", 14));
  cfg.truncate_days = static_cast<int>(get_int(opts, "truncate_days", 14));
  cfg.min_sessions = static_cast<size_t>(get_int(opts, "min_sessions", 1000));
  cfg.min_social_fraction = get_num(opts, "min_social_fraction", 0.05);
  cfg.social_apps = social;
  return cfg;
}

ingest::CohortLog load_clean_cohort(const fs::path& path) {
  auto in = csv::open_in(path.string());
  return ingest::load_cohort_csv(in);
}

/// Accepts either a serialized cohort (4-column with social flags) or a
/// raw log, which is then cleaned and labeled with default settings.
ingest::CohortLog load_any_cohort(const json& opts, const fs::path& out_dir,
                                  const fs::path& path) {
  {
    auto in = csv::open_in(path.string());
    std::string header;
    std::getline(in, header);
    if (header.rfind("user_id,timestamp,app_id,social", 0) == 0)
      return load_clean_cohort(path);
  }
  auto in = csv::open_in(path.string());
  ingest::ParseResult parsed = parse_log_file(in, format_of(opts, path),
                                              get_num(opts, "malformed_tolerance", 0.01));
  ingest::CleanResult cleaned = clean_events(parsed.events, cleaning_config(opts));
  return ingest::cohort_unfiltered(cleaned.events, social_set(opts, out_dir));
}

nn::Arch arch_of(const json& opts) { return nn::arch_from_name(get_str(opts, "arch", "lstm")); }

experiments::ExperimentPlan plan_of(const json& opts, const std::string& stage) {
  experiments::ExperimentPlan plan;
  plan.arch = arch_of(opts);
  plan.seq_len = static_cast<int>(get_int(opts, "seq_len", 20));
  plan.same_day = get_bool(opts, "same_day", false);
  plan.weighted = get_bool(opts, "weighted", false);
  plan.hpo_budget = static_cast<int>(get_int(opts, "hpo_budget", 20));
  plan.hpo_random_starts = static_cast<int>(get_int(opts, "random_starts", 5));
  plan.root_seed = derive_seed(get_seed(opts), stage);
  plan.max_epochs = static_cast<int>(get_int(opts, "max_epochs", 1000));
  plan.batch_size = static_cast<int>(get_int(opts, "batch", 1024));
  plan.patience = static_cast<int>(get_int(opts, "patience", 5));
  plan.finetune_lr = get_num(opts, "lr", 1e-4);
  plan.jobs = jobs_of(opts);
  return plan;
}

const hpo::SearchSpace& space_of(nn::Arch arch) {
  return arch == nn::Arch::Lstm ? hpo::SearchSpace::lstm() : hpo::SearchSpace::transformer();
}

json named_json_from_config(const hpo::SearchSpace& space, const hpo::HyperConfig& cfg) {
  json j;
  for (size_t i = 0; i < space.params.size(); ++i) {
    const hpo::ParamDesc& p = space.params[i];
    if (p.kind == hpo::ParamKind::GridInt)
      j[p.name] = static_cast<int64_t>(std::llround(cfg[i]));
    else
      j[p.name] = cfg[i];
  }
  return j;
}

hpo::HyperConfig config_from_named_json(const hpo::SearchSpace& space, const json& j) {
  hpo::HyperConfig cfg(space.params.size());
  for (size_t i = 0; i < space.params.size(); ++i)
    cfg[i] = j.at(space.params[i].name).get<double>();
  return cfg;
}

std::optional<hpo::HyperConfig> fixed_config_of(const json& opts, const hpo::SearchSpace& space) {
  std::string path = get_str(opts, "config_json", "");
  if (path.empty()) return std::nullopt;
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config_json: " + path);
  return config_from_named_json(space, json::parse(in));
}

void write_pooled_csv(const metrics::EvalReport& r, const fs::path& path) {
  auto out = csv::open_out(path.string());
  out << "auc,acc,pre,rec,f1,n,positive_fraction\n";
  csv::write_row(out, {r.auc ? format_double(*r.auc, 6) : "", format_double(r.accuracy, 6),
                       format_double(r.precision, 6), format_double(r.recall, 6),
                       format_double(r.f1, 6), std::to_string(r.n),
                       format_double(r.positive_fraction, 6)});
}

struct PerPersonAuc {
  std::map<std::string, double> defined;
  size_t undefined = 0;
};

PerPersonAuc read_per_person_csv(const fs::path& path) {
  PerPersonAuc result;
  auto in = csv::open_in(path.string());
  csv::Reader reader(in);
  std::vector<std::string> row;
  reader.next(row);  // header
  while (reader.next(row)) {
    if (row.size() < 2) continue;
    if (row[1].empty()) {
      ++result.undefined;
      continue;
    }
    result.defined[row[0]] = std::stod(row[1]);
  }
  return result;
}

// --------------------------------------------------------- subcommands

void cmd_simulate(const json& opts) {
  fs::path out_dir = out_dir_of(opts);
  Manifest manifest(out_dir, "simulate", opts);

  synth::SynthConfig cfg;
  cfg.n_users = static_cast<int>(get_int(opts, "users", 20));
  cfg.days = static_cast<int>(get_int(opts, "days", 14));
  cfg.sessions_per_day = get_num(opts, "sessions_per_day", 110.0);
  cfg.vocab_size = static_cast<int>(get_int(opts, "vocab", 12));
  cfg.social_apps = static_cast<int>(get_int(opts, "social_apps", 2));
  cfg.habit_strength = get_num(opts, "habit", 0.6);
  cfg.motif_length = static_cast<int>(get_int(opts, "motif_length", 3));
  cfg.motifs_per_user = static_cast<int>(get_int(opts, "motifs_per_user", 2));
  cfg.idiosyncrasy = get_num(opts, "idiosyncrasy", 0.0);
  cfg.base_skew = get_num(opts, "base_skew", 0.0);
  cfg.seed = get_seed(opts);

  synth::Cohort cohort = synth::generate_cohort(cfg);

  fs::path csv_path = get_str(opts, "out", (out_dir / "cohort.csv").string());
  {
    auto out = csv::open_out(csv_path.string());
    synth::write_cohort_csv(cohort.model, cohort.events, out);
  }
  fs::path truth_path = out_dir / "truth.json";
  {
    auto out = csv::open_out(truth_path.string());
    synth::write_truth_json(cohort.model, cfg, out);
  }
  fs::path social_path = out_dir / "social_apps.txt";
  {
    auto out = csv::open_out(social_path.string());
    for (const std::string& name : cohort.model.social_app_names()) out << name << "\n";
  }
  manifest.output(csv_path);
  manifest.output(truth_path);
  manifest.output(social_path);
  manifest.commit();
}

void cmd_ingest(const json& opts) {
  fs::path out_dir = out_dir_of(opts);
  Manifest manifest(out_dir, "ingest", opts);
  fs::path data = get_str(opts, "data", (out_dir / "cohort.csv").string());
  manifest.input(data);

  auto in = csv::open_in(data.string());
  ingest::ParseResult parsed = parse_log_file(in, format_of(opts, data),
                                              get_num(opts, "malformed_tolerance", 0.01));
  ingest::CleanResult cleaned = clean_events(parsed.events, cleaning_config(opts));
  std::set<std::string> social = social_set(opts, out_dir);
  ingest::CohortLog cohort = filter_and_truncate_users(cleaned.events, cohort_config(opts, social));

  fs::path clean_path = out_dir / "cohort_clean.csv";
  {
    auto out = csv::open_out(clean_path.string());
    ingest::save_cohort_csv(cohort, out);
  }
  fs::path excl_path = out_dir / "exclusions.csv";
  {
    auto out = csv::open_out(excl_path.string());
    ingest::save_exclusions_csv(cohort, out);
  }
  fs::path stats_path = out_dir / "ingest_stats.json";
  {
    json stats;
    stats["records"] = parsed.total_records;
    stats["parse_errors"] = parsed.issues.size();
    stats["removed"] = {{"blocked", cleaned.tallies.blocked},
                        {"empty", cleaned.tallies.empty},
                        {"system", cleaned.tallies.system}};
    stats["truncated_events"] = cohort.truncated_events;
    stats["users_retained"] = cohort.users.size();
    stats["users_excluded"] = cohort.exclusions.size();
    stats["events_retained"] = cohort.total_events();
    auto out = csv::open_out(stats_path.string());
    out << stats.dump(2) << "\n";
  }
  manifest.output(clean_path);
  manifest.output(excl_path);
  manifest.output(stats_path);
  manifest.commit();
}

void run_baseline(const experiments::Env& env, const fs::path& out_dir, Manifest& manifest) {
  training::DataView train_view = env.view(data::Split::Train);
  training::DataView val_view = env.view(data::Split::Val);
  training::DataView test_view = env.view(data::Split::Test);
  data::TabularFeatures train_x = data::tabular_features(env.ds, train_view.rows);
  data::TabularFeatures val_x = data::tabular_features(env.ds, val_view.rows);
  data::TabularFeatures test_x = data::tabular_features(env.ds, test_view.rows);

  training::LogisticModel model = training::fit_logistic_baseline(
      train_x, train_view.labels(), val_x, val_view.labels());
  Eigen::VectorXd probs = training::logistic_predict(model, test_x);
  std::vector<double> scores(probs.data(), probs.data() + probs.size());
  metrics::EvalReport pooled = metrics::evaluate(scores, test_view.labels_int());

  fs::path pooled_path = out_dir / "baseline_lr_pooled.csv";
  write_pooled_csv(pooled, pooled_path);
  manifest.output(pooled_path);

  std::map<uint32_t, std::pair<std::vector<double>, std::vector<int>>> grouped;
  for (size_t i = 0; i < test_view.rows.size(); ++i) {
    auto& g = grouped[env.ds.user_index[test_view.rows[i]]];
    g.first.push_back(scores[i]);
    g.second.push_back(env.ds.targets[test_view.rows[i]]);
  }
  std::vector<experiments::PersonEval> evals;
  for (auto& [user, g] : grouped)
    evals.push_back({env.ds.user_ids[user], metrics::evaluate(g.first, g.second)});
  fs::path pp_path = out_dir / "baseline_lr_per_person.csv";
  {
    auto out = csv::open_out(pp_path.string());
    experiments::write_person_evals_csv(evals, out);
  }
  manifest.output(pp_path);
}

void cmd_train_global(const json& opts) {
  fs::path out_dir = out_dir_of(opts);
  Manifest manifest(out_dir, std::string("train-global-") + get_str(opts, "arch", "lstm"), opts);
  fs::path data = get_str(opts, "data", (out_dir / "cohort_clean.csv").string());
  manifest.input(data);

  experiments::ExperimentPlan plan = plan_of(opts, "train-global");
  plan.regime = experiments::Regime::Global;
  plan.fixed_config = fixed_config_of(opts, space_of(plan.arch));

  experiments::Env env =
      experiments::build_env(load_clean_cohort(data), plan.seq_len, plan.same_day);
  experiments::GlobalResult result = experiments::run_global(env, plan);
  const std::string arch = nn::arch_name(plan.arch);

  auto emit = [&](const std::string& name, auto writer) {
    fs::path path = out_dir / name;
    auto out = csv::open_out(path.string());
    writer(out);
    manifest.output(path);
  };
  emit("global_" + arch + "_trials.csv",
       [&](std::ostream& o) { hpo::write_trial_log_csv(result.trials, o); });
  emit("global_" + arch + "_trial_configs.csv", [&](std::ostream& o) {
    hpo::write_trial_configs_csv(space_of(plan.arch), result.trials, o);
  });
  emit("global_" + arch + "_per_person.csv",
       [&](std::ostream& o) { experiments::write_person_evals_csv(result.per_person, o); });
  emit("global_" + arch + "_auc_summary.csv",
       [&](std::ostream& o) { experiments::write_auc_summary_csv(result.auc_summary, o); });
  emit("global_" + arch + "_history.csv",
       [&](std::ostream& o) { training::write_history_csv(result.history, o); });

  fs::path pooled_path = out_dir / ("global_" + arch + "_pooled.csv");
  write_pooled_csv(result.pooled, pooled_path);
  manifest.output(pooled_path);

  fs::path ckpt_path = out_dir / ("global_" + arch + ".ckpt");
  nn::save_checkpoint(result.spec, result.params, ckpt_path.string());
  manifest.output(ckpt_path);

  fs::path config_path = out_dir / ("global_" + arch + "_config.json");
  {
    json j = named_json_from_config(space_of(plan.arch), result.winner);
    j["arch"] = arch;
    j["seq_len"] = plan.seq_len;
    j["split_hash"] = data::split_hash(env.splits);
    auto out = csv::open_out(config_path.string());
    out << j.dump(2) << "\n";
  }
  manifest.output(config_path);

  fs::path ds_bin = out_dir / ("dataset_L" + std::to_string(plan.seq_len) +
                               (plan.same_day ? "_sameday" : "") + ".bin");
  fs::path ds_json = out_dir / ("dataset_L" + std::to_string(plan.seq_len) +
                                (plan.same_day ? "_sameday" : "") + ".json");
  data::save_dataset(env.ds, env.vocab, env.splits, env.fractions, env.cohort_hash,
                     ds_bin.string(), ds_json.string());
  manifest.output(ds_bin);
  manifest.output(ds_json);

  if (get_bool(opts, "baseline", false)) run_baseline(env, out_dir, manifest);
  manifest.commit();
}

void cmd_train_personal(const json& opts) {
  fs::path out_dir = out_dir_of(opts);
  Manifest manifest(out_dir, std::string("train-personal-") + get_str(opts, "arch", "lstm"),
                    opts);
  fs::path data = get_str(opts, "data", (out_dir / "cohort_clean.csv").string());
  manifest.input(data);

  experiments::ExperimentPlan plan = plan_of(opts, "train-personal");
  plan.regime = experiments::Regime::Personal;
  plan.fixed_config = fixed_config_of(opts, space_of(plan.arch));

  experiments::Env env =
      experiments::build_env(load_clean_cohort(data), plan.seq_len, plan.same_day);
  experiments::PersonalResult result = experiments::run_personal(env, plan);
  const std::string arch = nn::arch_name(plan.arch);

  std::vector<experiments::PersonEval> evals;
  for (const auto& m : result.models) evals.push_back({m.user_id, m.report});
  fs::path pp_path = out_dir / ("personal_" + arch + "_per_person.csv");
  {
    auto out = csv::open_out(pp_path.string());
    experiments::write_person_evals_csv(evals, out);
  }
  manifest.output(pp_path);

  fs::path summary_path = out_dir / ("personal_" + arch + "_auc_summary.csv");
  {
    auto out = csv::open_out(summary_path.string());
    experiments::write_auc_summary_csv(result.auc_summary, out);
  }
  manifest.output(summary_path);

  fs::path skipped_path = out_dir / ("personal_" + arch + "_skipped.csv");
  {
    auto out = csv::open_out(skipped_path.string());
    out << "user_id,reason\n";
    for (const auto& [user, reason] : result.skipped) csv::write_row(out, {user, reason});
  }
  manifest.output(skipped_path);

  fs::path ckpt_dir = out_dir / ("personal_" + arch);
  fs::create_directories(ckpt_dir);
  for (const auto& m : result.models) {
    fs::path p = ckpt_dir / (m.user_id + ".ckpt");
    nn::save_checkpoint(m.spec, m.params, p.string());
    manifest.output(p);
  }
  manifest.commit();
}

void cmd_finetune(const json& opts) {
  fs::path out_dir = out_dir_of(opts);
  std::string mode = get_str(opts, "mode", "full");
  if (mode != "full" && mode != "frozen")
    throw std::invalid_argument("finetune mode must be full or frozen");
  Manifest manifest(out_dir,
                    "finetune-" + mode + "-" + get_str(opts, "arch", "lstm"), opts);
  fs::path data = get_str(opts, "data", (out_dir / "cohort_clean.csv").string());
  manifest.input(data);

  experiments::ExperimentPlan plan = plan_of(opts, "finetune-" + mode);
  plan.regime = mode == "full" ? experiments::Regime::FinetuneFull
                               : experiments::Regime::FinetuneFrozen;
  const std::string arch = nn::arch_name(plan.arch);
  fs::path ckpt = get_str(opts, "checkpoint", (out_dir / ("global_" + arch + ".ckpt")).string());
  manifest.input(ckpt);
  nn::Checkpoint global = nn::load_checkpoint(ckpt.string());

  experiments::Env env =
      experiments::build_env(load_clean_cohort(data), global.spec.seq_len, plan.same_day);
  if (env.vocab.size() != global.spec.vocab_size)
    throw std::runtime_error("finetune: cohort vocabulary does not match the checkpoint");

  experiments::FineTuneResult result =
      mode == "full" ? run_finetune_full(env, plan, global.spec, global.params)
                     : run_finetune_frozen(env, plan, global.spec, global.params);

  fs::path pp_path = out_dir / ("finetune_" + mode + "_" + arch + "_per_person.csv");
  {
    auto out = csv::open_out(pp_path.string());
    experiments::write_finetune_csv(result, out);
  }
  manifest.output(pp_path);

  fs::path summary_path = out_dir / ("finetune_" + mode + "_" + arch + "_auc_summary.csv");
  {
    auto out = csv::open_out(summary_path.string());
    experiments::write_auc_summary_csv(result.auc_summary, out);
  }
  manifest.output(summary_path);
  manifest.commit();
}

void cmd_crosseval(const json& opts) {
  fs::path out_dir = out_dir_of(opts);
  Manifest manifest(out_dir, std::string("crosseval-") + get_str(opts, "arch", "lstm"), opts);
  fs::path data = get_str(opts, "data", (out_dir / "cohort_clean.csv").string());
  manifest.input(data);
  const std::string arch = get_str(opts, "arch", "lstm");

  experiments::ExperimentPlan plan = plan_of(opts, "crosseval");
  experiments::Env env =
      experiments::build_env(load_clean_cohort(data), plan.seq_len, plan.same_day);

  fs::path ckpt_dir = get_str(opts, "checkpoints", (out_dir / ("personal_" + arch)).string());
  std::vector<experiments::PersonalModel> models;
  for (uint32_t u = 0; u < env.cohort.users.size(); ++u) {
    fs::path p = ckpt_dir / (env.cohort.users[u].user_id + ".ckpt");
    if (!fs::exists(p)) continue;
    nn::Checkpoint ck = nn::load_checkpoint(p.string());
    experiments::PersonalModel pm;
    pm.user_id = env.cohort.users[u].user_id;
    pm.user_index = u;
    pm.spec = ck.spec;
    pm.params = std::move(ck.params);
    models.push_back(std::move(pm));
  }
  if (models.empty()) throw std::runtime_error("crosseval: no personal checkpoints under " +
                                               ckpt_dir.string());

  experiments::CrossMatrix m = experiments::cross_generalization(env, models);

  fs::path matrix_path = out_dir / ("crosseval_" + arch + "_matrix.csv");
  {
    auto out = csv::open_out(matrix_path.string());
    experiments::write_cross_matrix_csv(m, out);
  }
  manifest.output(matrix_path);

  fs::path stats_path = out_dir / ("crosseval_" + arch + "_stats.csv");
  {
    auto out = csv::open_out(stats_path.string());
    out << "stat,value\n";
    csv::write_row(out, {"n_models", std::to_string(m.user_ids.size())});
    csv::write_row(out, {"diagonal_mean", format_double(m.diagonal_mean, 6)});
    csv::write_row(out, {"off_diagonal_mean",
                         m.off_diagonal_defined ? format_double(m.off_diagonal_mean, 6) : ""});
    csv::write_row(out, {"within_minus_transfer",
                         m.off_diagonal_defined
                             ? format_double(m.diagonal_mean - m.off_diagonal_mean, 6)
                             : ""});
    csv::write_row(out, {"undefined_entries", std::to_string(m.undefined_count)});
  }
  manifest.output(stats_path);
  manifest.commit();
}

std::vector<int> parse_lengths(const std::string& text) {
  std::vector<int> lengths;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    size_t dash = part.find('-');
    if (dash != std::string::npos && dash > 0) {
      int lo = std::stoi(part.substr(0, dash));
      int hi = std::stoi(part.substr(dash + 1));
      for (int v = lo; v <= hi; ++v) lengths.push_back(v);
    } else if (!part.empty()) {
      lengths.push_back(std::stoi(part));
    }
  }
  if (lengths.empty()) throw std::invalid_argument("sweep: no lengths given");
  return lengths;
}

void cmd_sweep(const json& opts) {
  fs::path out_dir = out_dir_of(opts);
  Manifest manifest(out_dir, std::string("sweep-") + get_str(opts, "arch", "lstm"), opts);
  fs::path data = get_str(opts, "data", (out_dir / "cohort_clean.csv").string());
  manifest.input(data);

  experiments::ExperimentPlan plan = plan_of(opts, "sweep");
  const std::string arch = nn::arch_name(plan.arch);
  fs::path config_path =
      get_str(opts, "config_json", (out_dir / ("global_" + arch + "_config.json")).string());
  manifest.input(config_path);
  std::ifstream cfg_in(config_path);
  if (!cfg_in) throw std::runtime_error("sweep: missing winning config " + config_path.string());
  hpo::HyperConfig winner = config_from_named_json(space_of(plan.arch), json::parse(cfg_in));

  std::vector<int> lengths = parse_lengths(get_str(opts, "lengths", "1-20,50"));
  ingest::CohortLog cohort = load_clean_cohort(data);
  std::vector<experiments::SweepPoint> points =
      experiments::sequence_length_sweep(cohort, plan, winner, lengths);

  fs::path sweep_path = out_dir / ("sweep_" + arch + ".csv");
  {
    auto out = csv::open_out(sweep_path.string());
    experiments::write_sweep_csv(points, out);
  }
  manifest.output(sweep_path);
  manifest.commit();
}

void cmd_ngram(const json& opts) {
  fs::path out_dir = out_dir_of(opts);
  Manifest manifest(out_dir, "ngram", opts);
  fs::path data = get_str(opts, "data", (out_dir / "cohort_clean.csv").string());
  manifest.input(data);

  ingest::CohortLog cohort = load_any_cohort(opts, out_dir, data);
  experiments::NgramReport report = experiments::ngram_transition_report(
      cohort, static_cast<int>(get_int(opts, "n", 3)),
      static_cast<size_t>(get_int(opts, "top", 20)));

  fs::path pooled_path = out_dir / "ngram_pooled.csv";
  {
    auto out = csv::open_out(pooled_path.string());
    experiments::write_ngram_csv(report.pooled, out);
  }
  manifest.output(pooled_path);

  if (get_bool(opts, "per_user", true)) {
    for (const auto& [user, rows] : report.per_user) {
      fs::path p = out_dir / ("ngram_user_" + user + ".csv");
      auto out = csv::open_out(p.string());
      experiments::write_ngram_csv(rows, out);
      manifest.output(p);
    }
  }
  manifest.commit();
}

void cmd_descriptives(const json& opts) {
  fs::path out_dir = out_dir_of(opts);
  Manifest manifest(out_dir, "descriptives", opts);
  fs::path data = get_str(opts, "data", (out_dir / "cohort.csv").string());
  manifest.input(data);

  auto in = csv::open_in(data.string());
  ingest::ParseResult parsed = parse_log_file(in, format_of(opts, data),
                                              get_num(opts, "malformed_tolerance", 0.01));
  std::set<std::string> social = social_set(opts, out_dir);
  ingest::CohortLog pre = ingest::cohort_unfiltered(parsed.events, social);
  ingest::CleanResult cleaned = clean_events(parsed.events, cleaning_config(opts));
  ingest::CohortLog post = filter_and_truncate_users(cleaned.events, cohort_config(opts, social));

  experiments::DescriptivesReport report = experiments::compute_descriptives(pre, post);
  fs::path summary = out_dir / "descriptives_summary.csv";
  fs::path users = out_dir / "descriptives_users.csv";
  fs::path apps = out_dir / "descriptives_apps.csv";
  {
    auto s = csv::open_out(summary.string());
    auto u = csv::open_out(users.string());
    auto a = csv::open_out(apps.string());
    experiments::write_descriptives_csv(report, s, u, a);
  }
  manifest.output(summary);
  manifest.output(users);
  manifest.output(apps);
  manifest.commit();
}

struct FoundResults {
  std::vector<std::tuple<std::string, std::string, fs::path>> sets;  // regime, arch, path
};

FoundResults find_per_person_files(const fs::path& out_dir) {
  FoundResults found;
  const std::pair<const char*, const char*> regimes[] = {
      {"global", "global_%s_per_person.csv"},
      {"personal", "personal_%s_per_person.csv"},
      {"finetune_full", "finetune_full_%s_per_person.csv"},
      {"finetune_frozen", "finetune_frozen_%s_per_person.csv"},
  };
  for (const char* arch : {"lstm", "transformer"}) {
    for (const auto& [regime, pattern] : regimes) {
      char name[128];
      std::snprintf(name, sizeof(name), pattern, arch);
      fs::path p = out_dir / name;
      if (fs::exists(p)) found.sets.push_back({regime, arch, p});
    }
  }
  fs::path lr = out_dir / "baseline_lr_per_person.csv";
  if (fs::exists(lr)) found.sets.push_back({"baseline_lr", "lr", lr});
  return found;
}

void cmd_correlate(const json& opts) {
  fs::path out_dir = out_dir_of(opts);
  Manifest manifest(out_dir, "correlate", opts);
  fs::path data = get_str(opts, "data", (out_dir / "cohort_clean.csv").string());
  manifest.input(data);
  ingest::CohortLog cohort = load_clean_cohort(data);

  std::vector<experiments::AucSet> sets;
  for (const auto& [regime, arch, path] : find_per_person_files(out_dir).sets) {
    PerPersonAuc pp = read_per_person_csv(path);
    sets.push_back({regime, arch, pp.defined});
  }
  if (sets.empty())
    throw std::runtime_error("correlate: no per-person result files in " + out_dir.string());

  auto rows = experiments::predictability_frequency_correlations(sets, cohort);
  fs::path path = out_dir / "correlations.csv";
  {
    auto out = csv::open_out(path.string());
    experiments::write_correlations_csv(rows, out);
  }
  manifest.output(path);
  manifest.commit();
}

void cmd_report(const json& opts) {
  fs::path out_dir = out_dir_of(opts);
  Manifest manifest(out_dir, "report", opts);

  FoundResults found = find_per_person_files(out_dir);
  if (found.sets.empty())
    throw std::runtime_error("report: no result files in " + out_dir.string());

  fs::path fig2 = out_dir / "fig2_auc_distributions.csv";
  {
    auto out = csv::open_out(fig2.string());
    out << "regime,arch,user_id,auc\n";
    for (const auto& [regime, arch, path] : found.sets) {
      PerPersonAuc pp = read_per_person_csv(path);
      for (const auto& [user, auc] : pp.defined)
        csv::write_row(out, {regime, arch, user, format_double(auc, 6)});
    }
  }
  manifest.output(fig2);

  fs::path summary = out_dir / "regime_summary.csv";
  {
    auto out = csv::open_out(summary.string());
    out << "regime,arch,mean,std,min,25%,50%,75%,max,n,undefined\n";
    for (const auto& [regime, arch, path] : found.sets) {
      PerPersonAuc pp = read_per_person_csv(path);
      if (pp.defined.empty()) continue;
      std::vector<double> values;
      for (const auto& [user, auc] : pp.defined) values.push_back(auc);
      metrics::SummaryDistribution d = metrics::summarize_distribution(values, pp.undefined);
      csv::write_row(out, {regime, arch, format_double(d.mean, 6), format_double(d.sd, 6),
                           format_double(d.min, 6), format_double(d.q25, 6),
                           format_double(d.median, 6), format_double(d.q75, 6),
                           format_double(d.max, 6), std::to_string(d.n),
                           std::to_string(pp.undefined)});
    }
  }
  manifest.output(summary);

  fs::path improved = out_dir / "improved_fraction.csv";
  {
    auto out = csv::open_out(improved.string());
    out << "regime,arch,n_compared,fraction_improved\n";
    for (const auto& [regime, arch, path] : found.sets) {
      if (regime == "global" || regime == "baseline_lr") continue;
      fs::path global_path = out_dir / ("global_" + arch + "_per_person.csv");
      if (!fs::exists(global_path)) continue;
      PerPersonAuc mine = read_per_person_csv(path);
      PerPersonAuc global = read_per_person_csv(global_path);
      size_t n = 0, better = 0;
      for (const auto& [user, auc] : mine.defined) {
        auto it = global.defined.find(user);
        if (it == global.defined.end()) continue;
        ++n;
        if (auc > it->second) ++better;
      }
      csv::write_row(out, {regime, arch, std::to_string(n),
                           n ? format_double(static_cast<double>(better) / n, 6) : ""});
    }
  }
  manifest.output(improved);
  manifest.commit();
}

}  // namespace

bool is_known_command(const std::string& command) {
  static const std::set<std::string> known = {
      "simulate", "ingest", "train-global", "train-personal", "finetune", "crosseval",
      "sweep",    "ngram",  "descriptives", "correlate",      "report"};
  return known.count(command) > 0;
}

void run_command(const std::string& command, const json& opts) {
  if (command == "simulate")
    cmd_simulate(opts);
  else if (command == "ingest")
    cmd_ingest(opts);
  else if (command == "train-global")
    cmd_train_global(opts);
  else if (command == "train-personal")
    cmd_train_personal(opts);
  else if (command == "finetune")
    cmd_finetune(opts);
  else if (command == "crosseval")
    cmd_crosseval(opts);
  else if (command == "sweep")
    cmd_sweep(opts);
  else if (command == "ngram")
    cmd_ngram(opts);
  else if (command == "descriptives")
    cmd_descriptives(opts);
  else if (command == "correlate")
    cmd_correlate(opts);
  else if (command == "report")
    cmd_report(opts);
  else
    throw std::invalid_argument("unknown command: " + command);
}

}  // namespace habitlens::runner
