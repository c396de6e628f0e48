// habitlens command-line front end. Parses flags, merges them with an
// optional config file (flags > config > built-in defaults) and drives
// the pipeline through the shared library's C API.

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "habitlens.h"
#include "json.hpp"

namespace {

using nlohmann::json;

struct OptionBinding {
  std::string json_key;
  std::string value;
  CLI::Option* option = nullptr;
  bool is_flag = false;
  bool flag_value = false;
};

struct CommandSpec {
  CLI::App* app = nullptr;
  std::string name;
  std::string config_path;
  std::vector<std::unique_ptr<OptionBinding>> bindings;

  OptionBinding& add(CLI::App* cmd, const std::string& flag, const std::string& key,
                     const std::string& help, const std::string& default_hint = "") {
    auto binding = std::make_unique<OptionBinding>();
    binding->json_key = key;
    binding->option = cmd->add_option(flag, binding->value, help);
    if (!default_hint.empty()) binding->option->default_str(default_hint)->capture_default_str();
    bindings.push_back(std::move(binding));
    return *bindings.back();
  }

  OptionBinding& add_flag(CLI::App* cmd, const std::string& flag, const std::string& key,
                          const std::string& help) {
    auto binding = std::make_unique<OptionBinding>();
    binding->json_key = key;
    binding->is_flag = true;
    binding->option = cmd->add_flag(flag, binding->flag_value, help);
    bindings.push_back(std::move(binding));
    return *bindings.back();
  }
};

json load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CLI::ValidationError("--config", "cannot read " + path);
  if (path.size() > 5 && path.substr(path.size() - 5) == ".json") {
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded() || !j.is_object())
      throw CLI::ValidationError("--config", path + " is not a JSON object");
    return j;
  }
  json j = json::object();
  std::string line;
  while (std::getline(in, line)) {
    size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    size_t eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      size_t b = s.find_first_not_of(" \t\r\n");
      size_t e = s.find_last_not_of(" \t\r\n");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (!key.empty()) j[key] = value;
  }
  return j;
}

json collect_options(const CommandSpec& spec) {
  json opts = json::object();
  if (!spec.config_path.empty()) opts = load_config_file(spec.config_path);
  for (const auto& binding : spec.bindings) {
    if (binding->option->count() == 0) continue;
    if (binding->is_flag)
      opts[binding->json_key] = binding->flag_value;
    else
      opts[binding->json_key] = binding->value;
  }
  if (!opts.contains("seed")) {
    if (const char* env = std::getenv("HABITLENS_SEED")) opts["seed"] = std::string(env);
  }
  return opts;
}

void add_common(CommandSpec& spec, CLI::App* cmd) {
  spec.add(cmd, "--out-dir", "out_dir", "Output directory for artifacts and the manifest")
      .option->required();
  spec.add(cmd, "--seed", "seed", "Root random seed", "1");
  spec.add(cmd, "--jobs", "jobs", "Worker pool bound for per-person jobs", "cores");
  cmd->add_option("--config", spec.config_path,
                  "Config file (JSON or key=value); flags override it");
}

void add_train_common(CommandSpec& spec, CLI::App* cmd) {
  spec.add(cmd, "--data", "data", "Cleaned cohort CSV", "<out-dir>/cohort_clean.csv");
  spec.add(cmd, "--arch", "arch", "Architecture: lstm | transformer", "lstm");
  spec.add(cmd, "--seq-len", "seq_len", "Input window length", "20");
  spec.add_flag(cmd, "--same-day", "same_day", "Restrict windows to the target's calendar day");
  spec.add_flag(cmd, "--weighted", "weighted", "Weight the loss inversely to class frequency");
  spec.add(cmd, "--hpo-budget", "hpo_budget", "Total tuning trials", "20");
  spec.add(cmd, "--random-starts", "random_starts", "Random warm-start trials", "5");
  spec.add(cmd, "--max-epochs", "max_epochs", "Epoch cap per fit", "1000");
  spec.add(cmd, "--batch", "batch", "Mini-batch size", "1024");
  spec.add(cmd, "--patience", "patience", "Early-stopping patience", "5");
  spec.add(cmd, "--config-json", "config_json",
           "JSON file pinning hyperparameters (skips the search)");
}

void add_cleaning(CommandSpec& spec, CLI::App* cmd) {
  spec.add(cmd, "--format", "format", "Input format: csv | jsonl | auto", "auto");
  spec.add(cmd, "--social-apps-file", "social_apps_file",
           "Social app list (one per line, # comments)", "<out-dir>/social_apps.txt");
  spec.add(cmd, "--patterns-file", "patterns_file", "System-UI substring patterns file");
  spec.add(cmd, "--blocked-file", "blocked_file", "Exact package names to drop");
  spec.add_flag(cmd, "--keep-system", "keep_system",
                "Keep launcher/system-UI events (alternative cleaning)");
  spec.add_flag(cmd, "--keep-empty", "keep_empty", "Keep events with an empty app id");
  spec.add(cmd, "--min-days", "min_days", "Minimum days of participation", "14");
  spec.add(cmd, "--truncate-days", "truncate_days", "Observation window in days", "14");
  spec.add(cmd, "--min-sessions", "min_sessions", "Minimum sessions per user", "1000");
  spec.add(cmd, "--min-social-fraction", "min_social_fraction",
           "Minimum social-session fraction (inclusive)", "0.05");
  spec.add(cmd, "--malformed-tolerance", "malformed_tolerance",
           "Malformed-record fraction before aborting", "0.01");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"habitlens: predictability of sequential app-use behavior"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(hl_version()));

  std::vector<std::unique_ptr<CommandSpec>> specs;
  auto make = [&](const std::string& name, const std::string& desc) -> CommandSpec& {
    auto spec = std::make_unique<CommandSpec>();
    spec->name = name;
    spec->app = app.add_subcommand(name, desc);
    add_common(*spec, spec->app);
    specs.push_back(std::move(spec));
    return *specs.back();
  };

  {
    CommandSpec& s = make("simulate", "Generate a synthetic habitual-user cohort");
    s.add(s.app, "--users", "users", "Number of users", "20");
    s.add(s.app, "--days", "days", "Days of activity", "14");
    s.add(s.app, "--sessions-per-day", "sessions_per_day", "Mean sessions per day", "110");
    s.add(s.app, "--vocab", "vocab", "Total distinct apps", "12");
    s.add(s.app, "--social-apps", "social_apps", "Number of social apps", "2");
    s.add(s.app, "--habit", "habit", "Habit strength h in [0,1]", "0.6");
    s.add(s.app, "--motif-length", "motif_length", "Motif length incl. terminal app", "3");
    s.add(s.app, "--motifs-per-user", "motifs_per_user", "Motifs per user", "2");
    s.add(s.app, "--idiosyncrasy", "idiosyncrasy", "P(private vs shared motifs)", "0");
    s.add(s.app, "--base-skew", "base_skew", "First-order structure of the base chain", "0");
    s.add(s.app, "--out", "out", "Cohort CSV path", "<out-dir>/cohort.csv");
  }
  {
    CommandSpec& s = make("ingest", "Parse, clean and cohort-filter an app log");
    s.add(s.app, "--data", "data", "Raw log (CSV or JSONL)", "<out-dir>/cohort.csv");
    add_cleaning(s, s.app);
  }
  {
    CommandSpec& s = make("train-global", "Tune and train the pooled global model");
    add_train_common(s, s.app);
    s.add_flag(s.app, "--baseline", "baseline", "Also fit the logistic-regression baseline");
  }
  {
    CommandSpec& s = make("train-personal", "Tune and train one model per person");
    add_train_common(s, s.app);
  }
  {
    CommandSpec& s = make("finetune", "Fine-tune the global model per person");
    s.add(s.app, "--data", "data", "Cleaned cohort CSV", "<out-dir>/cohort_clean.csv");
    s.add(s.app, "--arch", "arch", "Architecture: lstm | transformer", "lstm");
    s.add(s.app, "--mode", "mode", "full (low-lr) | frozen (head re-search)", "full");
    s.add(s.app, "--checkpoint", "checkpoint", "Global checkpoint",
          "<out-dir>/global_<arch>.ckpt");
    s.add(s.app, "--lr", "lr", "Fine-tuning learning rate", "0.0001");
    s.add(s.app, "--hpo-budget", "hpo_budget", "Head-search trials (frozen mode)", "20");
    s.add(s.app, "--random-starts", "random_starts", "Random warm starts (frozen mode)", "5");
    s.add(s.app, "--max-epochs", "max_epochs", "Epoch cap per fit", "1000");
    s.add(s.app, "--batch", "batch", "Mini-batch size", "1024");
    s.add(s.app, "--patience", "patience", "Early-stopping patience", "5");
  }
  {
    CommandSpec& s = make("crosseval", "Evaluate person models on everyone's test sets");
    s.add(s.app, "--data", "data", "Cleaned cohort CSV", "<out-dir>/cohort_clean.csv");
    s.add(s.app, "--arch", "arch", "Architecture of the personal models", "lstm");
    s.add(s.app, "--checkpoints", "checkpoints", "Personal checkpoint directory",
          "<out-dir>/personal_<arch>");
    s.add(s.app, "--seq-len", "seq_len", "Input window length", "20");
  }
  {
    CommandSpec& s = make("sweep", "Re-train the global model across sequence lengths");
    s.add(s.app, "--data", "data", "Cleaned cohort CSV", "<out-dir>/cohort_clean.csv");
    s.add(s.app, "--arch", "arch", "Architecture: lstm | transformer", "lstm");
    s.add(s.app, "--lengths", "lengths", "Lengths, e.g. 1-20,50", "1-20,50");
    s.add(s.app, "--config-json", "config_json", "Winning config JSON",
          "<out-dir>/global_<arch>_config.json");
    s.add(s.app, "--max-epochs", "max_epochs", "Epoch cap per fit", "1000");
    s.add(s.app, "--batch", "batch", "Mini-batch size", "1024");
    s.add(s.app, "--patience", "patience", "Early-stopping patience", "5");
  }
  {
    CommandSpec& s = make("ngram", "n-gram social-media transition probabilities");
    s.add(s.app, "--data", "data", "Cohort CSV (clean or raw)", "<out-dir>/cohort_clean.csv");
    s.add(s.app, "--n", "n", "n-gram order", "3");
    s.add(s.app, "--top", "top", "Rows per table", "20");
    s.add_flag(s.app, "--pooled-only", "pooled_only", "Skip per-user tables");
  }
  {
    CommandSpec& s = make("descriptives", "Pre- and post-cleaning descriptive statistics");
    s.add(s.app, "--data", "data", "Raw log (CSV or JSONL)", "<out-dir>/cohort.csv");
    add_cleaning(s, s.app);
  }
  {
    CommandSpec& s = make("correlate", "Correlate per-person AUC with frequency measures");
    s.add(s.app, "--data", "data", "Cleaned cohort CSV", "<out-dir>/cohort_clean.csv");
  }
  {
    make("report", "Aggregate result CSVs into figure-ready tables");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  for (const auto& spec : specs) {
    if (!spec->app->parsed()) continue;
    json opts;
    try {
      opts = collect_options(*spec);
    } catch (const CLI::ParseError& e) {
      std::fprintf(stderr, "habitlens: %s\n", e.what());
      return 2;
    }
    if (spec->name == "ngram" && opts.contains("pooled_only"))
      opts["per_user"] = !opts["pooled_only"].get<bool>();
    if (opts.contains("keep_empty")) {
      opts["drop_empty"] = !opts["keep_empty"].get<bool>();
      opts.erase("keep_empty");
    }

    hl_session* session = nullptr;
    if (hl_session_create(opts.dump().c_str(), &session) != HL_OK) {
      std::fprintf(stderr, "habitlens: invalid options\n");
      return 1;
    }
    hl_status status = hl_run(session, spec->name.c_str(), nullptr);
    if (status != HL_OK) {
      std::fprintf(stderr, "habitlens %s: %s\n", spec->name.c_str(),
                   hl_session_last_error(session));
      hl_session_destroy(session);
      return 1;
    }
    hl_session_destroy(session);
    return 0;
  }
  return 2;
}
