#pragma once

#include <cstdint>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <string>
#include <vector>

namespace habitlens::ingest {

/// One logged app-use event ("app session"). app_id is lowercased on
/// parse; within a user, events are ordered by (timestamp, record index).
struct AppEvent {
  std::string user_id;
  int64_t timestamp_ms = 0;
  std::string app_id;
  uint64_t record_index = 0;
};

enum class LogFormat { Csv, Jsonl };

struct ParseIssue {
  size_t line = 0;
  std::string message;
};

struct ParseResult {
  // Grouped by user (ascending user_id), sorted by (timestamp, record index).
  std::vector<AppEvent> events;
  std::vector<ParseIssue> issues;
  size_t total_records = 0;  // data records seen, well-formed or not
};

/// Parses a CSV (header: user_id,timestamp,app_id) or JSONL stream.
/// Malformed records are tallied with their line numbers; the run aborts
/// (std::runtime_error) only when more than `malformed_tolerance` of the
/// records are bad.
ParseResult parse_log_file(std::istream& in, LogFormat format, double malformed_tolerance = 0.01);

struct CleaningConfig {
  std::set<std::string> blocked_app_ids;  // exact package names (data-collection app)
  std::vector<std::string> system_ui_patterns = {"launcher", "systemui",
                                                 "com.android.settings.intelligence"};
  bool drop_empty = true;
};

struct CleanTallies {
  size_t blocked = 0;
  size_t empty = 0;
  size_t system = 0;
  size_t total() const { return blocked + empty + system; }
};

struct CleanResult {
  std::vector<AppEvent> events;
  CleanTallies tallies;
};

/// Pure filter: drops blocked app ids, empty app ids (when drop_empty)
/// and any app id containing a system-UI pattern substring. Order
/// preserved; idempotent.
CleanResult clean_events(const std::vector<AppEvent>& events, const CleaningConfig& cfg);

struct CohortConfig {
  int min_days = 14;
  int truncate_days = 14;
  size_t min_sessions = 1000;
  double min_social_fraction = 0.05;  // inclusive: exactly 5% is retained
  std::set<std::string> social_apps;  // defaults to default_social_apps()

  CohortConfig();
};

struct UserLog {
  std::string user_id;
  std::vector<AppEvent> events;
  std::vector<uint8_t> social;  // social[i] == social_apps.count(events[i].app_id)
  size_t sessions = 0;
  size_t distinct_apps = 0;
  size_t social_sessions = 0;
  double social_fraction = 0.0;
};

struct Exclusion {
  std::string user_id;
  std::string rule;  // "min_days" | "min_sessions" | "min_social_fraction"
  size_t events_dropped = 0;
};

struct CohortLog {
  std::vector<UserLog> users;  // ascending user_id
  std::vector<Exclusion> exclusions;
  size_t truncated_events = 0;  // events beyond the truncation window
  size_t total_events() const;
};

/// Applies the cohort rules in order: (1) drop users spanning fewer than
/// min_days UTC calendar days (span = last date - first date + 1);
/// (2) truncate each remaining user to the first truncate_days calendar
/// days counted from their first event's date; (3) drop users with fewer
/// than min_sessions events; (4) drop users whose social fraction is
/// below min_social_fraction (computed after truncation).
CohortLog filter_and_truncate_users(const std::vector<AppEvent>& events, const CohortConfig& cfg);

inline bool label_social(const std::string& app_id, const std::set<std::string>& social_apps) {
  return social_apps.count(app_id) > 0;
}

/// Groups events per user without any cohort filtering (pre-cleaning
/// descriptive statistics use this stage).
CohortLog cohort_unfiltered(const std::vector<AppEvent>& events,
                            const std::set<std::string>& social_apps);

/// Built-in social-media app list mapped to Android package names.
const std::set<std::string>& default_social_apps();

/// Plain-text list file: one entry per line, '#' starts a comment.
std::vector<std::string> load_app_list(std::istream& in);
std::vector<std::string> load_app_list_file(const std::string& path);

// Cohort serialization: CSV with header user_id,timestamp,app_id,social,
// rows sorted by user then (timestamp, record index).
void save_cohort_csv(const CohortLog& cohort, std::ostream& out);
CohortLog load_cohort_csv(std::istream& in);

void save_exclusions_csv(const CohortLog& cohort, std::ostream& out);

/// FNV-1a hash of the cohort's canonical CSV serialization.
uint64_t cohort_content_hash(const CohortLog& cohort);

}  // namespace habitlens::ingest
