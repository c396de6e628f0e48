#include "habitlens/events.hpp"

#include <algorithm>
#include <map>
#include <sstream>
#include <stdexcept>

#include "habitlens/common.hpp"
#include "habitlens/csv.hpp"
#include "json.hpp"

namespace habitlens::ingest {

namespace {

void sort_and_group(std::vector<AppEvent>& events) {
  std::sort(events.begin(), events.end(), [](const AppEvent& a, const AppEvent& b) {
    if (a.user_id != b.user_id) return a.user_id < b.user_id;
    if (a.timestamp_ms != b.timestamp_ms) return a.timestamp_ms < b.timestamp_ms;
    return a.record_index < b.record_index;
  });
}

}  // namespace

ParseResult parse_log_file(std::istream& in, LogFormat format, double malformed_tolerance) {
  if (!in) throw std::runtime_error("parse_log_file: unreadable source");
  ParseResult result;

  if (format == LogFormat::Csv) {
    csv::Reader reader(in);
    std::vector<std::string> row;
    if (!reader.next(row)) return result;  // empty file -> empty stream

    int col_user = -1, col_ts = -1, col_app = -1;
    for (size_t i = 0; i < row.size(); ++i) {
      std::string name = to_lower(std::string(trim(row[i])));
      if (name == "user_id") col_user = static_cast<int>(i);
      if (name == "timestamp") col_ts = static_cast<int>(i);
      if (name == "app_id") col_app = static_cast<int>(i);
    }
    if (col_user < 0 || col_ts < 0 || col_app < 0)
      throw std::runtime_error("parse_log_file: header must name user_id, timestamp, app_id");

    size_t max_col = static_cast<size_t>(std::max({col_user, col_ts, col_app}));
    while (reader.next(row)) {
      if (row.size() == 1 && trim(row[0]).empty()) continue;  // stray blank line
      ++result.total_records;
      size_t line = reader.record_line();
      if (row.size() <= max_col) {
        result.issues.push_back({line, "too few fields"});
        continue;
      }
      AppEvent ev;
      ev.user_id = std::string(trim(row[static_cast<size_t>(col_user)]));
      if (ev.user_id.empty()) {
        result.issues.push_back({line, "missing user_id"});
        continue;
      }
      if (!parse_timestamp(row[static_cast<size_t>(col_ts)], ev.timestamp_ms)) {
        result.issues.push_back({line, "bad timestamp: " + row[static_cast<size_t>(col_ts)]});
        continue;
      }
      ev.app_id = to_lower(trim(row[static_cast<size_t>(col_app)]));
      ev.record_index = result.total_records - 1;
      result.events.push_back(std::move(ev));
    }
  } else {
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (trim(line).empty()) continue;
      ++result.total_records;
      nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
      if (j.is_discarded() || !j.is_object()) {
        result.issues.push_back({line_no, "invalid JSON object"});
        continue;
      }
      if (!j.contains("user_id") || !j.contains("timestamp") || !j.contains("app_id")) {
        result.issues.push_back({line_no, "missing required field"});
        continue;
      }
      AppEvent ev;
      ev.user_id = j["user_id"].is_string() ? j["user_id"].get<std::string>() : "";
      if (ev.user_id.empty()) {
        result.issues.push_back({line_no, "missing user_id"});
        continue;
      }
      bool ts_ok = false;
      if (j["timestamp"].is_number_integer()) {
        ev.timestamp_ms = j["timestamp"].get<int64_t>();
        ts_ok = true;
      } else if (j["timestamp"].is_string()) {
        ts_ok = parse_timestamp(j["timestamp"].get<std::string>(), ev.timestamp_ms);
      }
      if (!ts_ok) {
        result.issues.push_back({line_no, "bad timestamp"});
        continue;
      }
      ev.app_id = j["app_id"].is_string() ? to_lower(j["app_id"].get<std::string>()) : "";
      ev.record_index = result.total_records - 1;
      result.events.push_back(std::move(ev));
    }
  }

  if (result.total_records > 0) {
    double bad = static_cast<double>(result.issues.size()) /
                 static_cast<double>(result.total_records);
    if (bad > malformed_tolerance) {
      std::ostringstream msg;
      msg << "parse_log_file: " << result.issues.size() << " of " << result.total_records
          << " records malformed (tolerance " << malformed_tolerance << ")";
      if (!result.issues.empty())
        msg << "; first at line " << result.issues.front().line << ": "
            << result.issues.front().message;
      throw std::runtime_error(msg.str());
    }
  }

  sort_and_group(result.events);
  return result;
}

CleanResult clean_events(const std::vector<AppEvent>& events, const CleaningConfig& cfg) {
  CleanResult out;
  out.events.reserve(events.size());
  for (const AppEvent& ev : events) {
    if (cfg.drop_empty && ev.app_id.empty()) {
      ++out.tallies.empty;
      continue;
    }
    if (cfg.blocked_app_ids.count(ev.app_id)) {
      ++out.tallies.blocked;
      continue;
    }
    bool is_system = false;
    for (const std::string& pat : cfg.system_ui_patterns) {
      if (!pat.empty() && ev.app_id.find(pat) != std::string::npos) {
        is_system = true;
        break;
      }
    }
    if (is_system) {
      ++out.tallies.system;
      continue;
    }
    out.events.push_back(ev);
  }
  return out;
}

CohortConfig::CohortConfig() : social_apps(default_social_apps()) {}

size_t CohortLog::total_events() const {
  size_t n = 0;
  for (const auto& u : users) n += u.events.size();
  return n;
}

namespace {

UserLog make_user_log(std::string user_id, std::vector<AppEvent> events,
                      const std::set<std::string>& social_apps) {
  UserLog u;
  u.user_id = std::move(user_id);
  u.events = std::move(events);
  u.social.resize(u.events.size());
  std::set<std::string> apps;
  for (size_t i = 0; i < u.events.size(); ++i) {
    bool s = label_social(u.events[i].app_id, social_apps);
    u.social[i] = s ? 1 : 0;
    u.social_sessions += s;
    apps.insert(u.events[i].app_id);
  }
  u.sessions = u.events.size();
  u.distinct_apps = apps.size();
  u.social_fraction =
      u.sessions ? static_cast<double>(u.social_sessions) / static_cast<double>(u.sessions) : 0.0;
  return u;
}

}  // namespace

CohortLog cohort_unfiltered(const std::vector<AppEvent>& events,
                            const std::set<std::string>& social_apps) {
  std::map<std::string, std::vector<AppEvent>> by_user;
  for (const AppEvent& ev : events) by_user[ev.user_id].push_back(ev);
  CohortLog cohort;
  for (auto& [user_id, evs] : by_user) {
    std::sort(evs.begin(), evs.end(), [](const AppEvent& a, const AppEvent& b) {
      if (a.timestamp_ms != b.timestamp_ms) return a.timestamp_ms < b.timestamp_ms;
      return a.record_index < b.record_index;
    });
    cohort.users.push_back(make_user_log(user_id, std::move(evs), social_apps));
  }
  return cohort;
}

CohortLog filter_and_truncate_users(const std::vector<AppEvent>& events,
                                    const CohortConfig& cfg) {
  std::map<std::string, std::vector<AppEvent>> by_user;
  for (const AppEvent& ev : events) by_user[ev.user_id].push_back(ev);

  CohortLog cohort;
  for (auto& [user_id, evs] : by_user) {
    std::sort(evs.begin(), evs.end(), [](const AppEvent& a, const AppEvent& b) {
      if (a.timestamp_ms != b.timestamp_ms) return a.timestamp_ms < b.timestamp_ms;
      return a.record_index < b.record_index;
    });

    int64_t first_day = epoch_day(evs.front().timestamp_ms);
    int64_t last_day = epoch_day(evs.back().timestamp_ms);
    int64_t span_days = last_day - first_day + 1;
    if (span_days < cfg.min_days) {
      cohort.exclusions.push_back({user_id, "min_days", evs.size()});
      continue;
    }

    std::vector<AppEvent> kept;
    kept.reserve(evs.size());
    for (AppEvent& ev : evs) {
      if (epoch_day(ev.timestamp_ms) < first_day + cfg.truncate_days)
        kept.push_back(std::move(ev));
      else
        ++cohort.truncated_events;
    }

    if (kept.size() < cfg.min_sessions) {
      cohort.exclusions.push_back({user_id, "min_sessions", kept.size()});
      continue;
    }

    UserLog u = make_user_log(user_id, std::move(kept), cfg.social_apps);
    if (u.social_fraction < cfg.min_social_fraction) {
      cohort.exclusions.push_back({user_id, "min_social_fraction", u.events.size()});
      continue;
    }
    cohort.users.push_back(std::move(u));
  }
  return cohort;
}

const std::set<std::string>& default_social_apps() {
  static const std::set<std::string> apps = {
      "com.discord",
      "com.facebook.katana",
      "com.facebook.lite",
      "com.facebook.local",
      "com.instagram.android",
      "kik.android",
      "com.linkedin.android",
      "com.pinterest",
      "com.reddit.frontpage",
      "com.snapchat.android",
      "com.zhiliaoapp.musically",
      "com.ss.android.ugc.trill",
      "com.tumblr",
      "com.twitter.android",
      "com.google.android.youtube",
  };
  return apps;
}

std::vector<std::string> load_app_list(std::istream& in) {
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::string entry = to_lower(trim(line));
    if (!entry.empty()) out.push_back(entry);
  }
  return out;
}

std::vector<std::string> load_app_list_file(const std::string& path) {
  auto in = csv::open_in(path);
  return load_app_list(in);
}

void save_cohort_csv(const CohortLog& cohort, std::ostream& out) {
  out << "user_id,timestamp,app_id,social\n";
  for (const UserLog& u : cohort.users) {
    for (size_t i = 0; i < u.events.size(); ++i) {
      csv::write_row(out, {u.user_id, std::to_string(u.events[i].timestamp_ms),
                           u.events[i].app_id, u.social[i] ? "1" : "0"});
    }
  }
}

CohortLog load_cohort_csv(std::istream& in) {
  csv::Reader reader(in);
  std::vector<std::string> row;
  if (!reader.next(row)) return {};
  if (row.size() < 4 || trim(row[0]) != "user_id")
    throw std::runtime_error("load_cohort_csv: unexpected header");

  CohortLog cohort;
  UserLog* current = nullptr;
  uint64_t index = 0;
  std::set<std::string> seen;
  std::set<std::string> apps;
  while (reader.next(row)) {
    if (row.size() < 4) throw std::runtime_error("load_cohort_csv: short row");
    const std::string& user = row[0];
    if (!current || current->user_id != user) {
      if (seen.count(user)) throw std::runtime_error("load_cohort_csv: users not contiguous");
      seen.insert(user);
      if (current) {
        current->sessions = current->events.size();
        current->distinct_apps = apps.size();
        current->social_fraction = current->sessions
                                       ? double(current->social_sessions) / current->sessions
                                       : 0.0;
      }
      apps.clear();
      cohort.users.push_back({});
      current = &cohort.users.back();
      current->user_id = user;
    }
    AppEvent ev;
    ev.user_id = user;
    if (!parse_timestamp(row[1], ev.timestamp_ms))
      throw std::runtime_error("load_cohort_csv: bad timestamp at line " +
                               std::to_string(reader.record_line()));
    ev.app_id = row[2];
    ev.record_index = index++;
    bool social = trim(row[3]) == "1";
    apps.insert(ev.app_id);
    current->events.push_back(std::move(ev));
    current->social.push_back(social ? 1 : 0);
    current->social_sessions += social;
  }
  if (current) {
    current->sessions = current->events.size();
    current->distinct_apps = apps.size();
    current->social_fraction =
        current->sessions ? double(current->social_sessions) / current->sessions : 0.0;
  }
  std::sort(cohort.users.begin(), cohort.users.end(),
            [](const UserLog& a, const UserLog& b) { return a.user_id < b.user_id; });
  return cohort;
}

void save_exclusions_csv(const CohortLog& cohort, std::ostream& out) {
  out << "user_id,rule\n";
  for (const Exclusion& e : cohort.exclusions) csv::write_row(out, {e.user_id, e.rule});
}

uint64_t cohort_content_hash(const CohortLog& cohort) {
  std::ostringstream buf;
  save_cohort_csv(cohort, buf);
  std::string s = buf.str();
  return fnv1a64(s.data(), s.size());
}

}  // namespace habitlens::ingest
