#include <sstream>

#include "doctest.h"
#include "habitlens/common.hpp"
#include "habitlens/events.hpp"

using namespace habitlens;
using ingest::AppEvent;

namespace {

std::vector<AppEvent> make_events(const std::string& user,
                                  const std::vector<std::pair<int64_t, std::string>>& rows) {
  std::vector<AppEvent> events;
  for (size_t i = 0; i < rows.size(); ++i)
    events.push_back({user, rows[i].first, rows[i].second, i});
  return events;
}

int64_t day_ms(int day, int hour = 10) {
  return (static_cast<int64_t>(day) * 24 + hour) * 3'600'000;
}

}  // namespace

TEST_CASE("parse_log_file: empty file yields an empty stream") {
  std::istringstream in("");
  ingest::ParseResult r = parse_log_file(in, ingest::LogFormat::Csv);
  CHECK(r.events.empty());
  CHECK(r.total_records == 0);
}

TEST_CASE("parse_log_file: rows are sorted by timestamp within a user") {
  std::istringstream in(
      "user_id,timestamp,app_id\n"
      "u1,3000,c\n"
      "u1,1000,a\n"
      "u1,2000,b\n");
  ingest::ParseResult r = parse_log_file(in, ingest::LogFormat::Csv);
  REQUIRE(r.events.size() == 3);
  CHECK(r.events[0].app_id == "a");
  CHECK(r.events[1].app_id == "b");
  CHECK(r.events[2].app_id == "c");
}

TEST_CASE("parse_log_file: malformed timestamp is tallied with its line") {
  std::istringstream in(
      "user_id,timestamp,app_id\n"
      "u1,not-a-date,a\n");
  ingest::ParseResult r = parse_log_file(in, ingest::LogFormat::Csv, /*tolerance=*/1.0);
  CHECK(r.events.empty());
  REQUIRE(r.issues.size() == 1);
  CHECK(r.issues[0].line == 2);
}

TEST_CASE("parse_log_file: aborts past the malformed tolerance") {
  std::ostringstream data;
  data << "user_id,timestamp,app_id\n";
  for (int i = 0; i < 100; ++i) data << "u1," << 1000 + i << ",app\n";
  data << "u1,bad,app\nu1,worse,app\n";
  std::istringstream in(data.str());
  CHECK_THROWS(parse_log_file(in, ingest::LogFormat::Csv));  // 2/102 > 1%
}

TEST_CASE("parse_log_file: ISO timestamps and JSONL records") {
  std::istringstream csv_in(
      "user_id,timestamp,app_id\n"
      "u1,2021-01-15T10:00:00.250Z,App.One\n");
  ingest::ParseResult r = parse_log_file(csv_in, ingest::LogFormat::Csv);
  REQUIRE(r.events.size() == 1);
  CHECK(r.events[0].app_id == "app.one");  // lowercased
  CHECK(format_iso8601(r.events[0].timestamp_ms) == "2021-01-15T10:00:00.250Z");

  std::istringstream jsonl_in(
      "{\"user_id\":\"u1\",\"timestamp\":1000,\"app_id\":\"A\"}\n"
      "{\"user_id\":\"u1\",\"timestamp\":\"2021-01-15T00:00:00Z\",\"app_id\":\"b\"}\n"
      "{\"timestamp\":1,\"app_id\":\"x\"}\n");
  ingest::ParseResult j = parse_log_file(jsonl_in, ingest::LogFormat::Jsonl, 1.0);
  CHECK(j.events.size() == 2);
  CHECK(j.issues.size() == 1);
}

TEST_CASE("clean_events applies the three removal rules and tallies them") {
  std::vector<AppEvent> events = make_events(
      "u1", {{1, "chrome"}, {2, ""}, {3, "com.android.systemui"}, {4, "instagram"}});
  ingest::CleanResult r = clean_events(events, ingest::CleaningConfig{});
  REQUIRE(r.events.size() == 2);
  CHECK(r.events[0].app_id == "chrome");
  CHECK(r.events[1].app_id == "instagram");
  CHECK(r.tallies.empty == 1);
  CHECK(r.tallies.system == 1);
  CHECK(r.tallies.blocked == 0);
}

TEST_CASE("clean_events: no matches leaves the stream identical, and is idempotent") {
  std::vector<AppEvent> events = make_events("u1", {{1, "a"}, {2, "b"}, {3, "c"}});
  ingest::CleaningConfig cfg;
  ingest::CleanResult once = clean_events(events, cfg);
  CHECK(once.events.size() == 3);
  CHECK(once.tallies.total() == 0);

  Rng rng(3);
  std::vector<AppEvent> noisy;
  const char* pool[] = {"chrome", "", "x.launcher.y", "maps", "com.android.systemui"};
  for (int i = 0; i < 500; ++i)
    noisy.push_back({"u", i, pool[rng.uniform_int(0, 4)], static_cast<uint64_t>(i)});
  ingest::CleanResult first = clean_events(noisy, cfg);
  ingest::CleanResult second = clean_events(first.events, cfg);
  CHECK(second.events.size() == first.events.size());
  CHECK(second.tallies.total() == 0);
}

TEST_CASE("clean_events: a corpus with a known system fraction loses exactly that share") {
  // 3706 of 10000 events carry system patterns, mirroring a heavy cleaning pass
  std::vector<AppEvent> events;
  for (int i = 0; i < 10000; ++i) {
    bool system = i % 10000 < 3706;
    events.push_back({"u", i, system ? "com.sec.launcher" : "chrome",
                      static_cast<uint64_t>(i)});
  }
  ingest::CleanResult r = clean_events(events, ingest::CleaningConfig{});
  CHECK(r.events.size() == 6294);
  CHECK(r.tallies.system == 3706);
}

TEST_CASE("filter_and_truncate_users: span shorter than 14 days is excluded by rule 1") {
  std::vector<AppEvent> events;
  for (int d = 0; d < 13; ++d) {
    auto e = make_events("u1", {{day_ms(d), "a"}});
    events.push_back(e[0]);
  }
  ingest::CohortConfig cfg;
  cfg.min_sessions = 1;
  cfg.min_social_fraction = 0.0;
  ingest::CohortLog cohort = filter_and_truncate_users(events, cfg);
  CHECK(cohort.users.empty());
  REQUIRE(cohort.exclusions.size() == 1);
  CHECK(cohort.exclusions[0].rule == "min_days");
}

TEST_CASE("filter_and_truncate_users: 20 days of data are cut to the first 14 dates") {
  std::vector<AppEvent> events;
  std::set<std::string> social = {"social"};
  for (int d = 0; d < 20; ++d)
    for (int k = 0; k < 100; ++k)
      events.push_back({"u1", day_ms(d) + k, k % 10 == 0 ? "social" : "app",
                        static_cast<uint64_t>(d * 100 + k)});
  ingest::CohortConfig cfg;
  cfg.social_apps = social;
  cfg.min_sessions = 1000;
  ingest::CohortLog cohort = filter_and_truncate_users(events, cfg);
  REQUIRE(cohort.users.size() == 1);
  CHECK(cohort.users[0].events.size() == 1400);
  CHECK(cohort.truncated_events == 600);
  CHECK(epoch_day(cohort.users[0].events.back().timestamp_ms) == 13);
}

TEST_CASE("filter_and_truncate_users: the social-fraction bound is inclusive") {
  auto build = [&](size_t social_count) {
    std::vector<AppEvent> events;
    for (size_t i = 0; i < 1000; ++i) {
      int day = static_cast<int>(i % 14);
      events.push_back({"u1", day_ms(day) + static_cast<int64_t>(i),
                        i < social_count ? "social" : "other", i});
    }
    ingest::CohortConfig cfg;
    cfg.social_apps = {"social"};
    return filter_and_truncate_users(events, cfg);
  };
  ingest::CohortLog at_49 = build(49);
  CHECK(at_49.users.empty());
  REQUIRE(at_49.exclusions.size() == 1);
  CHECK(at_49.exclusions[0].rule == "min_social_fraction");

  ingest::CohortLog at_50 = build(50);  // exactly 5.0% is retained
  CHECK(at_50.users.size() == 1);
}

TEST_CASE("filter_and_truncate_users: event conservation across rules") {
  Rng rng(11);
  std::vector<AppEvent> events;
  uint64_t idx = 0;
  for (int u = 0; u < 8; ++u) {
    int days = static_cast<int>(rng.uniform_int(5, 25));
    int per_day = static_cast<int>(rng.uniform_int(10, 120));
    for (int d = 0; d < days; ++d)
      for (int k = 0; k < per_day; ++k)
        events.push_back({"user" + std::to_string(u), day_ms(d) + k,
                          rng.bernoulli(0.1) ? "social" : "app" + std::to_string(k % 7),
                          idx++});
  }
  ingest::CohortConfig cfg;
  cfg.social_apps = {"social"};
  cfg.min_sessions = 400;
  ingest::CohortLog cohort = filter_and_truncate_users(events, cfg);

  size_t retained = cohort.total_events();
  size_t excluded = 0;
  for (const auto& e : cohort.exclusions) excluded += e.events_dropped;
  CHECK(retained + excluded + cohort.truncated_events == events.size());

  for (const auto& user : cohort.users) {
    CHECK(user.sessions >= cfg.min_sessions);
    CHECK(user.social_fraction >= cfg.min_social_fraction);
    // summaries match recomputation
    size_t social = 0;
    std::set<std::string> apps;
    for (size_t i = 0; i < user.events.size(); ++i) {
      social += ingest::label_social(user.events[i].app_id, cfg.social_apps);
      apps.insert(user.events[i].app_id);
      CHECK(static_cast<bool>(user.social[i]) ==
            ingest::label_social(user.events[i].app_id, cfg.social_apps));
    }
    CHECK(user.social_sessions == social);
    CHECK(user.distinct_apps == apps.size());
  }
}

TEST_CASE("label_social against the built-in list") {
  const auto& apps = ingest::default_social_apps();
  CHECK(ingest::label_social("com.instagram.android", apps));
  CHECK(!ingest::label_social("com.whatsapp", apps));  // messaging apps are not social media
  CHECK(!ingest::label_social("com.example.foo", apps));
}

TEST_CASE("app list files support comments and case folding") {
  std::istringstream in("# social apps\nFoo.App\n\n bar # trailing\n");
  auto list = ingest::load_app_list(in);
  REQUIRE(list.size() == 2);
  CHECK(list[0] == "foo.app");
  CHECK(list[1] == "bar");
}

TEST_CASE("cohort serialization is deterministic and round-trips") {
  std::vector<AppEvent> events;
  for (int u = 0; u < 3; ++u)
    for (int d = 0; d < 14; ++d)
      for (int k = 0; k < 10; ++k)
        events.push_back({"user" + std::to_string(u), day_ms(d) + k,
                          k % 3 == 0 ? "social" : "app", static_cast<uint64_t>(d * 10 + k)});
  ingest::CohortConfig cfg;
  cfg.social_apps = {"social"};
  cfg.min_sessions = 100;
  ingest::CohortLog cohort = filter_and_truncate_users(events, cfg);

  std::ostringstream a, b;
  save_cohort_csv(cohort, a);
  save_cohort_csv(cohort, b);
  CHECK(a.str() == b.str());

  std::istringstream back(a.str());
  ingest::CohortLog loaded = ingest::load_cohort_csv(back);
  REQUIRE(loaded.users.size() == cohort.users.size());
  CHECK(ingest::cohort_content_hash(loaded) == ingest::cohort_content_hash(cohort));
  for (size_t u = 0; u < loaded.users.size(); ++u) {
    CHECK(loaded.users[u].user_id == cohort.users[u].user_id);
    CHECK(loaded.users[u].social_sessions == cohort.users[u].social_sessions);
    CHECK(loaded.users[u].distinct_apps == cohort.users[u].distinct_apps);
  }
}
