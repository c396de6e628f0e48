// Exercises the shared-library surface the way an embedding application
// would: only habitlens.h, no internal headers.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "doctest.h"
#include "habitlens.h"

namespace fs = std::filesystem;

namespace {

struct SessionGuard {
  hl_session* s = nullptr;
  ~SessionGuard() { hl_session_destroy(s); }
};

fs::path fresh_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / ("habitlens_capi_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("version string looks sane") {
  std::string v = hl_version();
  CHECK(!v.empty());
  CHECK(v.find('.') != std::string::npos);
}

TEST_CASE("session creation validates its config JSON") {
  hl_session* s = nullptr;
  CHECK(hl_session_create("{not json", &s) == HL_ERR_ARGUMENT);
  CHECK(s == nullptr);
  CHECK(hl_session_create("[1,2,3]", &s) == HL_ERR_ARGUMENT);
  CHECK(hl_session_create(nullptr, &s) == HL_OK);
  hl_session_destroy(s);
  CHECK(hl_session_create("{}", nullptr) == HL_ERR_ARGUMENT);
}

TEST_CASE("unknown commands and missing options surface as errors") {
  SessionGuard g;
  REQUIRE(hl_session_create("{}", &g.s) == HL_OK);
  CHECK(hl_run(g.s, "explode", nullptr) == HL_ERR_ARGUMENT);
  CHECK(std::string(hl_session_last_error(g.s)).find("unknown command") != std::string::npos);

  CHECK(hl_run(g.s, "simulate", nullptr) == HL_ERR_ARGUMENT);  // out_dir missing
  CHECK(std::string(hl_session_last_error(g.s)).find("out_dir") != std::string::npos);
}

TEST_CASE("hl_roc_auc matches the known example and flags degenerate labels") {
  const double scores[] = {0.1, 0.4, 0.35, 0.8};
  const int32_t labels[] = {0, 0, 1, 1};
  double auc = 0.0;
  REQUIRE(hl_roc_auc(scores, labels, 4, &auc) == HL_OK);
  CHECK(auc == doctest::Approx(0.75));

  const int32_t ones[] = {1, 1, 1, 1};
  REQUIRE(hl_roc_auc(scores, ones, 4, &auc) == HL_OK);
  CHECK(std::isnan(auc));

  CHECK(hl_roc_auc(nullptr, labels, 4, &auc) == HL_ERR_ARGUMENT);
  CHECK(hl_roc_auc(scores, labels, 0, &auc) == HL_ERR_ARGUMENT);
}

TEST_CASE("simulate and ingest run through the session interface") {
  fs::path dir = fresh_dir("pipeline");
  std::string config = std::string("{\"out_dir\":\"") + dir.string() +
                       "\",\"seed\":5,\"users\":4,\"days\":14,"
                       "\"sessions_per_day\":30,\"habit\":0.7}";
  SessionGuard g;
  REQUIRE(hl_session_create(config.c_str(), &g.s) == HL_OK);
  REQUIRE(hl_run(g.s, "simulate", nullptr) == HL_OK);
  CHECK(fs::exists(dir / "cohort.csv"));
  CHECK(fs::exists(dir / "truth.json"));
  CHECK(fs::exists(dir / "social_apps.txt"));

  REQUIRE(hl_run(g.s, "ingest", "{\"min_sessions\":200}") == HL_OK);
  CHECK(fs::exists(dir / "cohort_clean.csv"));
  CHECK(fs::exists(dir / "exclusions.csv"));
  CHECK(fs::exists(dir / "manifest.json"));

  // per-call overrides must not leak into the session config
  REQUIRE(hl_run(g.s, "ngram", "{\"n\":2,\"top\":5,\"per_user\":false}") == HL_OK);
  CHECK(fs::exists(dir / "ngram_pooled.csv"));
  fs::remove_all(dir);
}

TEST_CASE("the CLI honors exit-code conventions") {
  const char* cli = std::getenv("HABITLENS_CLI");
  if (!cli) return;  // only run where ctest provides the binary path
  std::string base(cli);
  CHECK(WEXITSTATUS(std::system((base + " --help > /dev/null 2>&1").c_str())) == 0);
  CHECK(WEXITSTATUS(std::system((base + " bogus-command > /dev/null 2>&1").c_str())) == 2);
  CHECK(WEXITSTATUS(std::system((base + " simulate --no-such-flag > /dev/null 2>&1").c_str())) ==
        2);
  // runtime failure: ingest pointed at a missing file
  fs::path dir = fresh_dir("cli");
  CHECK(WEXITSTATUS(std::system((base + " ingest --out-dir " + dir.string() +
                                 " --data /nonexistent.csv > /dev/null 2>&1")
                                    .c_str())) == 1);
  fs::remove_all(dir);
}
