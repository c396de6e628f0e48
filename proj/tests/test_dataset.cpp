#include "doctest.h"
#include "habitlens/common.hpp"
#include "habitlens/dataset.hpp"

#include <cstdio>
#include <filesystem>

using namespace habitlens;

namespace {

/// One-user cohort from (timestamp, app, social) triples.
ingest::CohortLog one_user(const std::vector<std::tuple<int64_t, std::string, bool>>& rows,
                           const std::string& user = "u1") {
  ingest::UserLog u;
  u.user_id = user;
  std::set<std::string> apps;
  for (size_t i = 0; i < rows.size(); ++i) {
    auto [ts, app, social] = rows[i];
    u.events.push_back({user, ts, app, i});
    u.social.push_back(social ? 1 : 0);
    u.social_sessions += social;
    apps.insert(app);
  }
  u.sessions = u.events.size();
  u.distinct_apps = apps.size();
  u.social_fraction = u.sessions ? double(u.social_sessions) / u.sessions : 0.0;
  ingest::CohortLog cohort;
  cohort.users.push_back(std::move(u));
  return cohort;
}

}  // namespace

TEST_CASE("temporal_split floor arithmetic") {
  data::SplitIndex s100 = data::temporal_split(100);
  CHECK(s100.train_end == 50);
  CHECK(s100.val_end == 75);

  data::SplitIndex s4 = data::temporal_split(4);
  CHECK(s4.train_end == 2);
  CHECK(s4.val_end == 3);  // train 2, val 1, test 1

  data::SplitIndex s5 = data::temporal_split(5);
  CHECK(s5.train_end == 2);
  CHECK(s5.val_end == 3);
  CHECK(s5.n - s5.val_end == 2);

  CHECK_THROWS(data::temporal_split(3));
}

TEST_CASE("build_vocab orders by frequency with lexicographic ties") {
  std::vector<std::string> apps = {"a", "a", "a", "b"};
  data::Vocab v = data::build_vocab(apps);
  CHECK(v.encode("a") == 2);
  CHECK(v.encode("b") == 3);
  CHECK(v.decode(2) == "a");

  std::vector<std::string> tied = {"beta", "alpha"};
  data::Vocab vt = data::build_vocab(tied);
  CHECK(vt.encode("alpha") == 2);
  CHECK(vt.encode("beta") == 3);

  CHECK(v.encode("unseen") == 1);  // OOV
  CHECK_THROWS(data::build_vocab(std::vector<std::string>{}));
}

TEST_CASE("vocab comes from the pooled training split only") {
  // "zz" appears only in the test segment and must encode to OOV
  ingest::CohortLog cohort = one_user({{1, "a", false},
                                       {2, "a", false},
                                       {3, "b", false},
                                       {4, "a", true},
                                       {5, "b", false},
                                       {6, "zz", true},
                                       {7, "zz", false},
                                       {8, "a", false}});
  std::vector<data::SplitIndex> splits = {data::temporal_split(8)};
  data::Vocab v = data::build_vocab(cohort, splits);
  CHECK(v.encode("a") == 2);
  CHECK(v.encode("b") == 3);
  CHECK(v.encode("zz") == 1);
}

TEST_CASE("build_sequences: pre-padding and one row per event") {
  ingest::CohortLog cohort =
      one_user({{1, "a", false}, {2, "b", false}, {3, "c", true}, {4, "a", false}});
  std::vector<data::SplitIndex> splits = {{3, 3, 4}};  // train = all but last
  std::vector<std::string> train_apps = {"a", "b", "c"};
  data::Vocab v = data::build_vocab(train_apps);
  data::SequenceDataset ds = data::build_sequences(cohort, splits, v, 2);

  REQUIRE(ds.rows() == 4);
  const int a = v.encode("a"), b = v.encode("b");
  // train rows: ([0,0] -> a), ([0,a] -> b), ([a,b] -> c)
  CHECK(ds.row(0)[0] == 0);
  CHECK(ds.row(0)[1] == 0);
  CHECK(ds.targets[0] == 0);
  CHECK(ds.row(1)[0] == 0);
  CHECK(ds.row(1)[1] == a);
  CHECK(ds.row(2)[0] == a);
  CHECK(ds.row(2)[1] == b);
  CHECK(ds.targets[2] == 1);
  // the first test-segment row must not see training events
  CHECK(ds.row(3)[0] == 0);
  CHECK(ds.row(3)[1] == 0);
  CHECK(ds.split_tag[3] == static_cast<uint8_t>(data::Split::Test));
}

TEST_CASE("build_sequences: the first event of a long window is all padding") {
  ingest::CohortLog cohort = one_user({{1, "a", false}, {2, "b", true}});
  std::vector<data::SplitIndex> splits = {{1, 1, 2}};
  std::vector<std::string> train_apps = {"a"};
  data::Vocab v = data::build_vocab(train_apps);
  data::SequenceDataset ds = data::build_sequences(cohort, splits, v, 20);
  for (int t = 0; t < 20; ++t) CHECK(ds.row(0)[t] == 0);
}

TEST_CASE("build_sequences: same-day windows ignore earlier dates") {
  // target at 00:05, all predecessors on the previous date
  ingest::CohortLog cohort = one_user({{10, "a", false},
                                       {20, "b", false},
                                       {kMsPerDay + 5 * 60'000, "c", true}});
  std::vector<data::SplitIndex> splits = {{3, 3, 3}};
  std::vector<std::string> apps = {"a", "b", "c"};
  data::Vocab v = data::build_vocab(apps);
  data::SequenceDataset ds = data::build_sequences(cohort, splits, v, 4, /*same_day=*/true);
  REQUIRE(ds.rows() == 3);
  for (int t = 0; t < 4; ++t) CHECK(ds.row(2)[t] == 0);
  // within the same dataset, same-date predecessors are still present
  CHECK(ds.row(1)[3] == v.encode("a"));
}

TEST_CASE("leakage freedom: windows never cross users or splits") {
  Rng rng(29);
  ingest::CohortLog cohort;
  for (int u = 0; u < 4; ++u) {
    std::vector<std::tuple<int64_t, std::string, bool>> rows;
    int n = static_cast<int>(rng.uniform_int(8, 40));
    for (int i = 0; i < n; ++i)
      rows.push_back({i * 1000 + u, "app" + std::to_string(rng.uniform_int(0, 5)),
                      rng.bernoulli(0.3)});
    ingest::CohortLog single = one_user(rows, "user" + std::to_string(u));
    cohort.users.push_back(single.users[0]);
  }
  std::vector<data::SplitIndex> splits;
  for (const auto& u : cohort.users) splits.push_back(data::temporal_split(u.events.size()));
  data::Vocab v = data::build_vocab(cohort, splits);
  const int L = 5;
  data::SequenceDataset ds = data::build_sequences(cohort, splits, v, L);

  size_t expected_rows = 0;
  for (const auto& u : cohort.users) expected_rows += u.events.size();
  CHECK(ds.rows() == expected_rows);

  // reconstruct each window independently and compare
  size_t row = 0;
  for (size_t u = 0; u < cohort.users.size(); ++u) {
    const auto& events = cohort.users[u].events;
    const data::SplitIndex& s = splits[u];
    auto bounds = [&](size_t t) -> std::pair<size_t, size_t> {
      if (t < s.train_end) return {0, s.train_end};
      if (t < s.val_end) return {s.train_end, s.val_end};
      return {s.val_end, s.n};
    };
    for (size_t t = 0; t < events.size(); ++t, ++row) {
      auto [lo, hi] = bounds(t);
      (void)hi;
      CHECK(ds.user_index[row] == u);
      CHECK(ds.target_ts[row] == events[t].timestamp_ms);
      for (int k = 0; k < L; ++k) {
        size_t source = t >= static_cast<size_t>(L - k) ? t - (L - k) : SIZE_MAX;
        int32_t code = ds.row(row)[k];
        if (source == SIZE_MAX || source < lo) {
          CHECK(code == 0);
        } else {
          CHECK(code == v.encode(events[source].app_id));
        }
      }
    }
  }
}

TEST_CASE("class_weights formula and degenerate inputs") {
  ingest::CohortLog cohort = one_user([] {
    std::vector<std::tuple<int64_t, std::string, bool>> rows;
    for (int i = 0; i < 100; ++i) rows.push_back({i, "a", i < 25});
    return rows;
  }());
  std::vector<data::SplitIndex> splits = {{100, 100, 100}};
  std::vector<std::string> apps = {"a"};
  data::Vocab v = data::build_vocab(apps);
  data::SequenceDataset ds = data::build_sequences(cohort, splits, v, 3);
  std::vector<uint32_t> rows = data::rows_of(ds, data::Split::Train);

  data::ClassWeights w = data::class_weights(ds, rows);
  CHECK(w.w_neg == doctest::Approx(100.0 / 150.0).epsilon(1e-12));  // 0.6667
  CHECK(w.w_pos == doctest::Approx(2.0).epsilon(1e-12));

  // balanced labels give unit weights
  ingest::CohortLog balanced = one_user([] {
    std::vector<std::tuple<int64_t, std::string, bool>> rows;
    for (int i = 0; i < 100; ++i) rows.push_back({i, "a", i % 2 == 0});
    return rows;
  }());
  data::SequenceDataset ds2 = data::build_sequences(balanced, splits, v, 3);
  data::ClassWeights wb = data::class_weights(ds2, data::rows_of(ds2, data::Split::Train));
  CHECK(wb.w_neg == doctest::Approx(1.0));
  CHECK(wb.w_pos == doctest::Approx(1.0));

  ingest::CohortLog single = one_user([] {
    std::vector<std::tuple<int64_t, std::string, bool>> rows;
    for (int i = 0; i < 10; ++i) rows.push_back({i, "a", false});
    return rows;
  }());
  std::vector<data::SplitIndex> splits10 = {{10, 10, 10}};
  data::SequenceDataset ds3 = data::build_sequences(single, splits10, v, 3);
  CHECK_THROWS(data::class_weights(ds3, data::rows_of(ds3, data::Split::Train)));
}

TEST_CASE("tabular_features: one-hot positions") {
  ingest::CohortLog cohort =
      one_user({{1, "a", false}, {2, "a", false}, {3, "a", false}, {4, "b", true}});
  std::vector<data::SplitIndex> splits = {{4, 4, 4}};
  std::vector<std::string> apps = {"a", "b"};
  data::Vocab v = data::build_vocab(apps);  // V=4: pad, oov, a, b
  data::SequenceDataset ds = data::build_sequences(cohort, splits, v, 3);
  std::vector<uint32_t> rows = {0, 3};
  data::TabularFeatures f = data::tabular_features(ds, rows);

  CHECK(f.n_cols == 12);
  // row 0 is all padding: ones in each position's pad column
  CHECK(f.cols[0] == 0 * 4 + 0);
  CHECK(f.cols[1] == 1 * 4 + 0);
  CHECK(f.cols[2] == 2 * 4 + 0);
  // row for target "b" sees [a,a,a]
  CHECK(f.cols[3] == 0 * 4 + 2);
  CHECK(f.cols[4] == 1 * 4 + 2);
  CHECK(f.cols[5] == 2 * 4 + 2);
}

TEST_CASE("tabular_features: column sums equal per-position code histograms") {
  Rng rng(31);
  std::vector<std::tuple<int64_t, std::string, bool>> rows;
  for (int i = 0; i < 60; ++i)
    rows.push_back({i, "app" + std::to_string(rng.uniform_int(0, 3)), rng.bernoulli(0.4)});
  ingest::CohortLog cohort = one_user(rows);
  std::vector<data::SplitIndex> splits = {data::temporal_split(60)};
  data::Vocab v = data::build_vocab(cohort, splits);
  data::SequenceDataset ds = data::build_sequences(cohort, splits, v, 4);
  std::vector<uint32_t> all_rows(ds.rows());
  for (size_t i = 0; i < ds.rows(); ++i) all_rows[i] = static_cast<uint32_t>(i);
  data::TabularFeatures f = data::tabular_features(ds, all_rows);

  std::vector<size_t> col_sums(f.n_cols, 0);
  for (uint32_t c : f.cols) ++col_sums[c];
  std::vector<size_t> histogram(f.n_cols, 0);
  for (size_t r = 0; r < ds.rows(); ++r)
    for (int p = 0; p < ds.seq_len; ++p)
      ++histogram[static_cast<size_t>(p) * v.size() + static_cast<size_t>(ds.row(r)[p])];
  CHECK(col_sums == histogram);
}

TEST_CASE("dataset serialization round-trips") {
  Rng rng(37);
  std::vector<std::tuple<int64_t, std::string, bool>> rows;
  for (int i = 0; i < 30; ++i)
    rows.push_back({i * 500, "app" + std::to_string(rng.uniform_int(0, 4)), rng.bernoulli(0.3)});
  ingest::CohortLog cohort = one_user(rows);
  std::vector<data::SplitIndex> splits = {data::temporal_split(30)};
  data::Vocab v = data::build_vocab(cohort, splits);
  data::SequenceDataset ds = data::build_sequences(cohort, splits, v, 6);

  auto dir = std::filesystem::temp_directory_path() / "habitlens_ds_test";
  std::filesystem::create_directories(dir);
  std::string bin = (dir / "ds.bin").string();
  std::string side = (dir / "ds.json").string();
  data::save_dataset(ds, v, splits, {}, 0xabcdef, bin, side);

  data::Vocab v2;
  data::SequenceDataset loaded = data::load_dataset(bin, side, &v2);
  CHECK(loaded.rows() == ds.rows());
  CHECK(loaded.inputs == ds.inputs);
  CHECK(loaded.targets == ds.targets);
  CHECK(loaded.split_tag == ds.split_tag);
  CHECK(loaded.target_ts == ds.target_ts);
  CHECK(v2.code_to_app == v.code_to_app);
  std::filesystem::remove_all(dir);
}
