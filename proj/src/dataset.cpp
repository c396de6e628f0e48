#include "habitlens/dataset.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "habitlens/common.hpp"
#include "habitlens/csv.hpp"
#include "json.hpp"

namespace habitlens::data {

SplitIndex temporal_split(size_t n, SplitFractions f) {
  if (n < 4) throw std::invalid_argument("temporal_split: need at least 4 events");
  SplitIndex s;
  s.n = n;
  s.train_end = static_cast<size_t>(f.train * static_cast<double>(n));
  s.val_end = static_cast<size_t>((f.train + f.val) * static_cast<double>(n));
  return s;
}

Vocab build_vocab(std::span<const std::string> training_apps) {
  if (training_apps.empty()) throw std::invalid_argument("build_vocab: empty training pool");
  std::map<std::string, size_t> counts;
  for (const std::string& app : training_apps) ++counts[app];

  std::vector<std::pair<std::string, size_t>> order(counts.begin(), counts.end());
  std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  Vocab v;
  v.code_to_app = {"<pad>", "<oov>"};
  for (const auto& [app, count] : order) {
    v.app_to_code[app] = static_cast<int32_t>(v.code_to_app.size());
    v.code_to_app.push_back(app);
  }
  return v;
}

Vocab build_vocab(const ingest::CohortLog& cohort, const std::vector<SplitIndex>& splits) {
  std::vector<std::string> apps;
  for (size_t u = 0; u < cohort.users.size(); ++u) {
    const auto& events = cohort.users[u].events;
    for (size_t i = 0; i < splits[u].train_end; ++i) apps.push_back(events[i].app_id);
  }
  return build_vocab(apps);
}

SequenceDataset build_sequences(const ingest::CohortLog& cohort,
                                const std::vector<SplitIndex>& splits, const Vocab& vocab,
                                int seq_len, bool same_day) {
  if (seq_len < 1) throw std::invalid_argument("build_sequences: seq_len must be >= 1");
  if (cohort.users.size() != splits.size())
    throw std::invalid_argument("build_sequences: splits/users mismatch");

  SequenceDataset ds;
  ds.seq_len = seq_len;
  ds.vocab_size = vocab.size();
  ds.same_day = same_day;

  size_t total = 0;
  for (const auto& u : cohort.users) total += u.events.size();
  ds.inputs.reserve(total * static_cast<size_t>(seq_len));
  ds.targets.reserve(total);
  ds.user_index.reserve(total);
  ds.split_tag.reserve(total);
  ds.target_ts.reserve(total);

  for (size_t u = 0; u < cohort.users.size(); ++u) {
    const ingest::UserLog& user = cohort.users[u];
    ds.user_ids.push_back(user.user_id);
    const SplitIndex& split = splits[u];
    if (split.n != user.events.size())
      throw std::invalid_argument("build_sequences: split does not match event count");

    std::vector<int32_t> codes(user.events.size());
    for (size_t i = 0; i < user.events.size(); ++i) codes[i] = vocab.encode(user.events[i].app_id);

    struct Segment {
      size_t lo, hi;
      Split tag;
    };
    const Segment segments[3] = {{0, split.train_end, Split::Train},
                                 {split.train_end, split.val_end, Split::Val},
                                 {split.val_end, split.n, Split::Test}};

    for (const Segment& seg : segments) {
      for (size_t t = seg.lo; t < seg.hi; ++t) {
        size_t lo = seg.lo;
        if (t - lo > static_cast<size_t>(seq_len)) lo = t - static_cast<size_t>(seq_len);
        if (same_day) {
          int64_t day = epoch_day(user.events[t].timestamp_ms);
          while (lo < t && epoch_day(user.events[lo].timestamp_ms) != day) ++lo;
        }
        size_t have = t - lo;
        size_t pad = static_cast<size_t>(seq_len) - have;
        for (size_t p = 0; p < pad; ++p) ds.inputs.push_back(0);
        for (size_t i = lo; i < t; ++i) ds.inputs.push_back(codes[i]);
        ds.targets.push_back(user.social[t]);
        ds.user_index.push_back(static_cast<uint32_t>(u));
        ds.split_tag.push_back(static_cast<uint8_t>(seg.tag));
        ds.target_ts.push_back(user.events[t].timestamp_ms);
      }
    }
  }
  return ds;
}

std::vector<uint32_t> rows_of(const SequenceDataset& ds, Split split) {
  std::vector<uint32_t> rows;
  for (size_t i = 0; i < ds.rows(); ++i)
    if (ds.split_tag[i] == static_cast<uint8_t>(split)) rows.push_back(static_cast<uint32_t>(i));
  return rows;
}

std::vector<uint32_t> rows_of(const SequenceDataset& ds, Split split, uint32_t user) {
  std::vector<uint32_t> rows;
  for (size_t i = 0; i < ds.rows(); ++i)
    if (ds.split_tag[i] == static_cast<uint8_t>(split) && ds.user_index[i] == user)
      rows.push_back(static_cast<uint32_t>(i));
  return rows;
}

ClassWeights class_weights(const SequenceDataset& ds, std::span<const uint32_t> rows) {
  if (rows.empty()) throw std::invalid_argument("class_weights: empty training rows");
  size_t n_pos = 0;
  for (uint32_t r : rows) n_pos += ds.targets[r];
  size_t n_neg = rows.size() - n_pos;
  if (n_pos == 0 || n_neg == 0)
    throw std::invalid_argument("class_weights: single-class training set");
  ClassWeights w;
  w.w_neg = static_cast<double>(rows.size()) / (2.0 * static_cast<double>(n_neg));
  w.w_pos = static_cast<double>(rows.size()) / (2.0 * static_cast<double>(n_pos));
  return w;
}

TabularFeatures tabular_features(const SequenceDataset& ds, std::span<const uint32_t> rows) {
  TabularFeatures f;
  f.n_rows = rows.size();
  f.seq_len = ds.seq_len;
  f.vocab_size = ds.vocab_size;
  f.n_cols = static_cast<size_t>(ds.seq_len) * static_cast<size_t>(ds.vocab_size);
  f.cols.reserve(f.n_rows * static_cast<size_t>(ds.seq_len));
  for (uint32_t r : rows) {
    const int32_t* in = ds.row(r);
    for (int32_t p = 0; p < ds.seq_len; ++p)
      f.cols.push_back(static_cast<uint32_t>(p) * static_cast<uint32_t>(ds.vocab_size) +
                       static_cast<uint32_t>(in[p]));
  }
  return f;
}

namespace {

constexpr char kMagic[8] = {'H', 'L', 'D', 'S', '1', 0, 0, 0};

template <typename T>
void write_vec(std::ostream& out, const std::vector<T>& v) {
  uint64_t n = v.size();
  out.write(reinterpret_cast<const char*>(&n), sizeof(n));
  out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(n * sizeof(T)));
}

template <typename T>
void read_vec(std::istream& in, std::vector<T>& v) {
  uint64_t n = 0;
  in.read(reinterpret_cast<char*>(&n), sizeof(n));
  v.resize(n);
  in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(T)));
  if (!in) throw std::runtime_error("load_dataset: truncated binary file");
}

}  // namespace

void save_dataset(const SequenceDataset& ds, const Vocab& vocab,
                  const std::vector<SplitIndex>& splits, SplitFractions fractions,
                  uint64_t source_hash, const std::string& bin_path,
                  const std::string& json_path) {
  auto out = csv::open_out(bin_path);
  out.write(kMagic, sizeof(kMagic));
  int32_t header[2] = {ds.seq_len, ds.vocab_size};
  out.write(reinterpret_cast<const char*>(header), sizeof(header));
  write_vec(out, ds.inputs);
  write_vec(out, ds.targets);
  write_vec(out, ds.user_index);
  write_vec(out, ds.split_tag);
  write_vec(out, ds.target_ts);

  nlohmann::json j;
  j["tool_version"] = kToolVersion;
  j["seq_len"] = ds.seq_len;
  j["same_day"] = ds.same_day;
  j["fractions"] = {{"train", fractions.train}, {"val", fractions.val}};
  char hash_hex[32];
  std::snprintf(hash_hex, sizeof(hash_hex), "%016llx",
                static_cast<unsigned long long>(source_hash));
  j["source_hash"] = hash_hex;
  j["rows"] = ds.rows();
  j["user_ids"] = ds.user_ids;
  nlohmann::json jsplits = nlohmann::json::array();
  for (const SplitIndex& s : splits)
    jsplits.push_back({{"train_end", s.train_end}, {"val_end", s.val_end}, {"n", s.n}});
  j["splits"] = jsplits;
  // codes 0/1 are implicit (<pad>/<oov>)
  j["vocab"] = std::vector<std::string>(vocab.code_to_app.begin() + 2, vocab.code_to_app.end());
  auto sidecar = csv::open_out(json_path);
  sidecar << j.dump(2) << "\n";
}

SequenceDataset load_dataset(const std::string& bin_path, const std::string& json_path,
                             Vocab* vocab_out) {
  auto in = csv::open_in(bin_path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("load_dataset: bad magic");
  SequenceDataset ds;
  int32_t header[2];
  in.read(reinterpret_cast<char*>(header), sizeof(header));
  ds.seq_len = header[0];
  ds.vocab_size = header[1];
  read_vec(in, ds.inputs);
  read_vec(in, ds.targets);
  read_vec(in, ds.user_index);
  read_vec(in, ds.split_tag);
  read_vec(in, ds.target_ts);

  auto side = csv::open_in(json_path);
  nlohmann::json j = nlohmann::json::parse(side);
  ds.same_day = j.at("same_day").get<bool>();
  ds.user_ids = j.at("user_ids").get<std::vector<std::string>>();
  if (vocab_out) {
    Vocab v;
    v.code_to_app = {"<pad>", "<oov>"};
    for (const auto& app : j.at("vocab")) {
      v.app_to_code[app.get<std::string>()] = static_cast<int32_t>(v.code_to_app.size());
      v.code_to_app.push_back(app.get<std::string>());
    }
    *vocab_out = std::move(v);
  }
  return ds;
}

uint64_t split_hash(const std::vector<SplitIndex>& splits) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (const SplitIndex& s : splits) {
    h = fnv1a64(&s.train_end, sizeof(s.train_end), h);
    h = fnv1a64(&s.val_end, sizeof(s.val_end), h);
    h = fnv1a64(&s.n, sizeof(s.n), h);
  }
  return h;
}

}  // namespace habitlens::data
