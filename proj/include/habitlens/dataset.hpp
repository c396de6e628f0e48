#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "habitlens/events.hpp"

namespace habitlens::data {

struct SplitFractions {
  double train = 0.50;
  double val = 0.25;  // test gets the remainder
};

/// Per-user temporal boundaries: [0,train_end) train, [train_end,val_end)
/// validation, [val_end,n) test.
struct SplitIndex {
  size_t train_end = 0;
  size_t val_end = 0;
  size_t n = 0;
};

/// Floor split; remainder events fall to the test set. Throws when n < 4
/// (cannot form three non-degenerate sets).
SplitIndex temporal_split(size_t n, SplitFractions fractions = {});

/// Integer code space for app ids. Code 0 is padding, 1 is
/// out-of-vocabulary; real apps get codes 2.. ordered by descending
/// training-split frequency with lexicographic tie-break.
struct Vocab {
  std::vector<std::string> code_to_app;  // [0]="<pad>", [1]="<oov>"
  std::map<std::string, int32_t> app_to_code;

  int32_t size() const { return static_cast<int32_t>(code_to_app.size()); }
  int32_t encode(const std::string& app) const {
    auto it = app_to_code.find(app);
    return it == app_to_code.end() ? 1 : it->second;
  }
  const std::string& decode(int32_t code) const { return code_to_app.at(code); }
};

/// Vocab from an explicit bag of training-split app ids. Throws on empty.
Vocab build_vocab(std::span<const std::string> training_apps);

/// Vocab from the pooled global training split of a cohort.
Vocab build_vocab(const ingest::CohortLog& cohort, const std::vector<SplitIndex>& splits);

enum class Split : uint8_t { Train = 0, Val = 1, Test = 2 };

/// Fixed-length predecessor windows with binary targets. Row inputs are
/// the codes of the target's L predecessors inside the same user and
/// split, left-padded with 0; with same_day set, predecessors are further
/// restricted to the target's UTC calendar date.
struct SequenceDataset {
  int32_t seq_len = 20;
  int32_t vocab_size = 0;
  bool same_day = false;
  std::vector<std::string> user_ids;

  std::vector<int32_t> inputs;  // rows() * seq_len, row-major
  std::vector<uint8_t> targets;
  std::vector<uint32_t> user_index;
  std::vector<uint8_t> split_tag;
  std::vector<int64_t> target_ts;

  size_t rows() const { return targets.size(); }
  const int32_t* row(size_t i) const { return inputs.data() + i * static_cast<size_t>(seq_len); }
};

SequenceDataset build_sequences(const ingest::CohortLog& cohort,
                                const std::vector<SplitIndex>& splits, const Vocab& vocab,
                                int seq_len, bool same_day = false);

/// Row indices of one split, optionally restricted to one user.
std::vector<uint32_t> rows_of(const SequenceDataset& ds, Split split);
std::vector<uint32_t> rows_of(const SequenceDataset& ds, Split split, uint32_t user);

struct ClassWeights {
  double w_neg = 1.0;
  double w_pos = 1.0;
};

/// w_c = n / (2 * n_c) over the given training rows; throws when a class
/// is missing (degenerate person).
ClassWeights class_weights(const SequenceDataset& ds, std::span<const uint32_t> rows);

/// Position-wise one-hot encoding: column p*V + code for position p.
/// Stored sparse; every row has exactly L active columns.
struct TabularFeatures {
  size_t n_rows = 0;
  size_t n_cols = 0;  // L * V
  int32_t seq_len = 0;
  int32_t vocab_size = 0;
  std::vector<uint32_t> cols;  // n_rows * seq_len
};

TabularFeatures tabular_features(const SequenceDataset& ds, std::span<const uint32_t> rows);

/// Columnar binary + JSON sidecar (vocab, L, split fractions, same-day
/// flag, source hash) for exact re-runs.
void save_dataset(const SequenceDataset& ds, const Vocab& vocab,
                  const std::vector<SplitIndex>& splits, SplitFractions fractions,
                  uint64_t source_hash, const std::string& bin_path,
                  const std::string& json_path);
SequenceDataset load_dataset(const std::string& bin_path, const std::string& json_path,
                             Vocab* vocab_out = nullptr);

/// Stable digest of per-user split boundaries ("splits held constant"
/// checks compare this across runs and regimes).
uint64_t split_hash(const std::vector<SplitIndex>& splits);

}  // namespace habitlens::data
