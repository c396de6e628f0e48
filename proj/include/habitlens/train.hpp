#pragma once

#include <functional>
#include <span>

#include "habitlens/dataset.hpp"
#include "habitlens/head.hpp"
#include "habitlens/hpo.hpp"
#include "habitlens/metrics.hpp"
#include "habitlens/model.hpp"

namespace habitlens::training {

struct TrainConfig {
  int max_epochs = 1000;
  int batch_size = 1024;
  int patience = 5;
  double lr = 1e-3;
  uint64_t shuffle_seed = 0;
  bool weighted = false;
  double min_delta = 0.0;
};

struct EpochStat {
  double train_loss = 0.0;
  double val_loss = 0.0;
};

/// Epochs are 1-based; best_epoch 0 means the initial parameters were the
/// best candidate (possible when fine-tuning keeps the starting snapshot).
struct FitHistory {
  std::vector<EpochStat> epochs;
  int best_epoch = 0;
  int stopped_epoch = 0;
};

void write_history_csv(const FitHistory& h, std::ostream& out);

/// Patience-based early stopping on validation loss: stop after
/// `patience` consecutive epochs whose loss fails to beat the running
/// best by more than min_delta.
class EarlyStopper {
 public:
  EarlyStopper(int patience, double min_delta) : patience_(patience), min_delta_(min_delta) {}

  void prime(double baseline) { best_ = baseline; }

  /// Returns true when training should stop after this observation.
  bool observe(double val_loss) {
    improved_ = val_loss < best_ - min_delta_;
    if (improved_) {
      best_ = val_loss;
      bad_ = 0;
    } else {
      ++bad_;
    }
    return bad_ >= patience_;
  }

  bool improved() const { return improved_; }
  double best() const { return best_; }

 private:
  int patience_;
  double min_delta_;
  double best_ = std::numeric_limits<double>::infinity();
  int bad_ = 0;
  bool improved_ = false;
};

/// A dataset plus the row indices a consumer is allowed to touch.
struct DataView {
  const data::SequenceDataset* ds = nullptr;
  std::vector<uint32_t> rows;

  size_t size() const { return rows.size(); }
  std::vector<uint8_t> labels() const;
  std::vector<int> labels_int() const;
};

struct FitHooks {
  // Test seam: overrides the computed validation loss per epoch.
  std::function<double(int epoch)> val_loss_stub;
  std::function<void(int epoch, const nn::Parameters<float>&)> on_epoch;
  // Evaluate the starting parameters as an epoch-0 snapshot candidate, so
  // a fit can never return parameters worse on validation than its
  // starting point (fine-tuning relies on this).
  bool include_initial = false;
};

struct FitResult {
  nn::ModelSpec spec;
  nn::Parameters<float> params;
  FitHistory history;
};

/// Shuffled mini-batch Adam with early stopping; returns the parameter
/// snapshot from the best validation epoch. Throws on empty train or
/// validation views.
FitResult fit(const nn::ModelSpec& spec, nn::Parameters<float> init, const DataView& train_view,
              const DataView& val_view, const TrainConfig& cfg, const FitHooks& hooks = {});

FitResult fit_from_spec(const nn::ModelSpec& spec, uint64_t init_seed, const DataView& train_view,
                        const DataView& val_view, const TrainConfig& cfg,
                        const FitHooks& hooks = {});

/// Continues training a pre-trained model on one person's data at a low
/// learning rate (default 1e-4), fresh optimizer state, best-snapshot
/// return including the starting parameters.
FitResult fine_tune_full(const nn::ModelSpec& spec, const nn::Parameters<float>& global_params,
                         const DataView& train_view, const DataView& val_view, TrainConfig cfg);

/// Eval-mode probabilities for a view, in view order.
Eigen::VectorXd predict(const nn::ModelSpec& spec, const nn::Parameters<float>& params,
                        const DataView& view, int batch_size = 1024);

/// Unregularized validation BCE (weighted only when weights differ from 1).
double validation_bce(const nn::ModelSpec& spec, const nn::Parameters<float>& params,
                      const DataView& view, nn::ClassWeightPair weights, int batch_size = 1024);

metrics::EvalReport evaluate_view(const nn::ModelSpec& spec, const nn::Parameters<float>& params,
                                  const DataView& view, int batch_size = 1024);

// ------------------------------------------------------ frozen fine-tune

struct FrozenFineTuneResult {
  nn::ModelSpec spec;             // head dimensions/penalties replaced by the search winner
  nn::Parameters<float> params;   // trunk bitwise-identical to the global model
  hpo::TrialLog trials;
  FitHistory best_history;
};

/// Freezes the embedding and sequence layers, caches their readouts, and
/// re-runs hyperparameter search over the head-only space; the best head
/// by validation AUC is attached to the unchanged trunk.
FrozenFineTuneResult fine_tune_frozen(const nn::ModelSpec& spec,
                                      const nn::Parameters<float>& global_params,
                                      const DataView& train_view, const DataView& val_view,
                                      int budget, int random_starts, uint64_t seed,
                                      const TrainConfig& base_cfg);

// ----------------------------------------------------- logistic baseline

struct LogisticModel {
  Eigen::VectorXd w;  // L*V one-hot coefficients
  double b = 0.0;
  double l2 = 0.0;       // chosen penalty
  double val_auc = 0.5;  // of the chosen penalty
  int iterations = 0;
};

inline const std::vector<double>& default_l2_grid() {
  static const std::vector<double> grid = {1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0};
  return grid;
}

/// Regularized logistic regression over position-wise one-hot features,
/// full-batch gradient descent with a fixed step until the gradient norm
/// drops below 1e-6 or 10k iterations; L2 strength picked on validation
/// AUC. Throws on a single-class training set.
LogisticModel fit_logistic_baseline(const data::TabularFeatures& train_x,
                                    const std::vector<uint8_t>& train_y,
                                    const data::TabularFeatures& val_x,
                                    const std::vector<uint8_t>& val_y,
                                    std::span<const double> l2_grid = default_l2_grid());

Eigen::VectorXd logistic_predict(const LogisticModel& model, const data::TabularFeatures& x);

}  // namespace habitlens::training
