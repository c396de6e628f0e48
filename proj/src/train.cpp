#include "habitlens/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "habitlens/csv.hpp"

namespace habitlens::training {

std::vector<uint8_t> DataView::labels() const {
  std::vector<uint8_t> y(rows.size());
  for (size_t i = 0; i < rows.size(); ++i) y[i] = ds->targets[rows[i]];
  return y;
}

std::vector<int> DataView::labels_int() const {
  std::vector<int> y(rows.size());
  for (size_t i = 0; i < rows.size(); ++i) y[i] = ds->targets[rows[i]];
  return y;
}

void write_history_csv(const FitHistory& h, std::ostream& out) {
  out << "epoch,train_loss,val_loss\n";
  for (size_t i = 0; i < h.epochs.size(); ++i)
    csv::write_row(out, {std::to_string(i + 1), format_double(h.epochs[i].train_loss, 6),
                         format_double(h.epochs[i].val_loss, 6)});
}

namespace {

nn::Codes gather_codes(const data::SequenceDataset& ds, std::span<const uint32_t> rows) {
  nn::Codes codes(static_cast<Eigen::Index>(rows.size()), ds.seq_len);
  for (size_t i = 0; i < rows.size(); ++i) {
    const int32_t* src = ds.row(rows[i]);
    for (int32_t t = 0; t < ds.seq_len; ++t) codes(static_cast<Eigen::Index>(i), t) = src[t];
  }
  return codes;
}

std::vector<uint8_t> gather_labels(const data::SequenceDataset& ds,
                                   std::span<const uint32_t> rows) {
  std::vector<uint8_t> y(rows.size());
  for (size_t i = 0; i < rows.size(); ++i) y[i] = ds.targets[rows[i]];
  return y;
}

}  // namespace

Eigen::VectorXd predict(const nn::ModelSpec& spec, const nn::Parameters<float>& params,
                        const DataView& view, int batch_size) {
  Eigen::VectorXd probs(static_cast<Eigen::Index>(view.rows.size()));
  for (size_t start = 0; start < view.rows.size(); start += static_cast<size_t>(batch_size)) {
    size_t end = std::min(view.rows.size(), start + static_cast<size_t>(batch_size));
    std::span<const uint32_t> chunk(view.rows.data() + start, end - start);
    nn::Codes codes = gather_codes(*view.ds, chunk);
    auto p = nn::model_forward(spec, params, codes, false, nullptr);
    for (size_t i = start; i < end; ++i)
      probs(static_cast<Eigen::Index>(i)) = static_cast<double>(p(static_cast<Eigen::Index>(i - start)));
  }
  return probs;
}

double validation_bce(const nn::ModelSpec& spec, const nn::Parameters<float>& params,
                      const DataView& view, nn::ClassWeightPair weights, int batch_size) {
  double total = 0.0;
  for (size_t start = 0; start < view.rows.size(); start += static_cast<size_t>(batch_size)) {
    size_t end = std::min(view.rows.size(), start + static_cast<size_t>(batch_size));
    std::span<const uint32_t> chunk(view.rows.data() + start, end - start);
    nn::Codes codes = gather_codes(*view.ds, chunk);
    std::vector<uint8_t> labels = gather_labels(*view.ds, chunk);
    auto p = nn::model_forward(spec, params, codes, false, nullptr);
    total += nn::bce_from_probs(p, labels, weights) * static_cast<double>(chunk.size());
  }
  return total / static_cast<double>(view.rows.size());
}

metrics::EvalReport evaluate_view(const nn::ModelSpec& spec, const nn::Parameters<float>& params,
                                  const DataView& view, int batch_size) {
  Eigen::VectorXd probs = predict(spec, params, view, batch_size);
  std::vector<double> scores(probs.data(), probs.data() + probs.size());
  std::vector<int> labels = view.labels_int();
  return metrics::evaluate(scores, labels);
}

FitResult fit(const nn::ModelSpec& spec, nn::Parameters<float> init, const DataView& train_view,
              const DataView& val_view, const TrainConfig& cfg, const FitHooks& hooks) {
  if (train_view.rows.empty()) throw std::invalid_argument("fit: empty training set");
  if (val_view.rows.empty()) throw std::invalid_argument("fit: empty validation set");
  if (cfg.batch_size < 1 || cfg.patience < 1)
    throw std::invalid_argument("fit: batch_size and patience must be >= 1");
  spec.validate();

  nn::ClassWeightPair weights;
  if (cfg.weighted) {
    data::ClassWeights cw = data::class_weights(*train_view.ds, train_view.rows);
    weights = {cw.w_neg, cw.w_pos};
  }

  FitResult result;
  result.spec = spec;
  result.params = std::move(init);
  nn::Parameters<float> best = result.params;
  int best_epoch = 0;

  EarlyStopper stopper(cfg.patience, cfg.min_delta);
  if (hooks.include_initial) {
    double v0 = hooks.val_loss_stub
                    ? hooks.val_loss_stub(0)
                    : validation_bce(spec, result.params, val_view, weights, cfg.batch_size);
    stopper.prime(v0);
  }

  nn::AdamState<float> adam = nn::make_adam_state(result.params);
  Rng shuffle_rng(derive_seed(cfg.shuffle_seed, "fit-shuffle"));
  Rng dropout_rng(derive_seed(cfg.shuffle_seed, "fit-dropout"));

  std::vector<uint32_t> order = train_view.rows;
  int epoch = 0;
  for (epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
      size_t end = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
      std::span<const uint32_t> chunk(order.data() + start, end - start);
      nn::Codes codes = gather_codes(*train_view.ds, chunk);
      std::vector<uint8_t> labels = gather_labels(*train_view.ds, chunk);
      auto lg = nn::loss_and_gradients(spec, result.params, codes, labels, weights, true,
                                       &dropout_rng);
      nn::adam_step(adam, result.params, lg.grads, cfg.lr);
      loss_sum += lg.loss * static_cast<double>(chunk.size());
    }
    double train_loss = loss_sum / static_cast<double>(order.size());
    double val_loss = hooks.val_loss_stub
                          ? hooks.val_loss_stub(epoch)
                          : validation_bce(spec, result.params, val_view, weights, cfg.batch_size);
    result.history.epochs.push_back({train_loss, val_loss});
    if (hooks.on_epoch) hooks.on_epoch(epoch, result.params);

    bool stop = stopper.observe(val_loss);
    if (stopper.improved()) {
      best = result.params;
      best_epoch = epoch;
    }
    if (stop) break;
  }
  result.history.best_epoch = best_epoch;
  result.history.stopped_epoch = std::min(epoch, cfg.max_epochs);
  result.params = std::move(best);
  return result;
}

FitResult fit_from_spec(const nn::ModelSpec& spec, uint64_t init_seed, const DataView& train_view,
                        const DataView& val_view, const TrainConfig& cfg, const FitHooks& hooks) {
  return fit(spec, nn::init_params<float>(spec, init_seed), train_view, val_view, cfg, hooks);
}

FitResult fine_tune_full(const nn::ModelSpec& spec, const nn::Parameters<float>& global_params,
                         const DataView& train_view, const DataView& val_view, TrainConfig cfg) {
  FitHooks hooks;
  hooks.include_initial = true;
  if (cfg.max_epochs == 0) {
    FitResult r;
    r.spec = spec;
    r.params = global_params;
    r.history.best_epoch = 0;
    r.history.stopped_epoch = 0;
    return r;
  }
  return fit(spec, global_params, train_view, val_view, cfg, hooks);
}

// ------------------------------------------------------ frozen fine-tune

double head_gradient_check(int dense_units, int readout_dim, uint64_t seed, int n_rows) {
  Rng rng(derive_seed(seed, "headgc"));
  nn::Mat<double> features(n_rows, readout_dim);
  for (Eigen::Index i = 0; i < features.size(); ++i) features.data()[i] = rng.normal();
  std::vector<uint8_t> labels(static_cast<size_t>(n_rows));
  for (auto& y : labels) y = rng.bernoulli(0.5) ? 1 : 0;

  HeadParams<double> head = init_head<double>(dense_units, readout_dim, derive_seed(seed, "hp"));
  const double l1 = 1e-4, l2 = 1e-3;
  auto lg = head_loss_and_gradients(head, features, labels, {1.0, 1.0}, l1, l2, 0.0, false,
                                    nullptr);

  std::vector<nn::Mat<double>*> mats = {&head.dense_W, &head.dense_b, &head.out_w, &head.out_b};
  std::vector<nn::Mat<double>*> grads = {&lg.grads.dense_W, &lg.grads.dense_b, &lg.grads.out_w,
                                         &lg.grads.out_b};
  const double h = 1e-5;
  double max_rel = 0.0;
  for (size_t m = 0; m < mats.size(); ++m) {
    for (Eigen::Index i = 0; i < mats[m]->size(); ++i) {
      double* slot = mats[m]->data() + i;
      double orig = *slot;
      *slot = orig + h;
      double lp = head_loss_and_gradients(head, features, labels, {1.0, 1.0}, l1, l2, 0.0,
                                          false, nullptr)
                      .loss;
      *slot = orig - h;
      double lm = head_loss_and_gradients(head, features, labels, {1.0, 1.0}, l1, l2, 0.0,
                                          false, nullptr)
                      .loss;
      *slot = orig;
      double numeric = (lp - lm) / (2.0 * h);
      double analytic = grads[m]->data()[i];
      double rel = std::abs(analytic - numeric) /
                   std::max({std::abs(analytic), std::abs(numeric), 1e-8});
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

namespace {

struct HeadFit {
  HeadParams<float> params;
  FitHistory history;
  double val_auc = 0.5;
  metrics::EvalReport val_report;
};

HeadFit fit_head(const nn::Mat<float>& train_x, const std::vector<uint8_t>& train_y,
                 const nn::Mat<float>& val_x, const std::vector<uint8_t>& val_y, int dense_units,
                 double dropout_top, double l1, double l2, double lr, const TrainConfig& cfg,
                 uint64_t seed) {
  HeadFit out;
  out.params = init_head<float>(dense_units, static_cast<int>(train_x.cols()),
                                derive_seed(seed, "head-init"));
  HeadParams<float> best = out.params;
  int best_epoch = 0;

  nn::ClassWeightPair weights;
  if (cfg.weighted) {
    size_t pos = 0;
    for (uint8_t y : train_y) pos += y;
    size_t neg = train_y.size() - pos;
    if (pos == 0 || neg == 0) throw std::invalid_argument("fit_head: single-class training set");
    weights.w_pos = static_cast<double>(train_y.size()) / (2.0 * static_cast<double>(pos));
    weights.w_neg = static_cast<double>(train_y.size()) / (2.0 * static_cast<double>(neg));
  }

  // head-only parameter mirror for Adam (trunk tensors absent)
  std::vector<nn::Mat<float>*> mats = {&out.params.dense_W, &out.params.dense_b,
                                       &out.params.out_w, &out.params.out_b};
  std::vector<nn::Mat<float>> m_state, v_state;
  for (auto* m : mats) {
    m_state.push_back(nn::Mat<float>::Zero(m->rows(), m->cols()));
    v_state.push_back(nn::Mat<float>::Zero(m->rows(), m->cols()));
  }
  int64_t step = 0;

  EarlyStopper stopper(cfg.patience, cfg.min_delta);
  Rng shuffle_rng(derive_seed(seed, "head-shuffle"));
  Rng dropout_rng(derive_seed(seed, "head-dropout"));
  std::vector<uint32_t> order(static_cast<size_t>(train_x.rows()));
  std::iota(order.begin(), order.end(), 0);

  int epoch = 0;
  for (epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
      size_t end = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
      nn::Mat<float> bx(static_cast<Eigen::Index>(end - start), train_x.cols());
      std::vector<uint8_t> by(end - start);
      for (size_t i = start; i < end; ++i) {
        bx.row(static_cast<Eigen::Index>(i - start)) = train_x.row(order[i]);
        by[i - start] = train_y[order[i]];
      }
      auto lg = head_loss_and_gradients(out.params, bx, by, weights, l1, l2, dropout_top, true,
                                        &dropout_rng);
      std::vector<nn::Mat<float>*> gmats = {&lg.grads.dense_W, &lg.grads.dense_b,
                                            &lg.grads.out_w, &lg.grads.out_b};
      ++step;
      const double bc1 = 1.0 - std::pow(0.9, static_cast<double>(step));
      const double bc2 = 1.0 - std::pow(0.999, static_cast<double>(step));
      for (size_t m = 0; m < mats.size(); ++m) {
        m_state[m] = 0.9f * m_state[m] + 0.1f * (*gmats[m]);
        v_state[m] =
            (0.999f * v_state[m].array() + 0.001f * gmats[m]->array().square()).matrix();
        mats[m]->array() -= static_cast<float>(lr / bc1) * m_state[m].array() /
                            ((v_state[m].array() / static_cast<float>(bc2)).sqrt() + 1e-8f);
      }
      loss_sum += lg.loss * static_cast<double>(end - start);
    }

    auto val_probs = head_predict(out.params, val_x);
    double val_loss = 0.0;
    for (Eigen::Index i = 0; i < val_probs.size(); ++i) {
      double p = std::min(1.0 - 1e-12, std::max(1e-12, static_cast<double>(val_probs(i))));
      int y = val_y[static_cast<size_t>(i)] ? 1 : 0;
      double w = y ? weights.w_pos : weights.w_neg;
      val_loss += -w * (y ? std::log(p) : std::log1p(-p));
    }
    val_loss /= static_cast<double>(val_probs.size());
    out.history.epochs.push_back(
        {loss_sum / static_cast<double>(order.size()), val_loss});

    bool stop = stopper.observe(val_loss);
    if (stopper.improved()) {
      best = out.params;
      best_epoch = epoch;
    }
    if (stop) break;
  }
  out.history.best_epoch = best_epoch;
  out.history.stopped_epoch = std::min(epoch, cfg.max_epochs);
  out.params = std::move(best);

  auto val_probs = head_predict(out.params, val_x);
  std::vector<double> scores(val_probs.size());
  std::vector<int> labels(val_probs.size());
  for (Eigen::Index i = 0; i < val_probs.size(); ++i) {
    scores[static_cast<size_t>(i)] = static_cast<double>(val_probs(i));
    labels[static_cast<size_t>(i)] = val_y[static_cast<size_t>(i)] ? 1 : 0;
  }
  out.val_report = metrics::evaluate(scores, labels);
  out.val_auc = out.val_report.auc.value_or(0.5);
  return out;
}

}  // namespace

FrozenFineTuneResult fine_tune_frozen(const nn::ModelSpec& spec,
                                      const nn::Parameters<float>& global_params,
                                      const DataView& train_view, const DataView& val_view,
                                      int budget, int random_starts, uint64_t seed,
                                      const TrainConfig& base_cfg) {
  if (train_view.rows.empty() || val_view.rows.empty())
    throw std::invalid_argument("fine_tune_frozen: empty train or validation set");

  // Frozen trunk features, computed once in eval mode.
  auto features_of = [&](const DataView& view) {
    nn::Mat<float> features(static_cast<Eigen::Index>(view.rows.size()), spec.readout_dim());
    const int bs = base_cfg.batch_size;
    for (size_t start = 0; start < view.rows.size(); start += static_cast<size_t>(bs)) {
      size_t end = std::min(view.rows.size(), start + static_cast<size_t>(bs));
      std::span<const uint32_t> chunk(view.rows.data() + start, end - start);
      nn::Codes codes = gather_codes(*view.ds, chunk);
      nn::Mat<float> r = nn::trunk_readout(spec, global_params, codes);
      features.middleRows(static_cast<Eigen::Index>(start), r.rows()) = r;
    }
    return features;
  };
  nn::Mat<float> train_x = features_of(train_view);
  nn::Mat<float> val_x = features_of(val_view);
  std::vector<uint8_t> train_y = train_view.labels();
  std::vector<uint8_t> val_y = val_view.labels();

  const hpo::SearchSpace& space = hpo::SearchSpace::fine_tune();
  const int i_units = space.index_of("dense_units");
  const int i_l1 = space.index_of("l1_dense");
  const int i_l2 = space.index_of("l2_dense");
  const int i_drop = space.index_of("dropout_top");
  const int i_lr = space.index_of("lr");

  int trial_no = 0;
  auto train_trial = [&](const hpo::HyperConfig& cfg, uint64_t trial_seed) {
    return fit_head(train_x, train_y, val_x, val_y,
                    static_cast<int>(std::llround(cfg[static_cast<size_t>(i_units)])),
                    cfg[static_cast<size_t>(i_drop)], cfg[static_cast<size_t>(i_l1)],
                    cfg[static_cast<size_t>(i_l2)], cfg[static_cast<size_t>(i_lr)], base_cfg,
                    trial_seed);
  };

  std::vector<uint64_t> trial_seeds;
  hpo::ObjectiveFn objective = [&](const hpo::HyperConfig& cfg) {
    uint64_t trial_seed = derive_seed(seed, "frozen-trial", static_cast<uint64_t>(trial_no++));
    trial_seeds.push_back(trial_seed);
    HeadFit hf = train_trial(cfg, trial_seed);
    hpo::TrialOutcome out;
    out.objective = hf.val_auc;
    out.metrics = {hf.val_report.accuracy, hf.val_report.precision, hf.val_report.recall,
                   hf.val_report.f1};
    return out;
  };

  FrozenFineTuneResult result;
  result.trials = hpo::bayesian_search(space, objective, budget, random_starts,
                                       derive_seed(seed, "frozen-search"));
  const hpo::Trial& best = result.trials.best();
  HeadFit hf = train_trial(best.config,
                           trial_seeds[static_cast<size_t>(result.trials.best_index)]);

  result.spec = spec;
  result.spec.dense_units = static_cast<int>(std::llround(best.config[static_cast<size_t>(i_units)]));
  result.spec.dropout_top = best.config[static_cast<size_t>(i_drop)];
  result.spec.l1_dense = best.config[static_cast<size_t>(i_l1)];
  result.spec.l2_dense = best.config[static_cast<size_t>(i_l2)];

  result.params = global_params;
  result.params.dense_W = hf.params.dense_W;
  result.params.dense_b = hf.params.dense_b;
  result.params.out_w = hf.params.out_w;
  result.params.out_b = hf.params.out_b;
  result.best_history = hf.history;
  return result;
}

// ----------------------------------------------------- logistic baseline

namespace {

Eigen::VectorXd lr_scores(const Eigen::VectorXd& w, double b, const data::TabularFeatures& x) {
  const size_t L = static_cast<size_t>(x.seq_len);
  Eigen::VectorXd z = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(x.n_rows), b);
  for (size_t i = 0; i < x.n_rows; ++i) {
    double s = 0.0;
    const uint32_t* cols = x.cols.data() + i * L;
    for (size_t p = 0; p < L; ++p) s += w(cols[p]);
    z(static_cast<Eigen::Index>(i)) += s;
  }
  return z;
}

struct LrFit {
  Eigen::VectorXd w;
  double b = 0.0;
  int iterations = 0;
};

LrFit lr_gradient_descent(const data::TabularFeatures& x, const std::vector<uint8_t>& y,
                          double l2) {
  const size_t n = x.n_rows;
  const size_t L = static_cast<size_t>(x.seq_len);
  LrFit fit;
  fit.w = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(x.n_cols));
  fit.b = 0.0;

  // Gradient Lipschitz bound for one-hot rows with exactly L active
  // features: ||x||^2 = L, so step 1/(L/4 + l2) keeps plain GD stable.
  const double step = 1.0 / (static_cast<double>(L) / 4.0 + l2);
  Eigen::VectorXd grad(static_cast<Eigen::Index>(x.n_cols));

  const int max_iters = 10000;
  for (int it = 0; it < max_iters; ++it) {
    grad = l2 * fit.w;
    double gb = 0.0;
    Eigen::VectorXd z = lr_scores(fit.w, fit.b, x);
    for (size_t i = 0; i < n; ++i) {
      double p = 1.0 / (1.0 + std::exp(-z(static_cast<Eigen::Index>(i))));
      double d = (p - static_cast<double>(y[i])) / static_cast<double>(n);
      const uint32_t* cols = x.cols.data() + i * L;
      for (size_t q = 0; q < L; ++q) grad(cols[q]) += d;
      gb += d;
    }
    fit.w -= step * grad;
    fit.b -= step * gb;
    fit.iterations = it + 1;
    double gnorm = std::sqrt(grad.squaredNorm() + gb * gb);
    if (gnorm < 1e-6) break;
  }
  return fit;
}

}  // namespace

Eigen::VectorXd logistic_predict(const LogisticModel& model, const data::TabularFeatures& x) {
  Eigen::VectorXd z = lr_scores(model.w, model.b, x);
  return (1.0 / (1.0 + (-z.array()).exp())).matrix();
}

LogisticModel fit_logistic_baseline(const data::TabularFeatures& train_x,
                                    const std::vector<uint8_t>& train_y,
                                    const data::TabularFeatures& val_x,
                                    const std::vector<uint8_t>& val_y,
                                    std::span<const double> l2_grid) {
  if (train_x.n_rows == 0 || train_x.n_rows != train_y.size())
    throw std::invalid_argument("fit_logistic_baseline: bad training data");
  size_t pos = 0;
  for (uint8_t y : train_y) pos += y;
  if (pos == 0 || pos == train_y.size())
    throw std::invalid_argument("fit_logistic_baseline: single-class training set");

  LogisticModel best;
  double best_auc = -1.0;
  std::vector<int> val_labels(val_y.begin(), val_y.end());
  for (double l2 : l2_grid) {
    LrFit fit = lr_gradient_descent(train_x, train_y, l2);
    LogisticModel candidate;
    candidate.w = std::move(fit.w);
    candidate.b = fit.b;
    candidate.l2 = l2;
    candidate.iterations = fit.iterations;
    Eigen::VectorXd val_probs = logistic_predict(candidate, val_x);
    std::vector<double> scores(val_probs.data(), val_probs.data() + val_probs.size());
    candidate.val_auc = metrics::roc_auc(scores, val_labels).value_or(0.5);
    if (candidate.val_auc > best_auc) {
      best_auc = candidate.val_auc;
      best = std::move(candidate);
    }
  }
  return best;
}

}  // namespace habitlens::training
