#pragma once

#include "habitlens/model.hpp"

namespace habitlens::training {

/// Dense head trained on cached trunk readouts: features -> dropout ->
/// dense ReLU -> sigmoid unit. Used by the frozen fine-tuning regime,
/// where the sequence layers stay fixed and only this block is retrained.
template <typename S>
struct HeadParams {
  nn::Mat<S> dense_W;  // H x R
  nn::Mat<S> dense_b;  // H x 1
  nn::Mat<S> out_w;    // 1 x H
  nn::Mat<S> out_b;    // 1 x 1
};

template <typename S>
HeadParams<S> init_head(int dense_units, int readout_dim, uint64_t seed) {
  Rng rng(seed);
  HeadParams<S> h;
  auto glorot = [&](Eigen::Index rows, Eigen::Index cols) {
    nn::Mat<S> m(rows, cols);
    double limit = std::sqrt(6.0 / (static_cast<double>(rows) + static_cast<double>(cols)));
    for (Eigen::Index i = 0; i < m.size(); ++i)
      m.data()[i] = static_cast<S>(rng.uniform(-limit, limit));
    return m;
  };
  h.dense_W = glorot(dense_units, readout_dim);
  h.dense_b = nn::Mat<S>::Zero(dense_units, 1);
  h.out_w = glorot(1, dense_units);
  h.out_b = nn::Mat<S>::Zero(1, 1);
  return h;
}

template <typename S>
struct HeadLossGrads {
  double loss = 0.0;
  Eigen::Matrix<S, Eigen::Dynamic, 1> probs;
  HeadParams<S> grads;
};

template <typename S>
Eigen::Matrix<S, Eigen::Dynamic, 1> head_predict(const HeadParams<S>& h,
                                                 const nn::Mat<S>& features) {
  nn::Mat<S> hidden = features * h.dense_W.transpose();
  hidden.rowwise() += h.dense_b.col(0).transpose();
  hidden = hidden.cwiseMax(S(0));
  Eigen::Matrix<S, Eigen::Dynamic, 1> z = hidden * h.out_w.transpose();
  z.array() += h.out_b(0, 0);
  Eigen::Matrix<S, Eigen::Dynamic, 1> probs = (S(1) / (S(1) + (-z.array()).exp())).matrix();
  for (Eigen::Index i = 0; i < probs.size(); ++i)
    probs(i) = std::min(static_cast<S>(1.0 - 1e-7), std::max(static_cast<S>(1e-7), probs(i)));
  return probs;
}

/// Weighted mean BCE plus L1/L2 on the dense kernel; exact gradients.
template <typename S>
HeadLossGrads<S> head_loss_and_gradients(const HeadParams<S>& h, const nn::Mat<S>& features,
                                         const std::vector<uint8_t>& labels,
                                         nn::ClassWeightPair weights, double l1, double l2,
                                         double dropout, bool train, Rng* rng) {
  const Eigen::Index B = features.rows();
  nn::Mat<S> fd;
  nn::Mat<S> mask;
  if (train && dropout > 0.0) {
    if (!rng) throw std::invalid_argument("head: train mode requires an rng");
    const double keep = 1.0 - dropout;
    mask.resize(B, features.cols());
    for (Eigen::Index r = 0; r < B; ++r)
      for (Eigen::Index c = 0; c < features.cols(); ++c)
        mask(r, c) = rng->uniform01() < keep ? static_cast<S>(1.0 / keep) : S(0);
    fd = features.cwiseProduct(mask);
  } else {
    fd = features;
  }
  nn::Mat<S> hpre = fd * h.dense_W.transpose();
  hpre.rowwise() += h.dense_b.col(0).transpose();
  nn::Mat<S> hrelu = hpre.cwiseMax(S(0));
  nn::Mat<S> z = hrelu * h.out_w.transpose();
  z.array() += h.out_b(0, 0);

  HeadLossGrads<S> out;
  nn::Mat<S> dz(B, 1);
  double loss = 0.0;
  for (Eigen::Index i = 0; i < B; ++i) {
    double zi = static_cast<double>(z(i, 0));
    int y = labels[static_cast<size_t>(i)] ? 1 : 0;
    double w = y ? weights.w_pos : weights.w_neg;
    loss += w * (std::max(zi, 0.0) - zi * y + std::log1p(std::exp(-std::abs(zi))));
    double sig = 1.0 / (1.0 + std::exp(-zi));
    dz(i, 0) = static_cast<S>(w * (sig - y) / static_cast<double>(B));
  }
  loss /= static_cast<double>(B);
  if (l1 > 0) loss += l1 * h.dense_W.template cast<double>().array().abs().sum();
  if (l2 > 0) loss += l2 * h.dense_W.template cast<double>().array().square().sum();

  out.grads.out_w = dz.transpose() * hrelu;
  out.grads.out_b = nn::Mat<S>::Constant(1, 1, dz.sum());
  nn::Mat<S> dhrelu = dz * h.out_w;
  nn::Mat<S> dhpre = (dhrelu.array() * (hrelu.array() > S(0)).template cast<S>()).matrix();
  out.grads.dense_W = dhpre.transpose() * fd;
  out.grads.dense_b = dhpre.colwise().sum().transpose();
  if (l1 > 0) out.grads.dense_W.array() += static_cast<S>(l1) * h.dense_W.array().sign();
  if (l2 > 0) out.grads.dense_W.array() += static_cast<S>(2.0 * l2) * h.dense_W.array();

  out.loss = loss;
  out.probs = (S(1) / (S(1) + (-z.col(0).array()).exp())).matrix();
  return out;
}

/// Finite-difference check of the head gradients in double precision.
double head_gradient_check(int dense_units, int readout_dim, uint64_t seed, int n_rows);

}  // namespace habitlens::training
