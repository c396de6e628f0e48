#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "habitlens/common.hpp"
#include "json.hpp"

namespace habitlens::nn {

enum class Arch { Lstm, Transformer };

const char* arch_name(Arch a);
Arch arch_from_name(const std::string& name);

/// Architecture description. dropout_inner is recurrent dropout for the
/// LSTM and attention-probability dropout for the transformer. L1/L2
/// penalties apply to the kernels of the sequence layers (l*_layer) and
/// of the dense hidden layer (l*_dense); biases, the embedding, the
/// input projection and the output unit are never regularized.
struct ModelSpec {
  Arch arch = Arch::Lstm;
  int32_t vocab_size = 0;
  int32_t seq_len = 20;
  int embed_dim = 10;
  int num_layers = 1;
  int layer_units = 16;
  int dense_units = 16;
  int heads = 2;  // transformer; layer_units must be divisible by heads
  double dropout_top = 0.0;
  double dropout_inner = 0.0;
  double l1_layer = 0.0, l2_layer = 0.0;
  double l1_dense = 0.0, l2_dense = 0.0;

  bool needs_in_proj() const { return arch == Arch::Transformer && embed_dim != layer_units; }
  int readout_dim() const { return layer_units; }

  /// Structural validity (any positive sizes; transformer units divisible
  /// by heads). Throws std::invalid_argument.
  void validate() const;
  /// Additionally enforces the tuning-grid ranges and step sizes used by
  /// the built-in search spaces.
  void validate_search_ranges() const;
};

nlohmann::json model_spec_to_json(const ModelSpec& spec);
ModelSpec model_spec_from_json(const nlohmann::json& j);

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

using Codes = Eigen::Matrix<int32_t, Eigen::Dynamic, Eigen::Dynamic>;  // B x L

enum class RegGroup { None, Layer, Dense };

template <typename S>
struct Parameters {
  Mat<S> embedding;  // V x E
  Mat<S> in_proj;    // D x E when the transformer embedding dim differs from D
  Mat<S> in_proj_b;  // D x 1

  struct LstmLayer {
    Mat<S> W;  // 4U x in   gate order i, f, g, o
    Mat<S> U;  // 4U x U
    Mat<S> b;  // 4U x 1    forget-gate block initialized to 1
  };
  struct TfLayer {
    Mat<S> Wq, Wk, Wv, Wo;  // D x D
    Mat<S> bq, bk, bv, bo;  // D x 1
    Mat<S> W1, b1;          // F x D, F x 1 with F = 2D
    Mat<S> W2, b2;          // D x F, D x 1
    Mat<S> g1, be1, g2, be2;  // layer-norm gain/bias, D x 1
  };
  std::vector<LstmLayer> lstm;
  std::vector<TfLayer> tf;

  Mat<S> dense_W;  // H x R
  Mat<S> dense_b;  // H x 1
  Mat<S> out_w;    // 1 x H
  Mat<S> out_b;    // 1 x 1
};

/// Visits every tensor in a fixed order: f(name, mat, reg_group).
template <typename P, typename F>
void for_each_tensor(P& p, F&& f) {
  f(std::string("embedding"), p.embedding, RegGroup::None);
  if (p.in_proj.size() > 0) {
    f(std::string("in_proj"), p.in_proj, RegGroup::None);
    f(std::string("in_proj_b"), p.in_proj_b, RegGroup::None);
  }
  for (size_t l = 0; l < p.lstm.size(); ++l) {
    std::string base = "lstm" + std::to_string(l) + ".";
    f(base + "W", p.lstm[l].W, RegGroup::Layer);
    f(base + "U", p.lstm[l].U, RegGroup::Layer);
    f(base + "b", p.lstm[l].b, RegGroup::None);
  }
  for (size_t l = 0; l < p.tf.size(); ++l) {
    std::string base = "tf" + std::to_string(l) + ".";
    f(base + "Wq", p.tf[l].Wq, RegGroup::Layer);
    f(base + "bq", p.tf[l].bq, RegGroup::None);
    f(base + "Wk", p.tf[l].Wk, RegGroup::Layer);
    f(base + "bk", p.tf[l].bk, RegGroup::None);
    f(base + "Wv", p.tf[l].Wv, RegGroup::Layer);
    f(base + "bv", p.tf[l].bv, RegGroup::None);
    f(base + "Wo", p.tf[l].Wo, RegGroup::Layer);
    f(base + "bo", p.tf[l].bo, RegGroup::None);
    f(base + "W1", p.tf[l].W1, RegGroup::Layer);
    f(base + "b1", p.tf[l].b1, RegGroup::None);
    f(base + "W2", p.tf[l].W2, RegGroup::Layer);
    f(base + "b2", p.tf[l].b2, RegGroup::None);
    f(base + "ln1_g", p.tf[l].g1, RegGroup::None);
    f(base + "ln1_b", p.tf[l].be1, RegGroup::None);
    f(base + "ln2_g", p.tf[l].g2, RegGroup::None);
    f(base + "ln2_b", p.tf[l].be2, RegGroup::None);
  }
  f(std::string("dense_W"), p.dense_W, RegGroup::Dense);
  f(std::string("dense_b"), p.dense_b, RegGroup::None);
  f(std::string("out_w"), p.out_w, RegGroup::None);
  f(std::string("out_b"), p.out_b, RegGroup::None);
}

template <typename S>
std::vector<Mat<S>*> tensor_ptrs(Parameters<S>& p) {
  std::vector<Mat<S>*> out;
  for_each_tensor(p, [&](const std::string&, Mat<S>& m, RegGroup) { out.push_back(&m); });
  return out;
}

template <typename S>
size_t parameter_count(const Parameters<S>& p) {
  size_t n = 0;
  for_each_tensor(const_cast<Parameters<S>&>(p),
                  [&](const std::string&, Mat<S>& m, RegGroup) { n += m.size(); });
  return n;
}

/// Zero-filled parameter set with the same shapes (gradient/moment mirror).
template <typename S>
Parameters<S> zeros_like(const Parameters<S>& p);

template <typename S>
Parameters<S> convert(const Parameters<float>& p);

/// Deterministic initialization: embedding ~ U(-0.05, 0.05), kernels
/// Glorot-uniform, biases zero except the LSTM forget gate at 1,
/// layer-norm gains at 1.
template <typename S>
Parameters<S> init_params(const ModelSpec& spec, uint64_t seed);

struct ClassWeightPair {
  double w_neg = 1.0;
  double w_pos = 1.0;
};

/// Probabilities in (0,1) for a batch of code rows. Train mode applies
/// inverted dropout and requires an rng; eval mode is deterministic.
/// Throws when any code is outside [0, vocab_size).
template <typename S>
Eigen::Matrix<S, Eigen::Dynamic, 1> model_forward(const ModelSpec& spec,
                                                  const Parameters<S>& params, const Codes& codes,
                                                  bool train, Rng* rng);

template <typename S>
struct LossGrads {
  double loss = 0.0;       // weighted mean BCE + L1/L2 penalties
  double data_loss = 0.0;  // weighted mean BCE alone
  Eigen::Matrix<S, Eigen::Dynamic, 1> probs;
  Parameters<S> grads;
};

/// Loss plus exact reverse-mode gradients for every tensor.
template <typename S>
LossGrads<S> loss_and_gradients(const ModelSpec& spec, const Parameters<S>& params,
                                const Codes& codes, const std::vector<uint8_t>& labels,
                                ClassWeightPair weights, bool train_dropout, Rng* rng);

/// Forward-only loss (used by the finite-difference oracle).
template <typename S>
double compute_loss(const ModelSpec& spec, const Parameters<S>& params, const Codes& codes,
                    const std::vector<uint8_t>& labels, ClassWeightPair weights);

/// Eval-mode sequence-layer output (the vector fed to the dense head),
/// one row per batch row. Lets a frozen trunk be cached once while the
/// head is retrained.
template <typename S>
Mat<S> trunk_readout(const ModelSpec& spec, const Parameters<S>& params, const Codes& codes);

/// Mean binary cross-entropy without regularization (validation metric);
/// weighted only when weights differ from 1.
template <typename S>
double bce_from_probs(const Eigen::Matrix<S, Eigen::Dynamic, 1>& probs,
                      const std::vector<uint8_t>& labels, ClassWeightPair weights);

// ------------------------------------------------------------------ Adam

template <typename S>
struct AdamState {
  std::vector<Mat<S>> m, v;
  int64_t step = 0;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

template <typename S>
AdamState<S> make_adam_state(const Parameters<S>& params);

/// Standard Adam with bias correction; increments the step counter.
template <typename S>
void adam_step(AdamState<S>& state, Parameters<S>& params, const Parameters<S>& grads, double lr);

// --------------------------------------------------------- verification

/// Max relative error between analytic and central finite-difference
/// gradients over sampled coordinates, double precision, dropout off.
double gradient_check(const ModelSpec& spec, uint64_t seed, int batch_size, int n_coords = 150);

// --------------------------------------------------------- checkpoints

/// Self-describing binary checkpoint: JSON header (spec + tensor
/// manifest), float32 little-endian blocks, trailing content hash.
void save_checkpoint(const ModelSpec& spec, const Parameters<float>& params,
                     const std::string& path);
struct Checkpoint {
  ModelSpec spec;
  Parameters<float> params;
};
Checkpoint load_checkpoint(const std::string& path);

}  // namespace habitlens::nn
