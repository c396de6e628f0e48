#include "habitlens/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "habitlens/csv.hpp"

namespace habitlens::nn {

const char* arch_name(Arch a) { return a == Arch::Lstm ? "lstm" : "transformer"; }

Arch arch_from_name(const std::string& name) {
  if (name == "lstm") return Arch::Lstm;
  if (name == "transformer") return Arch::Transformer;
  throw std::invalid_argument("unknown architecture: " + name);
}

void ModelSpec::validate() const {
  if (vocab_size < 2) throw std::invalid_argument("ModelSpec: vocab_size must be >= 2");
  if (seq_len < 1) throw std::invalid_argument("ModelSpec: seq_len must be >= 1");
  if (embed_dim < 1 || num_layers < 1 || layer_units < 1 || dense_units < 1)
    throw std::invalid_argument("ModelSpec: dimensions must be positive");
  if (dropout_top < 0.0 || dropout_top >= 1.0 || dropout_inner < 0.0 || dropout_inner >= 1.0)
    throw std::invalid_argument("ModelSpec: dropout rates must lie in [0,1)");
  if (l1_layer < 0 || l2_layer < 0 || l1_dense < 0 || l2_dense < 0)
    throw std::invalid_argument("ModelSpec: penalties must be non-negative");
  if (arch == Arch::Transformer) {
    if (heads < 1) throw std::invalid_argument("ModelSpec: heads must be >= 1");
    if (layer_units % heads != 0)
      throw std::invalid_argument("ModelSpec: layer_units must be divisible by heads");
  }
}

namespace {
bool on_grid(double v, double lo, double hi, double step) {
  if (v < lo - 1e-9 || v > hi + 1e-9) return false;
  double k = (v - lo) / step;
  return std::abs(k - std::round(k)) < 1e-6;
}
}  // namespace

void ModelSpec::validate_search_ranges() const {
  validate();
  if (!on_grid(embed_dim, 5, 50, 5))
    throw std::invalid_argument("ModelSpec: embed_dim outside tuning grid");
  if (num_layers < 1 || num_layers > 3)
    throw std::invalid_argument("ModelSpec: num_layers outside tuning grid");
  if (!on_grid(layer_units, 4, 64, 4))
    throw std::invalid_argument("ModelSpec: layer_units outside tuning grid");
  if (!on_grid(dense_units, 4, 64, 4))
    throw std::invalid_argument("ModelSpec: dense_units outside tuning grid");
  if (!on_grid(dropout_top, 0.2, 0.5, 0.1))
    throw std::invalid_argument("ModelSpec: dropout_top outside tuning grid");
  if (!on_grid(dropout_inner, 0.2, 0.5, 0.1))
    throw std::invalid_argument("ModelSpec: dropout_inner outside tuning grid");
  if (l1_layer < 1e-5 - 1e-12 || l1_layer > 1e-3 + 1e-12 || l1_dense < 1e-5 - 1e-12 ||
      l1_dense > 1e-3 + 1e-12)
    throw std::invalid_argument("ModelSpec: L1 penalty outside tuning range");
  if (l2_layer < 1e-4 - 1e-12 || l2_layer > 1e-2 + 1e-12 || l2_dense < 1e-4 - 1e-12 ||
      l2_dense > 1e-2 + 1e-12)
    throw std::invalid_argument("ModelSpec: L2 penalty outside tuning range");
  if (arch == Arch::Transformer && heads != 2)
    throw std::invalid_argument("ModelSpec: transformer head count is fixed at 2");
}

nlohmann::json model_spec_to_json(const ModelSpec& s) {
  return nlohmann::json{{"arch", arch_name(s.arch)},
                        {"vocab_size", s.vocab_size},
                        {"seq_len", s.seq_len},
                        {"embed_dim", s.embed_dim},
                        {"num_layers", s.num_layers},
                        {"layer_units", s.layer_units},
                        {"dense_units", s.dense_units},
                        {"heads", s.heads},
                        {"dropout_top", s.dropout_top},
                        {"dropout_inner", s.dropout_inner},
                        {"l1_layer", s.l1_layer},
                        {"l2_layer", s.l2_layer},
                        {"l1_dense", s.l1_dense},
                        {"l2_dense", s.l2_dense}};
}

ModelSpec model_spec_from_json(const nlohmann::json& j) {
  ModelSpec s;
  s.arch = arch_from_name(j.at("arch").get<std::string>());
  s.vocab_size = j.at("vocab_size").get<int32_t>();
  s.seq_len = j.at("seq_len").get<int32_t>();
  s.embed_dim = j.at("embed_dim").get<int>();
  s.num_layers = j.at("num_layers").get<int>();
  s.layer_units = j.at("layer_units").get<int>();
  s.dense_units = j.at("dense_units").get<int>();
  s.heads = j.at("heads").get<int>();
  s.dropout_top = j.at("dropout_top").get<double>();
  s.dropout_inner = j.at("dropout_inner").get<double>();
  s.l1_layer = j.at("l1_layer").get<double>();
  s.l2_layer = j.at("l2_layer").get<double>();
  s.l1_dense = j.at("l1_dense").get<double>();
  s.l2_dense = j.at("l2_dense").get<double>();
  return s;
}

// ------------------------------------------------------------ parameters

template <typename S>
Parameters<S> zeros_like(const Parameters<S>& p) {
  Parameters<S> z;
  z.embedding = Mat<S>::Zero(p.embedding.rows(), p.embedding.cols());
  if (p.in_proj.size() > 0) {
    z.in_proj = Mat<S>::Zero(p.in_proj.rows(), p.in_proj.cols());
    z.in_proj_b = Mat<S>::Zero(p.in_proj_b.rows(), 1);
  }
  z.lstm.resize(p.lstm.size());
  for (size_t l = 0; l < p.lstm.size(); ++l) {
    z.lstm[l].W = Mat<S>::Zero(p.lstm[l].W.rows(), p.lstm[l].W.cols());
    z.lstm[l].U = Mat<S>::Zero(p.lstm[l].U.rows(), p.lstm[l].U.cols());
    z.lstm[l].b = Mat<S>::Zero(p.lstm[l].b.rows(), 1);
  }
  z.tf.resize(p.tf.size());
  for (size_t l = 0; l < p.tf.size(); ++l) {
    auto& src = p.tf[l];
    auto& dst = z.tf[l];
    auto zero = [](const Mat<S>& m) { return Mat<S>::Zero(m.rows(), m.cols()).eval(); };
    dst.Wq = zero(src.Wq);
    dst.Wk = zero(src.Wk);
    dst.Wv = zero(src.Wv);
    dst.Wo = zero(src.Wo);
    dst.bq = zero(src.bq);
    dst.bk = zero(src.bk);
    dst.bv = zero(src.bv);
    dst.bo = zero(src.bo);
    dst.W1 = zero(src.W1);
    dst.b1 = zero(src.b1);
    dst.W2 = zero(src.W2);
    dst.b2 = zero(src.b2);
    dst.g1 = zero(src.g1);
    dst.be1 = zero(src.be1);
    dst.g2 = zero(src.g2);
    dst.be2 = zero(src.be2);
  }
  z.dense_W = Mat<S>::Zero(p.dense_W.rows(), p.dense_W.cols());
  z.dense_b = Mat<S>::Zero(p.dense_b.rows(), 1);
  z.out_w = Mat<S>::Zero(p.out_w.rows(), p.out_w.cols());
  z.out_b = Mat<S>::Zero(1, 1);
  return z;
}

template <typename S>
Parameters<S> convert(const Parameters<float>& p) {
  Parameters<S> out;
  out.embedding = p.embedding.template cast<S>();
  if (p.in_proj.size() > 0) {
    out.in_proj = p.in_proj.template cast<S>();
    out.in_proj_b = p.in_proj_b.template cast<S>();
  }
  out.lstm.resize(p.lstm.size());
  for (size_t l = 0; l < p.lstm.size(); ++l) {
    out.lstm[l].W = p.lstm[l].W.template cast<S>();
    out.lstm[l].U = p.lstm[l].U.template cast<S>();
    out.lstm[l].b = p.lstm[l].b.template cast<S>();
  }
  out.tf.resize(p.tf.size());
  for (size_t l = 0; l < p.tf.size(); ++l) {
    const auto& a = p.tf[l];
    auto& b = out.tf[l];
    b.Wq = a.Wq.template cast<S>();
    b.Wk = a.Wk.template cast<S>();
    b.Wv = a.Wv.template cast<S>();
    b.Wo = a.Wo.template cast<S>();
    b.bq = a.bq.template cast<S>();
    b.bk = a.bk.template cast<S>();
    b.bv = a.bv.template cast<S>();
    b.bo = a.bo.template cast<S>();
    b.W1 = a.W1.template cast<S>();
    b.b1 = a.b1.template cast<S>();
    b.W2 = a.W2.template cast<S>();
    b.b2 = a.b2.template cast<S>();
    b.g1 = a.g1.template cast<S>();
    b.be1 = a.be1.template cast<S>();
    b.g2 = a.g2.template cast<S>();
    b.be2 = a.be2.template cast<S>();
  }
  out.dense_W = p.dense_W.template cast<S>();
  out.dense_b = p.dense_b.template cast<S>();
  out.out_w = p.out_w.template cast<S>();
  out.out_b = p.out_b.template cast<S>();
  return out;
}

namespace {

template <typename S>
void fill_uniform(Mat<S>& m, Rng& rng, double lo, double hi) {
  S* data = m.data();
  for (Eigen::Index i = 0; i < m.size(); ++i)
    data[i] = static_cast<S>(rng.uniform(lo, hi));
}

template <typename S>
void fill_glorot(Mat<S>& m, Rng& rng) {
  double limit = std::sqrt(6.0 / (static_cast<double>(m.cols()) + static_cast<double>(m.rows())));
  fill_uniform(m, rng, -limit, limit);
}

}  // namespace

template <typename S>
Parameters<S> init_params(const ModelSpec& spec, uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  Parameters<S> p;
  const int E = spec.embed_dim, U = spec.layer_units, H = spec.dense_units;

  p.embedding = Mat<S>(spec.vocab_size, E);
  fill_uniform(p.embedding, rng, -0.05, 0.05);

  if (spec.needs_in_proj()) {
    p.in_proj = Mat<S>(U, E);
    fill_glorot(p.in_proj, rng);
    p.in_proj_b = Mat<S>::Zero(U, 1);
  }

  if (spec.arch == Arch::Lstm) {
    p.lstm.resize(spec.num_layers);
    for (int l = 0; l < spec.num_layers; ++l) {
      int in = l == 0 ? E : U;
      p.lstm[l].W = Mat<S>(4 * U, in);
      fill_glorot(p.lstm[l].W, rng);
      p.lstm[l].U = Mat<S>(4 * U, U);
      fill_glorot(p.lstm[l].U, rng);
      p.lstm[l].b = Mat<S>::Zero(4 * U, 1);
      p.lstm[l].b.block(U, 0, U, 1).setConstant(static_cast<S>(1));  // forget gate
    }
  } else {
    const int F = 2 * U;
    p.tf.resize(spec.num_layers);
    for (int l = 0; l < spec.num_layers; ++l) {
      auto& t = p.tf[l];
      t.Wq = Mat<S>(U, U);
      fill_glorot(t.Wq, rng);
      t.Wk = Mat<S>(U, U);
      fill_glorot(t.Wk, rng);
      t.Wv = Mat<S>(U, U);
      fill_glorot(t.Wv, rng);
      t.Wo = Mat<S>(U, U);
      fill_glorot(t.Wo, rng);
      t.bq = Mat<S>::Zero(U, 1);
      t.bk = Mat<S>::Zero(U, 1);
      t.bv = Mat<S>::Zero(U, 1);
      t.bo = Mat<S>::Zero(U, 1);
      t.W1 = Mat<S>(F, U);
      fill_glorot(t.W1, rng);
      t.b1 = Mat<S>::Zero(F, 1);
      t.W2 = Mat<S>(U, F);
      fill_glorot(t.W2, rng);
      t.b2 = Mat<S>::Zero(U, 1);
      t.g1 = Mat<S>::Constant(U, 1, static_cast<S>(1));
      t.be1 = Mat<S>::Zero(U, 1);
      t.g2 = Mat<S>::Constant(U, 1, static_cast<S>(1));
      t.be2 = Mat<S>::Zero(U, 1);
    }
  }

  p.dense_W = Mat<S>(H, spec.readout_dim());
  fill_glorot(p.dense_W, rng);
  p.dense_b = Mat<S>::Zero(H, 1);
  p.out_w = Mat<S>(1, H);
  fill_glorot(p.out_w, rng);
  p.out_b = Mat<S>::Zero(1, 1);
  return p;
}

// ----------------------------------------------------------- forward/backward

namespace {

template <typename S>
Mat<S> dropout_mask(Rng& rng, Eigen::Index rows, Eigen::Index cols, double rate) {
  Mat<S> m(rows, cols);
  const double keep = 1.0 - rate;
  const S scale = static_cast<S>(1.0 / keep);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c)
      m(r, c) = rng.uniform01() < keep ? scale : static_cast<S>(0);
  return m;
}

template <typename S>
struct LstmCache {
  std::vector<Mat<S>> gates;    // (L*B) x 4U, activated, order i|f|g|o
  std::vector<Mat<S>> cprev;    // (L*B) x U
  std::vector<Mat<S>> tanhc;    // (L*B) x U
  std::vector<Mat<S>> hseq;     // (L*B) x U
  std::vector<Mat<S>> hdrop;    // (L*B) x U (recurrent input after mask)
  std::vector<Mat<S>> rmask;    // B x U, empty when inactive
  Mat<S> x0;                    // (L*B) x E, time-major
};

template <typename S>
struct TfCache {
  Mat<S> x0e;                 // (B*L) x E, item-major, embedding + positions
  std::vector<Mat<S>> xin;    // per layer input, (B*L) x D
  std::vector<Mat<S>> q, k, v;
  std::vector<Mat<S>> probs;   // (B*heads*L) x L softmax rows
  std::vector<Mat<S>> pdrop;   // post-dropout probs (same as probs in eval)
  std::vector<Mat<S>> ctx;     // (B*L) x D
  std::vector<Mat<S>> s1hat, a, ff, s2hat;
  std::vector<Mat<S>> rstd1, rstd2;  // (B*L) x 1
  Mat<S> out;                  // (B*L) x D top layer output
  std::vector<uint8_t> valid;  // B*L, after all-padding fallback
  std::vector<int> nvalid;     // B
};

template <typename S>
struct Cache {
  LstmCache<S> lstm;
  TfCache<S> tf;
  Mat<S> readout;  // B x R
  Mat<S> topmask;  // B x R, empty when inactive
  Mat<S> rd;       // readout after dropout
  Mat<S> hrelu;    // B x H
  Mat<S> z;        // B x 1 logits
};

template <typename S>
void check_codes(const ModelSpec& spec, const Codes& codes) {
  for (Eigen::Index i = 0; i < codes.size(); ++i) {
    int32_t c = codes.data()[i];
    if (c < 0 || c >= spec.vocab_size)
      throw std::invalid_argument("model_forward: code " + std::to_string(c) +
                                  " outside vocabulary of size " +
                                  std::to_string(spec.vocab_size));
  }
}

template <typename S>
Mat<S> lstm_forward(const ModelSpec& spec, const Parameters<S>& p, const Codes& codes,
                    bool train, Rng* rng, LstmCache<S>& cache) {
  const Eigen::Index B = codes.rows();
  const Eigen::Index L = codes.cols();
  const int U = spec.layer_units;
  const int E = spec.embed_dim;

  cache.x0.resize(L * B, E);
  for (Eigen::Index t = 0; t < L; ++t)
    for (Eigen::Index b = 0; b < B; ++b)
      cache.x0.row(t * B + b) = p.embedding.row(codes(b, t));

  const bool use_rdrop = train && spec.dropout_inner > 0.0;
  cache.gates.resize(p.lstm.size());
  cache.cprev.resize(p.lstm.size());
  cache.tanhc.resize(p.lstm.size());
  cache.hseq.resize(p.lstm.size());
  cache.hdrop.resize(p.lstm.size());
  cache.rmask.resize(p.lstm.size());

  const Mat<S>* input = &cache.x0;
  for (size_t l = 0; l < p.lstm.size(); ++l) {
    const auto& layer = p.lstm[l];
    if (use_rdrop) cache.rmask[l] = dropout_mask<S>(*rng, B, U, spec.dropout_inner);

    Mat<S> pre = (*input) * layer.W.transpose();  // (L*B) x 4U
    cache.gates[l].resize(L * B, 4 * U);
    cache.cprev[l].resize(L * B, U);
    cache.tanhc[l].resize(L * B, U);
    cache.hseq[l].resize(L * B, U);
    cache.hdrop[l].resize(L * B, U);

    Mat<S> h = Mat<S>::Zero(B, U);
    Mat<S> c = Mat<S>::Zero(B, U);
    Mat<S> z(B, 4 * U);
    for (Eigen::Index t = 0; t < L; ++t) {
      auto hd = cache.hdrop[l].middleRows(t * B, B);
      if (use_rdrop)
        hd = h.cwiseProduct(cache.rmask[l]);
      else
        hd = h;
      z.noalias() = pre.middleRows(t * B, B);
      z.noalias() += hd * layer.U.transpose();
      z.rowwise() += layer.b.col(0).transpose();

      auto gates = cache.gates[l].middleRows(t * B, B);
      gates.leftCols(U) = (S(1) / (S(1) + (-z.leftCols(U).array()).exp())).matrix();
      gates.middleCols(U, U) =
          (S(1) / (S(1) + (-z.middleCols(U, U).array()).exp())).matrix();
      gates.middleCols(2 * U, U) = z.middleCols(2 * U, U).array().tanh().matrix();
      gates.middleCols(3 * U, U) =
          (S(1) / (S(1) + (-z.middleCols(3 * U, U).array()).exp())).matrix();

      cache.cprev[l].middleRows(t * B, B) = c;
      c = (gates.middleCols(U, U).array() * c.array() +
           gates.leftCols(U).array() * gates.middleCols(2 * U, U).array())
              .matrix();
      auto tc = cache.tanhc[l].middleRows(t * B, B);
      tc = c.array().tanh().matrix();
      h = gates.middleCols(3 * U, U).cwiseProduct(tc);
      cache.hseq[l].middleRows(t * B, B) = h;
    }
    input = &cache.hseq[l];
  }
  return cache.hseq.back().middleRows((L - 1) * B, B);  // last step, top layer
}

template <typename S>
void lstm_backward(const ModelSpec& spec, const Parameters<S>& p, const Codes& codes,
                   const LstmCache<S>& cache, const Mat<S>& dreadout, Parameters<S>& grads) {
  const Eigen::Index B = codes.rows();
  const Eigen::Index L = codes.cols();
  const int U = spec.layer_units;
  const bool use_rdrop = !cache.rmask.empty() && cache.rmask[0].size() > 0;

  Mat<S> dh_ext = Mat<S>::Zero(L * B, U);
  dh_ext.middleRows((L - 1) * B, B) = dreadout;

  for (int l = static_cast<int>(p.lstm.size()) - 1; l >= 0; --l) {
    const auto& layer = p.lstm[l];
    const Mat<S>& input = l == 0 ? cache.x0 : cache.hseq[l - 1];

    Mat<S> dz_all(L * B, 4 * U);
    Mat<S> dh = Mat<S>::Zero(B, U);
    Mat<S> dc = Mat<S>::Zero(B, U);
    for (Eigen::Index t = L - 1; t >= 0; --t) {
      dh += dh_ext.middleRows(t * B, B);
      auto gates = cache.gates[l].middleRows(t * B, B);
      auto i = gates.leftCols(U).array();
      auto f = gates.middleCols(U, U).array();
      auto g = gates.middleCols(2 * U, U).array();
      auto o = gates.middleCols(3 * U, U).array();
      auto tc = cache.tanhc[l].middleRows(t * B, B).array();
      auto cprev = cache.cprev[l].middleRows(t * B, B).array();

      Mat<S> do_pre = (dh.array() * tc * o * (S(1) - o)).matrix();
      dc.array() += dh.array() * o * (S(1) - tc * tc);
      Mat<S> di_pre = (dc.array() * g * i * (S(1) - i)).matrix();
      Mat<S> df_pre = (dc.array() * cprev * f * (S(1) - f)).matrix();
      Mat<S> dg_pre = (dc.array() * i * (S(1) - g * g)).matrix();

      auto dz = dz_all.middleRows(t * B, B);
      dz.leftCols(U) = di_pre;
      dz.middleCols(U, U) = df_pre;
      dz.middleCols(2 * U, U) = dg_pre;
      dz.middleCols(3 * U, U) = do_pre;

      Mat<S> dhd = dz * layer.U;  // B x U
      if (use_rdrop)
        dh = dhd.cwiseProduct(cache.rmask[l]);
      else
        dh = dhd;
      dc = (dc.array() * f).matrix();
    }

    grads.lstm[l].W.noalias() += dz_all.transpose() * input;
    grads.lstm[l].U.noalias() += dz_all.transpose() * cache.hdrop[l];
    grads.lstm[l].b += dz_all.colwise().sum().transpose();
    if (l > 0) {
      dh_ext.noalias() = dz_all * layer.W;
    } else {
      Mat<S> dx0 = dz_all * layer.W;  // (L*B) x E
      for (Eigen::Index t = 0; t < L; ++t)
        for (Eigen::Index b = 0; b < B; ++b)
          grads.embedding.row(codes(b, t)) += dx0.row(t * B + b);
    }
  }
}

template <typename S>
Mat<S> positional_encoding(int L, int E) {
  Mat<S> pe(L, E);
  for (int t = 0; t < L; ++t) {
    for (int i = 0; i < E; ++i) {
      int k = i / 2;
      double w = std::pow(10000.0, -2.0 * static_cast<double>(k) / static_cast<double>(E));
      double angle = static_cast<double>(t) * w;
      pe(t, i) = static_cast<S>(i % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
  }
  return pe;
}

template <typename S>
void layernorm_forward(const Mat<S>& x, const Mat<S>& gain, const Mat<S>& bias, Mat<S>& xhat,
                       Mat<S>& rstd, Mat<S>& y) {
  const S eps = static_cast<S>(1e-5);
  const Eigen::Index d = x.cols();
  auto mu = (x.rowwise().sum() / static_cast<S>(d)).eval();
  xhat = x.colwise() - mu.col(0);
  rstd = ((xhat.array().square().rowwise().sum() / static_cast<S>(d)) + eps)
             .rsqrt()
             .matrix();
  xhat.array().colwise() *= rstd.col(0).array();
  y = xhat;
  y.array().rowwise() *= gain.col(0).transpose().array();
  y.array().rowwise() += bias.col(0).transpose().array();
}

template <typename S>
void layernorm_backward(const Mat<S>& dy, const Mat<S>& xhat, const Mat<S>& rstd,
                        const Mat<S>& gain, Mat<S>& dx, Mat<S>& dgain, Mat<S>& dbias) {
  const Eigen::Index d = dy.cols();
  Mat<S> dxhat = dy;
  dxhat.array().rowwise() *= gain.col(0).transpose().array();
  Eigen::Matrix<S, Eigen::Dynamic, 1> m1 = dxhat.rowwise().sum() / static_cast<S>(d);
  Eigen::Matrix<S, Eigen::Dynamic, 1> m2 =
      (dxhat.array() * xhat.array()).matrix().rowwise().sum() / static_cast<S>(d);
  dx = dxhat;
  dx.array().colwise() -= m1.array();
  dx.array() -= xhat.array().colwise() * m2.array();
  dx.array().colwise() *= rstd.col(0).array();
  dgain += (dy.array() * xhat.array()).colwise().sum().matrix().transpose();
  dbias += dy.colwise().sum().transpose();
}

template <typename S>
Mat<S> tf_forward(const ModelSpec& spec, const Parameters<S>& p, const Codes& codes, bool train,
                  Rng* rng, TfCache<S>& cache) {
  const Eigen::Index B = codes.rows();
  const Eigen::Index L = codes.cols();
  const int E = spec.embed_dim;
  const int D = spec.layer_units;
  const int heads = spec.heads;
  const int dh = D / heads;
  const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));

  Mat<S> pe = positional_encoding<S>(static_cast<int>(L), E);

  cache.x0e.resize(B * L, E);
  cache.valid.assign(B * L, 0);
  cache.nvalid.assign(B, 0);
  for (Eigen::Index b = 0; b < B; ++b) {
    int nv = 0;
    for (Eigen::Index t = 0; t < L; ++t) {
      cache.x0e.row(b * L + t) = p.embedding.row(codes(b, t)) + pe.row(t);
      bool ok = codes(b, t) != 0;
      cache.valid[b * L + t] = ok ? 1 : 0;
      nv += ok;
    }
    if (nv == 0) {  // all-padding window: attend and pool over everything
      for (Eigen::Index t = 0; t < L; ++t) cache.valid[b * L + t] = 1;
      nv = static_cast<int>(L);
    }
    cache.nvalid[b] = nv;
  }

  const size_t nl = p.tf.size();
  cache.xin.resize(nl);
  cache.q.resize(nl);
  cache.k.resize(nl);
  cache.v.resize(nl);
  cache.probs.resize(nl);
  cache.pdrop.resize(nl);
  cache.ctx.resize(nl);
  cache.s1hat.resize(nl);
  cache.a.resize(nl);
  cache.ff.resize(nl);
  cache.s2hat.resize(nl);
  cache.rstd1.resize(nl);
  cache.rstd2.resize(nl);

  Mat<S> x;
  if (spec.needs_in_proj()) {
    x.noalias() = cache.x0e * p.in_proj.transpose();
    x.rowwise() += p.in_proj_b.col(0).transpose();
  } else {
    x = cache.x0e;
  }

  const bool use_adrop = train && spec.dropout_inner > 0.0;
  for (size_t l = 0; l < nl; ++l) {
    const auto& layer = p.tf[l];
    cache.xin[l] = x;
    cache.q[l].noalias() = x * layer.Wq.transpose();
    cache.q[l].rowwise() += layer.bq.col(0).transpose();
    cache.k[l].noalias() = x * layer.Wk.transpose();
    cache.k[l].rowwise() += layer.bk.col(0).transpose();
    cache.v[l].noalias() = x * layer.Wv.transpose();
    cache.v[l].rowwise() += layer.bv.col(0).transpose();

    cache.probs[l].resize(B * heads * L, L);
    cache.ctx[l].resize(B * L, D);
    if (use_adrop) cache.pdrop[l].resize(B * heads * L, L);

    Mat<S> scores(L, L);
    Eigen::Matrix<S, 1, Eigen::Dynamic> key_off(L);
    Eigen::Matrix<S, 1, Eigen::Dynamic> key_mask(L);
    Eigen::Matrix<S, Eigen::Dynamic, 1> rowagg(L);
    for (Eigen::Index b = 0; b < B; ++b) {
      for (Eigen::Index t = 0; t < L; ++t) {
        bool ok = cache.valid[b * L + t] != 0;
        key_mask(t) = ok ? S(1) : S(0);
        key_off(t) = ok ? S(0) : static_cast<S>(-1e30);
      }
      for (int h = 0; h < heads; ++h) {
        auto qb = cache.q[l].block(b * L, h * dh, L, dh);
        auto kb = cache.k[l].block(b * L, h * dh, L, dh);
        auto vb = cache.v[l].block(b * L, h * dh, L, dh);

        scores.noalias() = qb * kb.transpose();
        scores *= scale;
        scores.array().rowwise() += key_off.array();

        auto pblock = cache.probs[l].middleRows((b * heads + h) * L, L);
        rowagg = scores.rowwise().maxCoeff();
        pblock = ((scores.colwise() - rowagg).array().exp()).matrix();
        pblock.array().rowwise() *= key_mask.array();
        rowagg = pblock.rowwise().sum();
        pblock.array().colwise() /= rowagg.array();

        if (use_adrop) {
          auto pd = cache.pdrop[l].middleRows((b * heads + h) * L, L);
          const double keep = 1.0 - spec.dropout_inner;
          const S dscale = static_cast<S>(1.0 / keep);
          for (Eigen::Index qi = 0; qi < L; ++qi)
            for (Eigen::Index ki = 0; ki < L; ++ki)
              pd(qi, ki) = rng->uniform01() < keep ? pblock(qi, ki) * dscale : S(0);
          cache.ctx[l].block(b * L, h * dh, L, dh).noalias() = pd * vb;
        } else {
          cache.ctx[l].block(b * L, h * dh, L, dh).noalias() = pblock * vb;
        }
      }
    }

    Mat<S> attn_out = cache.ctx[l] * layer.Wo.transpose();
    attn_out.rowwise() += layer.bo.col(0).transpose();
    Mat<S> s1 = x + attn_out;
    Mat<S> a_out;
    layernorm_forward(s1, layer.g1, layer.be1, cache.s1hat[l], cache.rstd1[l], a_out);
    cache.a[l] = a_out;

    Mat<S> fpre = a_out * layer.W1.transpose();
    fpre.rowwise() += layer.b1.col(0).transpose();
    cache.ff[l] = fpre.cwiseMax(S(0));
    Mat<S> fout = cache.ff[l] * layer.W2.transpose();
    fout.rowwise() += layer.b2.col(0).transpose();
    Mat<S> s2 = a_out + fout;
    Mat<S> y;
    layernorm_forward(s2, layer.g2, layer.be2, cache.s2hat[l], cache.rstd2[l], y);
    x = y;
  }
  cache.out = x;

  Mat<S> pooled = Mat<S>::Zero(B, D);
  for (Eigen::Index b = 0; b < B; ++b) {
    for (Eigen::Index t = 0; t < L; ++t)
      if (cache.valid[b * L + t]) pooled.row(b) += x.row(b * L + t);
    pooled.row(b) /= static_cast<S>(cache.nvalid[b]);
  }
  return pooled;
}

template <typename S>
void tf_backward(const ModelSpec& spec, const Parameters<S>& p, const Codes& codes,
                 const TfCache<S>& cache, const Mat<S>& dpooled, Parameters<S>& grads) {
  const Eigen::Index B = codes.rows();
  const Eigen::Index L = codes.cols();
  const int D = spec.layer_units;
  const int heads = spec.heads;
  const int dh = D / heads;
  const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));
  const bool use_adrop = !cache.pdrop.empty() && cache.pdrop[0].size() > 0;

  Mat<S> dx = Mat<S>::Zero(B * L, D);
  for (Eigen::Index b = 0; b < B; ++b) {
    auto contrib = (dpooled.row(b) / static_cast<S>(cache.nvalid[b])).eval();
    for (Eigen::Index t = 0; t < L; ++t)
      if (cache.valid[b * L + t]) dx.row(b * L + t) += contrib;
  }

  for (int l = static_cast<int>(p.tf.size()) - 1; l >= 0; --l) {
    const auto& layer = p.tf[l];

    // layernorm 2
    Mat<S> ds2;
    layernorm_backward(dx, cache.s2hat[l], cache.rstd2[l], layer.g2, ds2, grads.tf[l].g2,
                       grads.tf[l].be2);

    // feed-forward
    Mat<S> dff = ds2 * layer.W2;  // (B*L) x F
    grads.tf[l].W2.noalias() += ds2.transpose() * cache.ff[l];
    grads.tf[l].b2 += ds2.colwise().sum().transpose();
    Mat<S> dfpre = (dff.array() * (cache.ff[l].array() > S(0)).template cast<S>()).matrix();
    grads.tf[l].W1.noalias() += dfpre.transpose() * cache.a[l];
    grads.tf[l].b1 += dfpre.colwise().sum().transpose();
    Mat<S> da = ds2 + dfpre * layer.W1;

    // layernorm 1
    Mat<S> ds1;
    layernorm_backward(da, cache.s1hat[l], cache.rstd1[l], layer.g1, ds1, grads.tf[l].g1,
                       grads.tf[l].be1);

    // attention output projection
    Mat<S> dctx = ds1 * layer.Wo;  // (B*L) x D
    grads.tf[l].Wo.noalias() += ds1.transpose() * cache.ctx[l];
    grads.tf[l].bo += ds1.colwise().sum().transpose();

    Mat<S> dq = Mat<S>::Zero(B * L, D);
    Mat<S> dk = Mat<S>::Zero(B * L, D);
    Mat<S> dv = Mat<S>::Zero(B * L, D);
    Mat<S> dpd(L, L), ds(L, L);
    Eigen::Matrix<S, Eigen::Dynamic, 1> rowdot(L);
    for (Eigen::Index b = 0; b < B; ++b) {
      for (int h = 0; h < heads; ++h) {
        auto pblock = cache.probs[l].middleRows((b * heads + h) * L, L);
        auto vb = cache.v[l].block(b * L, h * dh, L, dh);
        auto qb = cache.q[l].block(b * L, h * dh, L, dh);
        auto kb = cache.k[l].block(b * L, h * dh, L, dh);
        auto dctxb = dctx.block(b * L, h * dh, L, dh);

        dpd.noalias() = dctxb * vb.transpose();  // L x L
        if (use_adrop) {
          auto pd = cache.pdrop[l].middleRows((b * heads + h) * L, L);
          dv.block(b * L, h * dh, L, dh).noalias() += pd.transpose() * dctxb;
          // chain through the inverted-dropout mask: mask = pd/p where p>0
          for (Eigen::Index qi = 0; qi < L; ++qi)
            for (Eigen::Index ki = 0; ki < L; ++ki)
              dpd(qi, ki) = pblock(qi, ki) > S(0) && pd(qi, ki) > S(0)
                                ? dpd(qi, ki) * pd(qi, ki) / pblock(qi, ki)
                                : S(0);
        } else {
          dv.block(b * L, h * dh, L, dh).noalias() += pblock.transpose() * dctxb;
        }

        rowdot = (dpd.array() * pblock.array()).rowwise().sum().matrix();
        ds = dpd;
        ds.array().colwise() -= rowdot.array();
        ds.array() *= pblock.array();
        dq.block(b * L, h * dh, L, dh).noalias() += ds * kb * scale;
        dk.block(b * L, h * dh, L, dh).noalias() += ds.transpose() * qb * scale;
      }
    }

    grads.tf[l].Wq.noalias() += dq.transpose() * cache.xin[l];
    grads.tf[l].bq += dq.colwise().sum().transpose();
    grads.tf[l].Wk.noalias() += dk.transpose() * cache.xin[l];
    grads.tf[l].bk += dk.colwise().sum().transpose();
    grads.tf[l].Wv.noalias() += dv.transpose() * cache.xin[l];
    grads.tf[l].bv += dv.colwise().sum().transpose();

    Mat<S> dxin = dq * layer.Wq + dk * layer.Wk + dv * layer.Wv + ds1;
    dx = std::move(dxin);
  }

  Mat<S> dx0e;
  if (spec.needs_in_proj()) {
    grads.in_proj.noalias() += dx.transpose() * cache.x0e;
    grads.in_proj_b += dx.colwise().sum().transpose();
    dx0e = dx * p.in_proj;
  } else {
    dx0e = std::move(dx);
  }
  for (Eigen::Index b = 0; b < B; ++b)
    for (Eigen::Index t = 0; t < L; ++t)
      grads.embedding.row(codes(b, t)) += dx0e.row(b * L + t);
}

/// dense head: readout -> dropout -> dense ReLU -> sigmoid unit
template <typename S>
void head_forward(const ModelSpec& spec, const Parameters<S>& p, bool train, Rng* rng,
                  Cache<S>& cache) {
  const Eigen::Index B = cache.readout.rows();
  if (train && spec.dropout_top > 0.0) {
    cache.topmask = dropout_mask<S>(*rng, B, cache.readout.cols(), spec.dropout_top);
    cache.rd = cache.readout.cwiseProduct(cache.topmask);
  } else {
    cache.topmask.resize(0, 0);
    cache.rd = cache.readout;
  }
  Mat<S> hpre = cache.rd * p.dense_W.transpose();
  hpre.rowwise() += p.dense_b.col(0).transpose();
  cache.hrelu = hpre.cwiseMax(S(0));
  cache.z = cache.hrelu * p.out_w.transpose();
  cache.z.array() += p.out_b(0, 0);
}

template <typename S>
Mat<S> head_backward(const Parameters<S>& p, const Cache<S>& cache, const Mat<S>& dz,
                     Parameters<S>& grads) {
  grads.out_w.noalias() += dz.transpose() * cache.hrelu;
  grads.out_b(0, 0) += dz.sum();
  Mat<S> dhrelu = dz * p.out_w;
  Mat<S> dhpre = (dhrelu.array() * (cache.hrelu.array() > S(0)).template cast<S>()).matrix();
  grads.dense_W.noalias() += dhpre.transpose() * cache.rd;
  grads.dense_b += dhpre.colwise().sum().transpose();
  Mat<S> drd = dhpre * p.dense_W;
  if (cache.topmask.size() > 0) return drd.cwiseProduct(cache.topmask);
  return drd;
}

template <typename S>
void forward_full(const ModelSpec& spec, const Parameters<S>& p, const Codes& codes, bool train,
                  Rng* rng, Cache<S>& cache) {
  if (train && !rng) throw std::invalid_argument("model_forward: train mode requires an rng");
  check_codes<S>(spec, codes);
  if (spec.arch == Arch::Lstm)
    cache.readout = lstm_forward(spec, p, codes, train, rng, cache.lstm);
  else
    cache.readout = tf_forward(spec, p, codes, train, rng, cache.tf);
  head_forward(spec, p, train, rng, cache);
}

template <typename S>
void backward_full(const ModelSpec& spec, const Parameters<S>& p, const Codes& codes,
                   const Cache<S>& cache, const Mat<S>& dz, Parameters<S>& grads) {
  Mat<S> dreadout = head_backward(p, cache, dz, grads);
  if (spec.arch == Arch::Lstm)
    lstm_backward(spec, p, codes, cache.lstm, dreadout, grads);
  else
    tf_backward(spec, p, codes, cache.tf, dreadout, grads);
}

template <typename S>
Eigen::Matrix<S, Eigen::Dynamic, 1> probs_from_logits(const Mat<S>& z) {
  Eigen::Matrix<S, Eigen::Dynamic, 1> probs =
      (S(1) / (S(1) + (-z.col(0).array()).exp())).matrix();
  const S lo = static_cast<S>(1e-7), hi = static_cast<S>(1.0 - 1e-7);
  for (Eigen::Index i = 0; i < probs.size(); ++i)
    probs(i) = std::min(hi, std::max(lo, probs(i)));
  return probs;
}

template <typename S>
double regularization_loss(const ModelSpec& spec, const Parameters<S>& p) {
  double loss = 0.0;
  for_each_tensor(const_cast<Parameters<S>&>(p),
                  [&](const std::string&, Mat<S>& m, RegGroup reg) {
                    if (reg == RegGroup::None) return;
                    double l1 = reg == RegGroup::Layer ? spec.l1_layer : spec.l1_dense;
                    double l2 = reg == RegGroup::Layer ? spec.l2_layer : spec.l2_dense;
                    if (l1 > 0)
                      loss += l1 * m.template cast<double>().array().abs().sum();
                    if (l2 > 0)
                      loss += l2 * m.template cast<double>().array().square().sum();
                  });
  return loss;
}

template <typename S>
void add_regularization_grads(const ModelSpec& spec, const Parameters<S>& p,
                              Parameters<S>& grads) {
  auto& pm = const_cast<Parameters<S>&>(p);
  std::vector<Mat<S>*> src;
  for_each_tensor(pm, [&](const std::string&, Mat<S>& m, RegGroup) { src.push_back(&m); });
  size_t idx = 0;
  for_each_tensor(grads, [&](const std::string&, Mat<S>& gm, RegGroup reg) {
    const Mat<S>& m = *src[idx++];
    if (reg == RegGroup::None) return;
    double l1 = reg == RegGroup::Layer ? spec.l1_layer : spec.l1_dense;
    double l2 = reg == RegGroup::Layer ? spec.l2_layer : spec.l2_dense;
    if (l1 > 0)
      gm.array() += static_cast<S>(l1) * m.array().sign();
    if (l2 > 0)
      gm.array() += static_cast<S>(2.0 * l2) * m.array();
  });
}

double bce_term(double z, int y) {
  // max(z,0) - z*y + log1p(exp(-|z|)): stable for either sign
  return std::max(z, 0.0) - z * static_cast<double>(y) + std::log1p(std::exp(-std::abs(z)));
}

}  // namespace

template <typename S>
Eigen::Matrix<S, Eigen::Dynamic, 1> model_forward(const ModelSpec& spec,
                                                  const Parameters<S>& params, const Codes& codes,
                                                  bool train, Rng* rng) {
  Cache<S> cache;
  forward_full(spec, params, codes, train, rng, cache);
  return probs_from_logits(cache.z);
}

template <typename S>
LossGrads<S> loss_and_gradients(const ModelSpec& spec, const Parameters<S>& params,
                                const Codes& codes, const std::vector<uint8_t>& labels,
                                ClassWeightPair weights, bool train_dropout, Rng* rng) {
  if (static_cast<size_t>(codes.rows()) != labels.size())
    throw std::invalid_argument("loss_and_gradients: batch/labels mismatch");
  Cache<S> cache;
  forward_full(spec, params, codes, train_dropout, rng, cache);

  const Eigen::Index B = codes.rows();
  LossGrads<S> out;
  out.grads = zeros_like(params);
  Mat<S> dz(B, 1);
  double data_loss = 0.0;
  for (Eigen::Index i = 0; i < B; ++i) {
    double z = static_cast<double>(cache.z(i, 0));
    int y = labels[static_cast<size_t>(i)] ? 1 : 0;
    double w = y ? weights.w_pos : weights.w_neg;
    double term = w * bce_term(z, y);
    if (!std::isfinite(term))
      throw std::runtime_error("loss_and_gradients: non-finite loss at output unit");
    data_loss += term;
    double sig = 1.0 / (1.0 + std::exp(-z));
    dz(i, 0) = static_cast<S>(w * (sig - static_cast<double>(y)) / static_cast<double>(B));
  }
  data_loss /= static_cast<double>(B);

  backward_full(spec, params, codes, cache, dz, out.grads);
  add_regularization_grads(spec, params, out.grads);

  out.data_loss = data_loss;
  out.loss = data_loss + regularization_loss(spec, params);
  out.probs = probs_from_logits(cache.z);
  return out;
}

template <typename S>
double compute_loss(const ModelSpec& spec, const Parameters<S>& params, const Codes& codes,
                    const std::vector<uint8_t>& labels, ClassWeightPair weights) {
  Cache<S> cache;
  forward_full(spec, params, codes, false, nullptr, cache);
  double data_loss = 0.0;
  for (Eigen::Index i = 0; i < codes.rows(); ++i) {
    int y = labels[static_cast<size_t>(i)] ? 1 : 0;
    double w = y ? weights.w_pos : weights.w_neg;
    data_loss += w * bce_term(static_cast<double>(cache.z(i, 0)), y);
  }
  data_loss /= static_cast<double>(codes.rows());
  return data_loss + regularization_loss(spec, params);
}

template <typename S>
Mat<S> trunk_readout(const ModelSpec& spec, const Parameters<S>& params, const Codes& codes) {
  check_codes<S>(spec, codes);
  if (spec.arch == Arch::Lstm) {
    LstmCache<S> cache;
    return lstm_forward(spec, params, codes, false, nullptr, cache);
  }
  TfCache<S> cache;
  return tf_forward(spec, params, codes, false, nullptr, cache);
}

template <typename S>
double bce_from_probs(const Eigen::Matrix<S, Eigen::Dynamic, 1>& probs,
                      const std::vector<uint8_t>& labels, ClassWeightPair weights) {
  if (static_cast<size_t>(probs.size()) != labels.size())
    throw std::invalid_argument("bce_from_probs: size mismatch");
  double total = 0.0;
  for (Eigen::Index i = 0; i < probs.size(); ++i) {
    double p = static_cast<double>(probs(i));
    p = std::min(1.0 - 1e-12, std::max(1e-12, p));
    int y = labels[static_cast<size_t>(i)] ? 1 : 0;
    double w = y ? weights.w_pos : weights.w_neg;
    total += -w * (y ? std::log(p) : std::log1p(-p));
  }
  return total / static_cast<double>(probs.size());
}

// ------------------------------------------------------------------ Adam

template <typename S>
AdamState<S> make_adam_state(const Parameters<S>& params) {
  AdamState<S> st;
  for_each_tensor(const_cast<Parameters<S>&>(params),
                  [&](const std::string&, Mat<S>& m, RegGroup) {
                    st.m.push_back(Mat<S>::Zero(m.rows(), m.cols()));
                    st.v.push_back(Mat<S>::Zero(m.rows(), m.cols()));
                  });
  return st;
}

template <typename S>
void adam_step(AdamState<S>& state, Parameters<S>& params, const Parameters<S>& grads,
               double lr) {
  ++state.step;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  const S b1 = static_cast<S>(state.beta1), b2 = static_cast<S>(state.beta2);
  const S eps = static_cast<S>(state.eps);
  const S alpha = static_cast<S>(lr / bc1);
  const S vscale = static_cast<S>(1.0 / bc2);

  std::vector<Mat<S>*> pm = tensor_ptrs(params);
  std::vector<const Mat<S>*> gm;
  for_each_tensor(const_cast<Parameters<S>&>(grads),
                  [&](const std::string&, Mat<S>& m, RegGroup) { gm.push_back(&m); });
  for (size_t i = 0; i < pm.size(); ++i) {
    Mat<S>& m = state.m[i];
    Mat<S>& v = state.v[i];
    const Mat<S>& g = *gm[i];
    m = b1 * m + (S(1) - b1) * g;
    v = (b2 * v.array() + (S(1) - b2) * g.array().square()).matrix();
    pm[i]->array() -= alpha * m.array() / ((v.array() * vscale).sqrt() + eps);
  }
}

// --------------------------------------------------------- verification

double gradient_check(const ModelSpec& spec, uint64_t seed, int batch_size, int n_coords) {
  auto params = init_params<double>(spec, derive_seed(seed, "gc-params"));
  Rng data_rng(derive_seed(seed, "gc-data"));
  Codes codes(batch_size, spec.seq_len);
  for (Eigen::Index i = 0; i < codes.size(); ++i)
    codes.data()[i] = static_cast<int32_t>(data_rng.uniform_int(0, spec.vocab_size - 1));
  std::vector<uint8_t> labels(static_cast<size_t>(batch_size));
  for (auto& y : labels) y = data_rng.bernoulli(0.4) ? 1 : 0;
  ClassWeightPair weights;

  auto lg = loss_and_gradients(spec, params, codes, labels, weights, false, nullptr);

  std::vector<Mat<double>*> tensors = tensor_ptrs(params);
  std::vector<Mat<double>*> gtensors = tensor_ptrs(lg.grads);
  size_t total = 0;
  for (auto* t : tensors) total += static_cast<size_t>(t->size());

  std::vector<RegGroup> groups;
  for_each_tensor(params,
                  [&](const std::string&, Mat<double>&, RegGroup g) { groups.push_back(g); });

  Rng coord_rng(derive_seed(seed, "gc-coords"));
  // The loss is only piecewise smooth (ReLU units, |w| penalties), so a
  // single finite-difference estimate can be poisoned by a kink inside
  // its step window. Two estimates with very different windows are
  // compared: a narrow central difference (kink-safe, noisier) and a
  // wide five-point stencil (precise near zero gradients). Coordinates
  // where they disagree sit next to a kink, where no finite-difference
  // reference is valid, and are redrawn.
  const double h_narrow = 1e-6;
  const double h_wide = 1e-3;
  double max_rel = 0.0;
  for (int c = 0; c < n_coords; ++c) {
    for (int attempt = 0; attempt < 64; ++attempt) {
      size_t flat =
          static_cast<size_t>(coord_rng.uniform_int(0, static_cast<int64_t>(total) - 1));
      size_t ti = 0;
      while (flat >= static_cast<size_t>(tensors[ti]->size())) {
        flat -= static_cast<size_t>(tensors[ti]->size());
        ++ti;
      }
      double* slot = tensors[ti]->data() + flat;
      double l1 = groups[ti] == RegGroup::Layer    ? spec.l1_layer
                  : groups[ti] == RegGroup::Dense ? spec.l1_dense
                                                  : 0.0;
      if (l1 > 0.0 && std::abs(*slot) <= 8.0 * h_wide) continue;  // |w| kink in range

      const double orig = *slot;
      auto loss_at = [&](double delta) {
        *slot = orig + delta;
        double l = compute_loss(spec, params, codes, labels, weights);
        *slot = orig;
        return l;
      };
      double narrow = (loss_at(h_narrow) - loss_at(-h_narrow)) / (2.0 * h_narrow);
      double wide = (-loss_at(2 * h_wide) + 8 * loss_at(h_wide) - 8 * loss_at(-h_wide) +
                     loss_at(-2 * h_wide)) /
                    (12.0 * h_wide);
      if (std::abs(narrow - wide) > 1e-3 * std::max(std::abs(narrow), std::abs(wide)) + 1e-9)
        continue;  // a ReLU boundary sits inside the wide window

      double numeric = std::abs(narrow) >= 1e-4 ? narrow : wide;
      double analytic = gtensors[ti]->data()[flat];
      double rel = std::abs(analytic - numeric) /
                   std::max({std::abs(analytic), std::abs(numeric), 1e-8});
      if (rel > max_rel) max_rel = rel;
      break;
    }
  }
  return max_rel;
}

// --------------------------------------------------------- checkpoints

namespace {
constexpr char kCkptMagic[8] = {'H', 'L', 'C', 'K', 'P', 'T', '1', 0};
}

void save_checkpoint(const ModelSpec& spec, const Parameters<float>& params,
                     const std::string& path) {
  nlohmann::json manifest;
  manifest["spec"] = model_spec_to_json(spec);
  nlohmann::json tensors = nlohmann::json::array();
  std::vector<const Mat<float>*> mats;
  for_each_tensor(const_cast<Parameters<float>&>(params),
                  [&](const std::string& name, Mat<float>& m, RegGroup) {
                    tensors.push_back(
                        {{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}});
                    mats.push_back(&m);
                  });
  manifest["tensors"] = tensors;
  std::string header = manifest.dump();

  std::string payload;
  payload.append(kCkptMagic, sizeof(kCkptMagic));
  uint64_t hlen = header.size();
  payload.append(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  payload.append(header);
  for (const Mat<float>* m : mats)
    payload.append(reinterpret_cast<const char*>(m->data()),
                   static_cast<size_t>(m->size()) * sizeof(float));
  uint64_t hash = fnv1a64(payload.data(), payload.size());

  auto out = csv::open_out(path);
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  out.write(reinterpret_cast<const char*>(&hash), sizeof(hash));
}

Checkpoint load_checkpoint(const std::string& path) {
  auto in = csv::open_in(path);
  std::string payload((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (payload.size() < sizeof(kCkptMagic) + sizeof(uint64_t) * 2)
    throw std::runtime_error("load_checkpoint: truncated file " + path);
  uint64_t stored_hash;
  std::memcpy(&stored_hash, payload.data() + payload.size() - sizeof(uint64_t), sizeof(uint64_t));
  payload.resize(payload.size() - sizeof(uint64_t));
  if (fnv1a64(payload.data(), payload.size()) != stored_hash)
    throw std::runtime_error("load_checkpoint: content hash mismatch in " + path);
  if (std::memcmp(payload.data(), kCkptMagic, sizeof(kCkptMagic)) != 0)
    throw std::runtime_error("load_checkpoint: bad magic in " + path);

  size_t off = sizeof(kCkptMagic);
  uint64_t hlen;
  std::memcpy(&hlen, payload.data() + off, sizeof(hlen));
  off += sizeof(hlen);
  nlohmann::json manifest = nlohmann::json::parse(payload.substr(off, hlen));
  off += hlen;

  Checkpoint ck;
  ck.spec = model_spec_from_json(manifest.at("spec"));
  ck.params = init_params<float>(ck.spec, 0);
  size_t ti = 0;
  const auto& tensors = manifest.at("tensors");
  for_each_tensor(ck.params, [&](const std::string& name, Mat<float>& m, RegGroup) {
    const auto& entry = tensors.at(ti++);
    if (entry.at("name").get<std::string>() != name ||
        entry.at("rows").get<Eigen::Index>() != m.rows() ||
        entry.at("cols").get<Eigen::Index>() != m.cols())
      throw std::runtime_error("load_checkpoint: tensor manifest mismatch at " + name);
    size_t bytes = static_cast<size_t>(m.size()) * sizeof(float);
    if (off + bytes > payload.size())
      throw std::runtime_error("load_checkpoint: truncated tensor data");
    std::memcpy(m.data(), payload.data() + off, bytes);
    off += bytes;
  });
  return ck;
}

// explicit instantiations
template Parameters<float> zeros_like(const Parameters<float>&);
template Parameters<double> zeros_like(const Parameters<double>&);
template Parameters<double> convert<double>(const Parameters<float>&);
template Parameters<float> init_params<float>(const ModelSpec&, uint64_t);
template Parameters<double> init_params<double>(const ModelSpec&, uint64_t);
template Eigen::Matrix<float, Eigen::Dynamic, 1> model_forward(const ModelSpec&,
                                                               const Parameters<float>&,
                                                               const Codes&, bool, Rng*);
template Eigen::Matrix<double, Eigen::Dynamic, 1> model_forward(const ModelSpec&,
                                                                const Parameters<double>&,
                                                                const Codes&, bool, Rng*);
template LossGrads<float> loss_and_gradients(const ModelSpec&, const Parameters<float>&,
                                             const Codes&, const std::vector<uint8_t>&,
                                             ClassWeightPair, bool, Rng*);
template LossGrads<double> loss_and_gradients(const ModelSpec&, const Parameters<double>&,
                                              const Codes&, const std::vector<uint8_t>&,
                                              ClassWeightPair, bool, Rng*);
template double compute_loss(const ModelSpec&, const Parameters<float>&, const Codes&,
                             const std::vector<uint8_t>&, ClassWeightPair);
template double compute_loss(const ModelSpec&, const Parameters<double>&, const Codes&,
                             const std::vector<uint8_t>&, ClassWeightPair);
template Mat<float> trunk_readout(const ModelSpec&, const Parameters<float>&, const Codes&);
template Mat<double> trunk_readout(const ModelSpec&, const Parameters<double>&, const Codes&);
template double bce_from_probs(const Eigen::Matrix<float, Eigen::Dynamic, 1>&,
                               const std::vector<uint8_t>&, ClassWeightPair);
template double bce_from_probs(const Eigen::Matrix<double, Eigen::Dynamic, 1>&,
                               const std::vector<uint8_t>&, ClassWeightPair);
template AdamState<float> make_adam_state(const Parameters<float>&);
template AdamState<double> make_adam_state(const Parameters<double>&);
template void adam_step(AdamState<float>&, Parameters<float>&, const Parameters<float>&, double);
template void adam_step(AdamState<double>&, Parameters<double>&, const Parameters<double>&,
                        double);

}  // namespace habitlens::nn
