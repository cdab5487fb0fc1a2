#include "gridmarket/surrogate.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

namespace gridmarket {

namespace {

constexpr double kLnEps = 1e-5;

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }
double gelu_prime(double x) {
  return 0.5 * (1.0 + std::erf(x * M_SQRT1_2)) + x * std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
}

struct LnCache {
  MatrixXd xhat;
  VectorXd inv_std;
};

MatrixXd layernorm_fwd(const MatrixXd& x, const VectorXd& gamma, const VectorXd& beta,
                       LnCache& cache) {
  const int n = static_cast<int>(x.rows()), d = static_cast<int>(x.cols());
  cache.xhat.resize(n, d);
  cache.inv_std.resize(n);
  MatrixXd out(n, d);
  for (int i = 0; i < n; ++i) {
    double m = x.row(i).mean();
    double var = (x.row(i).array() - m).square().mean();
    double inv = 1.0 / std::sqrt(var + kLnEps);
    cache.inv_std[i] = inv;
    cache.xhat.row(i) = (x.row(i).array() - m) * inv;
    out.row(i) = cache.xhat.row(i).cwiseProduct(gamma.transpose()) + beta.transpose();
  }
  return out;
}

MatrixXd layernorm_bwd(const MatrixXd& dout, const LnCache& cache, const VectorXd& gamma,
                       VectorXd* dgamma, VectorXd* dbeta) {
  const int n = static_cast<int>(dout.rows()), d = static_cast<int>(dout.cols());
  if (dgamma) {
    *dgamma += (dout.cwiseProduct(cache.xhat)).colwise().sum().transpose();
    *dbeta += dout.colwise().sum().transpose();
  }
  MatrixXd dx(n, d);
  for (int i = 0; i < n; ++i) {
    Eigen::RowVectorXd dxhat = dout.row(i).cwiseProduct(gamma.transpose());
    double m1 = dxhat.mean();
    double m2 = dxhat.cwiseProduct(cache.xhat.row(i)).mean();
    dx.row(i) = cache.inv_std[i] * (dxhat.array() - m1 - cache.xhat.row(i).array() * m2);
  }
  return dx;
}

struct LayerCache {
  MatrixXd h_in;
  LnCache ln1;
  MatrixXd a;  // LN1 output
  MatrixXd q, k, v;
  std::vector<MatrixXd> attn;  // per-head softmax weights
  MatrixXd o_concat;
  MatrixXd h_mid;
  LnCache ln2;
  MatrixXd bnorm;  // LN2 output
  MatrixXd ff_pre, ff_act;
};

struct ForwardCache {
  MatrixXd xn;
  std::vector<LayerCache> layers;
  MatrixXd h_final;
  VectorXd y_norm;
};

void check_finite(const MatrixXd& m, int layer, const char* what) {
  if (!m.allFinite())
    throw SolverError(std::string("surrogate forward: non-finite ") + what + " at layer " +
                      std::to_string(layer));
}

VectorXd forward_cached(const SurrogateModel& mdl, const MatrixXd& x_kw, ForwardCache& fc) {
  const int n = static_cast<int>(x_kw.rows());
  if (x_kw.cols() != mdl.n_features)
    throw DataError("surrogate forward: expected " + std::to_string(mdl.n_features) +
                    " features, got " + std::to_string(x_kw.cols()));
  const int d = mdl.d_model, dk = mdl.d_model / mdl.n_heads;

  fc.xn.resize(n, mdl.n_features);
  for (int f = 0; f < mdl.n_features; ++f)
    fc.xn.col(f) = (x_kw.col(f).array() - mdl.feat_mean[f]) / mdl.feat_std[f];
  MatrixXd h = fc.xn * mdl.embed_w.transpose();
  h.rowwise() += mdl.embed_b.transpose();

  fc.layers.resize(mdl.n_layers);
  for (int L = 0; L < mdl.n_layers; ++L) {
    auto& lc = fc.layers[L];
    const auto& p = mdl.layers[L];
    lc.h_in = h;
    lc.a = layernorm_fwd(h, p.ln1_gamma, p.ln1_beta, lc.ln1);
    lc.q.noalias() = lc.a * p.wq.transpose();
    lc.k.noalias() = lc.a * p.wk.transpose();
    lc.v.noalias() = lc.a * p.wv.transpose();
    lc.o_concat.resize(n, d);
    lc.attn.assign(mdl.n_heads, MatrixXd());
    const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
    for (int hd = 0; hd < mdl.n_heads; ++hd) {
      auto qh = lc.q.middleCols(hd * dk, dk);
      auto kh = lc.k.middleCols(hd * dk, dk);
      auto vh = lc.v.middleCols(hd * dk, dk);
      MatrixXd s = qh * kh.transpose() * scale;
      MatrixXd w(n, n);
      for (int i = 0; i < n; ++i) {
        double mx = s.row(i).maxCoeff();
        w.row(i) = (s.row(i).array() - mx).exp();
        w.row(i) /= w.row(i).sum();
      }
      lc.attn[hd] = w;
      lc.o_concat.middleCols(hd * dk, dk).noalias() = w * vh;
    }
    MatrixXd m = lc.o_concat * p.wo.transpose();
    lc.h_mid = lc.h_in + m;
    lc.bnorm = layernorm_fwd(lc.h_mid, p.ln2_gamma, p.ln2_beta, lc.ln2);
    lc.ff_pre.noalias() = lc.bnorm * p.w1.transpose();
    lc.ff_pre.rowwise() += p.b1.transpose();
    lc.ff_act = lc.ff_pre.unaryExpr([](double x) { return gelu(x); });
    h = lc.h_mid + lc.ff_act * p.w2.transpose();
    h.rowwise() += p.b2.transpose();
    check_finite(h, L, "activations");
  }
  fc.h_final = h;
  fc.y_norm = h * mdl.head_w;
  fc.y_norm.array() += mdl.head_b;
  return fc.y_norm * mdl.target_std + VectorXd::Constant(n, mdl.target_mean);
}

// gradient container, same shapes as the model
struct Grads {
  MatrixXd embed_w;
  VectorXd embed_b;
  std::vector<EncoderLayerParams> layers;
  VectorXd head_w;
  double head_b = 0.0;
};

Grads make_zero_grads(const SurrogateModel& m) {
  Grads g;
  g.embed_w = MatrixXd::Zero(m.embed_w.rows(), m.embed_w.cols());
  g.embed_b = VectorXd::Zero(m.embed_b.size());
  g.layers.resize(m.n_layers);
  for (int L = 0; L < m.n_layers; ++L) {
    const auto& p = m.layers[L];
    auto& q = g.layers[L];
    q.ln1_gamma = VectorXd::Zero(p.ln1_gamma.size());
    q.ln1_beta = VectorXd::Zero(p.ln1_beta.size());
    q.ln2_gamma = VectorXd::Zero(p.ln2_gamma.size());
    q.ln2_beta = VectorXd::Zero(p.ln2_beta.size());
    q.wq = MatrixXd::Zero(p.wq.rows(), p.wq.cols());
    q.wk = MatrixXd::Zero(p.wk.rows(), p.wk.cols());
    q.wv = MatrixXd::Zero(p.wv.rows(), p.wv.cols());
    q.wo = MatrixXd::Zero(p.wo.rows(), p.wo.cols());
    q.w1 = MatrixXd::Zero(p.w1.rows(), p.w1.cols());
    q.b1 = VectorXd::Zero(p.b1.size());
    q.w2 = MatrixXd::Zero(p.w2.rows(), p.w2.cols());
    q.b2 = VectorXd::Zero(p.b2.size());
  }
  g.head_w = VectorXd::Zero(m.head_w.size());
  g.head_b = 0.0;
  return g;
}

// backward from a seed on y_norm; returns d/d(normalized input);
// parameter gradients accumulate into *grads when given
MatrixXd backward(const SurrogateModel& mdl, const ForwardCache& fc, const VectorXd& dy_norm,
                  Grads* grads) {
  const int n = static_cast<int>(fc.xn.rows());
  const int d = mdl.d_model, dk = mdl.d_model / mdl.n_heads;

  if (grads) {
    grads->head_w += fc.h_final.transpose() * dy_norm;
    grads->head_b += dy_norm.sum();
  }
  MatrixXd dh = dy_norm * mdl.head_w.transpose();

  for (int L = mdl.n_layers - 1; L >= 0; --L) {
    const auto& p = mdl.layers[L];
    const auto& lc = fc.layers[L];
    EncoderLayerParams* gl = grads ? &grads->layers[L] : nullptr;

    // FFN block: h_out = h_mid + gelu(bnorm W1^T + b1) W2^T + b2
    MatrixXd dff = dh;  // d wrt the FFN additive term
    MatrixXd dact = dff * p.w2;
    if (gl) {
      gl->w2 += dff.transpose() * lc.ff_act;
      gl->b2 += dff.colwise().sum().transpose();
    }
    MatrixXd dpre = dact.cwiseProduct(lc.ff_pre.unaryExpr([](double x) { return gelu_prime(x); }));
    if (gl) {
      gl->w1 += dpre.transpose() * lc.bnorm;
      gl->b1 += dpre.colwise().sum().transpose();
    }
    MatrixXd dbnorm = dpre * p.w1;
    MatrixXd dh_mid = dh;  // residual path
    dh_mid += layernorm_bwd(dbnorm, lc.ln2, p.ln2_gamma, gl ? &gl->ln2_gamma : nullptr,
                            gl ? &gl->ln2_beta : nullptr);

    // attention block: h_mid = h_in + (concat heads) Wo^T
    MatrixXd dm = dh_mid;
    MatrixXd do_concat = dm * p.wo;
    if (gl) gl->wo += dm.transpose() * lc.o_concat;
    MatrixXd dq(n, d), dkm(n, d), dv(n, d);
    const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
    for (int hd = 0; hd < mdl.n_heads; ++hd) {
      auto qh = lc.q.middleCols(hd * dk, dk);
      auto kh = lc.k.middleCols(hd * dk, dk);
      auto vh = lc.v.middleCols(hd * dk, dk);
      const MatrixXd& w = lc.attn[hd];
      MatrixXd doh = do_concat.middleCols(hd * dk, dk);
      MatrixXd dw = doh * vh.transpose();
      dv.middleCols(hd * dk, dk).noalias() = w.transpose() * doh;
      // softmax rows
      MatrixXd ds(n, n);
      for (int i = 0; i < n; ++i) {
        double dot = dw.row(i).dot(w.row(i));
        ds.row(i) = w.row(i).cwiseProduct((dw.row(i).array() - dot).matrix());
      }
      ds *= scale;
      dq.middleCols(hd * dk, dk).noalias() = ds * kh;
      dkm.middleCols(hd * dk, dk).noalias() = ds.transpose() * qh;
    }
    MatrixXd da = dq * p.wq + dkm * p.wk + dv * p.wv;
    if (gl) {
      gl->wq += dq.transpose() * lc.a;
      gl->wk += dkm.transpose() * lc.a;
      gl->wv += dv.transpose() * lc.a;
    }
    MatrixXd dh_in = dh_mid;  // residual
    dh_in += layernorm_bwd(da, lc.ln1, p.ln1_gamma, gl ? &gl->ln1_gamma : nullptr,
                           gl ? &gl->ln1_beta : nullptr);
    dh = dh_in;
  }

  if (grads) {
    grads->embed_w += dh.transpose() * fc.xn;
    grads->embed_b += dh.colwise().sum().transpose();
  }
  return dh * mdl.embed_w;  // d wrt normalized input
}

// flat views over all parameters in declared order
std::vector<std::pair<double*, std::size_t>> param_views(SurrogateModel& m) {
  std::vector<std::pair<double*, std::size_t>> v;
  auto add = [&](double* p, std::size_t s) { v.emplace_back(p, s); };
  add(m.embed_w.data(), m.embed_w.size());
  add(m.embed_b.data(), m.embed_b.size());
  for (auto& l : m.layers) {
    add(l.ln1_gamma.data(), l.ln1_gamma.size());
    add(l.ln1_beta.data(), l.ln1_beta.size());
    add(l.wq.data(), l.wq.size());
    add(l.wk.data(), l.wk.size());
    add(l.wv.data(), l.wv.size());
    add(l.wo.data(), l.wo.size());
    add(l.ln2_gamma.data(), l.ln2_gamma.size());
    add(l.ln2_beta.data(), l.ln2_beta.size());
    add(l.w1.data(), l.w1.size());
    add(l.b1.data(), l.b1.size());
    add(l.w2.data(), l.w2.size());
    add(l.b2.data(), l.b2.size());
  }
  add(m.head_w.data(), m.head_w.size());
  add(&m.head_b, 1);
  return v;
}

std::vector<std::pair<double*, std::size_t>> grad_views(Grads& g, int n_layers) {
  std::vector<std::pair<double*, std::size_t>> v;
  auto add = [&](double* p, std::size_t s) { v.emplace_back(p, s); };
  add(g.embed_w.data(), g.embed_w.size());
  add(g.embed_b.data(), g.embed_b.size());
  for (int L = 0; L < n_layers; ++L) {
    auto& l = g.layers[L];
    add(l.ln1_gamma.data(), l.ln1_gamma.size());
    add(l.ln1_beta.data(), l.ln1_beta.size());
    add(l.wq.data(), l.wq.size());
    add(l.wk.data(), l.wk.size());
    add(l.wv.data(), l.wv.size());
    add(l.wo.data(), l.wo.size());
    add(l.ln2_gamma.data(), l.ln2_gamma.size());
    add(l.ln2_beta.data(), l.ln2_beta.size());
    add(l.w1.data(), l.w1.size());
    add(l.b1.data(), l.b1.size());
    add(l.w2.data(), l.w2.size());
    add(l.b2.data(), l.b2.size());
  }
  add(g.head_w.data(), g.head_w.size());
  add(&g.head_b, 1);
  return v;
}

void xavier_init(MatrixXd& w, Rng& rng) {
  double lim = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
  for (int j = 0; j < w.cols(); ++j)
    for (int i = 0; i < w.rows(); ++i) w(i, j) = rng.uniform(-lim, lim);
}

}  // namespace

SurrogateModel make_model(int n_features, int n_heads, std::uint64_t seed) {
  SurrogateModel m;
  m.n_features = n_features;
  m.n_heads = n_heads;
  m.seed = seed;
  if (m.d_model % m.n_heads != 0) throw DataError("surrogate: d_model not divisible by n_heads");
  Rng rng(seed);
  m.embed_w.resize(m.d_model, n_features);
  xavier_init(m.embed_w, rng);
  m.embed_b = VectorXd::Zero(m.d_model);
  m.layers.resize(m.n_layers);
  for (auto& l : m.layers) {
    l.ln1_gamma = VectorXd::Ones(m.d_model);
    l.ln1_beta = VectorXd::Zero(m.d_model);
    l.ln2_gamma = VectorXd::Ones(m.d_model);
    l.ln2_beta = VectorXd::Zero(m.d_model);
    l.wq.resize(m.d_model, m.d_model);
    l.wk.resize(m.d_model, m.d_model);
    l.wv.resize(m.d_model, m.d_model);
    l.wo.resize(m.d_model, m.d_model);
    xavier_init(l.wq, rng);
    xavier_init(l.wk, rng);
    xavier_init(l.wv, rng);
    xavier_init(l.wo, rng);
    l.w1.resize(m.d_ff, m.d_model);
    xavier_init(l.w1, rng);
    l.b1 = VectorXd::Zero(m.d_ff);
    l.w2.resize(m.d_model, m.d_ff);
    xavier_init(l.w2, rng);
    l.b2 = VectorXd::Zero(m.d_model);
  }
  m.head_w.resize(m.d_model);
  MatrixXd hw(m.d_model, 1);
  xavier_init(hw, rng);
  m.head_w = hw.col(0);
  m.head_b = 0.0;
  m.feat_mean = VectorXd::Zero(n_features);
  m.feat_std = VectorXd::Ones(n_features);
  return m;
}

VectorXd forward(const SurrogateModel& model, const MatrixXd& features_kw) {
  ForwardCache fc;
  return forward_cached(model, features_kw, fc);
}

double input_gradient(const SurrogateModel& model, const MatrixXd& features_kw, int bus) {
  return input_gradient_full(model, features_kw, bus)(bus, 0);
}

MatrixXd input_gradient_full(const SurrogateModel& model, const MatrixXd& features_kw, int bus) {
  if (bus < 0 || bus >= features_kw.rows()) throw DataError("input_gradient: bus out of range");
  ForwardCache fc;
  forward_cached(model, features_kw, fc);
  VectorXd seed = VectorXd::Zero(features_kw.rows());
  seed[bus] = 1.0;
  MatrixXd dx = backward(model, fc, seed, nullptr);
  for (int f = 0; f < model.n_features; ++f) dx.col(f) /= model.feat_std[f];
  return dx * model.target_std;
}

std::vector<MatrixXd> attention_weights(const SurrogateModel& model, const MatrixXd& features_kw,
                                        int layer) {
  if (layer < 0 || layer >= model.n_layers) throw DataError("attention_weights: bad layer");
  ForwardCache fc;
  forward_cached(model, features_kw, fc);
  return fc.layers[layer].attn;
}

MatrixXd layernorm_prenorm(const SurrogateModel& model, const MatrixXd& features_kw, int layer) {
  if (layer < 0 || layer >= model.n_layers) throw DataError("layernorm_prenorm: bad layer");
  ForwardCache fc;
  forward_cached(model, features_kw, fc);
  return fc.layers[layer].ln1.xhat;
}

std::pair<SurrogateModel, TrainHistory> train(const std::vector<SurrogateSample>& dataset,
                                              const TrainConfig& config) {
  if (dataset.empty()) throw TrainError("train: empty dataset");
  if (!(config.learning_rate > 0)) throw TrainError("train: learning rate must be positive");
  if (!(config.val_fraction > 0 && config.val_fraction < 1))
    throw TrainError("train: validation fraction must lie in (0, 1)");
  if (config.epochs < 1) throw TrainError("train: epochs must be at least 1");
  const int n_feat = static_cast<int>(dataset[0].features.cols());
  for (const auto& s : dataset) {
    if (s.features.cols() != n_feat || s.features.rows() != s.target_kw.size())
      throw TrainError("train: inconsistent sample shapes");
    if (!s.features.allFinite() || !s.target_kw.allFinite())
      throw TrainError("train: non-finite sample");
  }

  Rng rng(config.seed);
  std::vector<int> idx(dataset.size());
  std::iota(idx.begin(), idx.end(), 0);
  rng.shuffle(idx);
  int n_val = std::max(1, static_cast<int>(std::llround(config.val_fraction * idx.size())));
  if (n_val >= static_cast<int>(idx.size())) n_val = static_cast<int>(idx.size()) - 1;
  std::vector<int> val_idx(idx.end() - n_val, idx.end());
  std::vector<int> train_idx(idx.begin(), idx.end() - n_val);

  SurrogateModel model = make_model(n_feat, 4, config.seed);

  // normalization statistics from the training split
  VectorXd mean = VectorXd::Zero(n_feat), sq = VectorXd::Zero(n_feat);
  double tmean = 0, tsq = 0;
  std::size_t count = 0;
  for (int si : train_idx) {
    const auto& s = dataset[si];
    for (int r = 0; r < s.features.rows(); ++r) {
      mean += s.features.row(r).transpose();
      sq += s.features.row(r).cwiseProduct(s.features.row(r)).transpose();
      tmean += s.target_kw[r];
      tsq += s.target_kw[r] * s.target_kw[r];
      ++count;
    }
  }
  mean /= static_cast<double>(count);
  sq /= static_cast<double>(count);
  tmean /= static_cast<double>(count);
  tsq /= static_cast<double>(count);
  model.feat_mean = mean;
  model.feat_std = (sq - mean.cwiseProduct(mean)).cwiseMax(0.0).cwiseSqrt();
  for (int f = 0; f < n_feat; ++f)
    if (model.feat_std[f] < 1e-12) model.feat_std[f] = 1.0;  // constant feature
  model.target_mean = tmean;
  model.target_std = std::sqrt(std::max(tsq - tmean * tmean, 0.0));
  if (model.target_std < 1e-12) model.target_std = 1.0;

  auto params = param_views(model);
  std::size_t n_params = 0;
  for (auto& pv : params) n_params += pv.second;
  VectorXd adam_m = VectorXd::Zero(n_params), adam_v = VectorXd::Zero(n_params);
  std::size_t adam_t = 0;

  auto val_loss_fn = [&](const SurrogateModel& m) {
    double loss = 0;
    std::size_t tok = 0;
    ForwardCache fc;
    for (int si : val_idx) {
      forward_cached(m, dataset[si].features, fc);
      VectorXd yn = (dataset[si].target_kw.array() - m.target_mean) / m.target_std;
      loss += (fc.y_norm - yn).squaredNorm();
      tok += yn.size();
    }
    return loss / static_cast<double>(tok);
  };

  TrainHistory hist;
  SurrogateModel best = model;
  double best_val = std::numeric_limits<double>::infinity();
  int since_best = 0;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(train_idx);
    double ep_loss = 0;
    std::size_t ep_tokens = 0;
    double ep_gnorm = 0;
    int n_batches = 0;

    for (std::size_t start = 0; start < train_idx.size(); start += config.batch_size) {
      std::size_t stop = std::min(train_idx.size(), start + config.batch_size);
      Grads g = make_zero_grads(model);
      std::size_t batch_tokens = 0;
      for (std::size_t bi = start; bi < stop; ++bi) batch_tokens += dataset[train_idx[bi]].target_kw.size();

      double batch_loss = 0;
      ForwardCache fc;
      for (std::size_t bi = start; bi < stop; ++bi) {
        const auto& s = dataset[train_idx[bi]];
        forward_cached(model, s.features, fc);
        VectorXd yn = (s.target_kw.array() - model.target_mean) / model.target_std;
        VectorXd err = fc.y_norm - yn;
        batch_loss += err.squaredNorm();
        VectorXd seed_grad = 2.0 * err / static_cast<double>(batch_tokens);
        backward(model, fc, seed_grad, &g);
      }
      batch_loss /= static_cast<double>(batch_tokens);
      if (!std::isfinite(batch_loss))
        throw TrainError("train: loss diverged at epoch " + std::to_string(epoch));

      auto gviews = grad_views(g, model.n_layers);
      double gnorm2 = 0;
      for (auto& gv : gviews)
        gnorm2 += Eigen::Map<VectorXd>(gv.first, gv.second).squaredNorm();
      double gnorm = std::sqrt(gnorm2);
      double scale = 1.0;
      if (config.clip_norm > 0 && gnorm > config.clip_norm) scale = config.clip_norm / gnorm;

      ++adam_t;
      double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(adam_t));
      double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(adam_t));
      std::size_t off = 0;
      for (std::size_t piece = 0; piece < params.size(); ++piece) {
        Eigen::Map<VectorXd> p(params[piece].first, params[piece].second);
        Eigen::Map<VectorXd> gr(gviews[piece].first, gviews[piece].second);
        for (Eigen::Index j = 0; j < p.size(); ++j) {
          double gj = gr[j] * scale;
          double& mj = adam_m[off + j];
          double& vj = adam_v[off + j];
          mj = config.beta1 * mj + (1 - config.beta1) * gj;
          vj = config.beta2 * vj + (1 - config.beta2) * gj * gj;
          p[j] -= config.learning_rate * (mj / bc1) / (std::sqrt(vj / bc2) + config.adam_eps);
        }
        off += params[piece].second;
      }

      ep_loss += batch_loss * static_cast<double>(batch_tokens);
      ep_tokens += batch_tokens;
      ep_gnorm += gnorm;
      ++n_batches;
    }

    double vloss = val_loss_fn(model);
    hist.epoch.push_back(epoch);
    hist.train_loss.push_back(ep_loss / static_cast<double>(ep_tokens));
    hist.val_loss.push_back(vloss);
    hist.grad_norm.push_back(ep_gnorm / std::max(1, n_batches));

    if (vloss < best_val) {
      best_val = vloss;
      best = model;
      hist.best_epoch = epoch;
      since_best = 0;
    } else if (config.patience > 0 && ++since_best >= config.patience) {
      break;
    }
  }
  return {best, hist};
}

EvalMetrics evaluate(const SurrogateModel& model, const std::vector<SurrogateSample>& dataset) {
  EvalMetrics m;
  double se = 0, ae = 0, ysum = 0, ysq = 0;
  std::size_t n = 0;
  for (const auto& s : dataset) {
    VectorXd yhat = forward(model, s.features);
    for (int i = 0; i < yhat.size(); ++i) {
      double e = yhat[i] - s.target_kw[i];
      se += e * e;
      ae += std::abs(e);
      ysum += s.target_kw[i];
      ysq += s.target_kw[i] * s.target_kw[i];
      ++n;
    }
  }
  if (n == 0) throw DataError("evaluate: empty dataset");
  double nn = static_cast<double>(n);
  double var = ysq / nn - (ysum / nn) * (ysum / nn);
  m.mae_mw = ae / nn / 1000.0;
  m.rmse_mw = std::sqrt(se / nn) / 1000.0;
  m.r2 = var > 0 ? 1.0 - (se / nn) / var : 0.0;
  m.n_tokens = static_cast<int>(n);
  return m;
}

namespace {
constexpr char kMagic[8] = {'G', 'M', 'S', 'U', 'R', '0', '0', '1'};

void put_bytes(std::string& buf, const void* p, std::size_t n) {
  buf.append(static_cast<const char*>(p), n);
}
template <typename T>
void put_pod(std::string& buf, T v) {
  put_bytes(buf, &v, sizeof(T));
}
void put_mat(std::string& buf, const MatrixXd& m) {
  put_bytes(buf, m.data(), sizeof(double) * m.size());
}
void put_vec(std::string& buf, const VectorXd& v) {
  put_bytes(buf, v.data(), sizeof(double) * v.size());
}

struct Reader {
  const std::string& buf;
  std::size_t pos = 0;
  void get_bytes(void* p, std::size_t n) {
    if (pos + n > buf.size()) throw DataError("model file: truncated");
    std::memcpy(p, buf.data() + pos, n);
    pos += n;
  }
  template <typename T>
  T get_pod() {
    T v;
    get_bytes(&v, sizeof(T));
    return v;
  }
  void get_mat(MatrixXd& m) { get_bytes(m.data(), sizeof(double) * m.size()); }
  void get_vec(VectorXd& v) { get_bytes(v.data(), sizeof(double) * v.size()); }
};
}  // namespace

void save_model(const SurrogateModel& m, const std::string& path) {
  std::string buf;
  put_bytes(buf, kMagic, sizeof(kMagic));
  put_pod<std::int32_t>(buf, m.d_model);
  put_pod<std::int32_t>(buf, m.n_layers);
  put_pod<std::int32_t>(buf, m.d_ff);
  put_pod<std::int32_t>(buf, m.n_heads);
  put_pod<std::int32_t>(buf, m.n_features);
  put_pod<std::uint64_t>(buf, m.seed);
  put_vec(buf, m.feat_mean);
  put_vec(buf, m.feat_std);
  put_pod<double>(buf, m.target_mean);
  put_pod<double>(buf, m.target_std);
  put_mat(buf, m.embed_w);
  put_vec(buf, m.embed_b);
  for (const auto& l : m.layers) {
    put_vec(buf, l.ln1_gamma);
    put_vec(buf, l.ln1_beta);
    put_mat(buf, l.wq);
    put_mat(buf, l.wk);
    put_mat(buf, l.wv);
    put_mat(buf, l.wo);
    put_vec(buf, l.ln2_gamma);
    put_vec(buf, l.ln2_beta);
    put_mat(buf, l.w1);
    put_vec(buf, l.b1);
    put_mat(buf, l.w2);
    put_vec(buf, l.b2);
  }
  put_vec(buf, m.head_w);
  put_pod<double>(buf, m.head_b);
  std::uint32_t crc = crc32(buf.data(), buf.size());
  put_pod<std::uint32_t>(buf, crc);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("save_model: cannot write " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

SurrogateModel load_model(const std::string& path) {
  std::string buf = read_text_file(path);
  if (buf.size() < sizeof(kMagic) + 4) throw DataError("model file: truncated");
  std::uint32_t stored;
  std::memcpy(&stored, buf.data() + buf.size() - 4, 4);
  std::uint32_t actual = crc32(buf.data(), buf.size() - 4);
  if (stored != actual) throw DataError("model file: checksum mismatch (corrupt file)");

  Reader r{buf};
  char magic[8];
  r.get_bytes(magic, 8);
  if (std::memcmp(magic, kMagic, 8) != 0)
    throw DataError("model file: bad magic or version mismatch");

  SurrogateModel m;
  m.d_model = r.get_pod<std::int32_t>();
  m.n_layers = r.get_pod<std::int32_t>();
  m.d_ff = r.get_pod<std::int32_t>();
  m.n_heads = r.get_pod<std::int32_t>();
  m.n_features = r.get_pod<std::int32_t>();
  if (m.d_model != 64 || m.d_ff != 128)
    throw DataError("model file: shape mismatch, expected d_model=64/d_ff=128, got d_model=" +
                    std::to_string(m.d_model) + "/d_ff=" + std::to_string(m.d_ff));
  if (m.n_layers < 1 || m.n_heads < 1 || m.d_model % m.n_heads != 0 || m.n_features < 1)
    throw DataError("model file: invalid header");
  m.seed = r.get_pod<std::uint64_t>();
  m.feat_mean.resize(m.n_features);
  m.feat_std.resize(m.n_features);
  r.get_vec(m.feat_mean);
  r.get_vec(m.feat_std);
  m.target_mean = r.get_pod<double>();
  m.target_std = r.get_pod<double>();
  m.embed_w.resize(m.d_model, m.n_features);
  m.embed_b.resize(m.d_model);
  r.get_mat(m.embed_w);
  r.get_vec(m.embed_b);
  m.layers.resize(m.n_layers);
  for (auto& l : m.layers) {
    l.ln1_gamma.resize(m.d_model);
    l.ln1_beta.resize(m.d_model);
    l.wq.resize(m.d_model, m.d_model);
    l.wk.resize(m.d_model, m.d_model);
    l.wv.resize(m.d_model, m.d_model);
    l.wo.resize(m.d_model, m.d_model);
    l.ln2_gamma.resize(m.d_model);
    l.ln2_beta.resize(m.d_model);
    l.w1.resize(m.d_ff, m.d_model);
    l.b1.resize(m.d_ff);
    l.w2.resize(m.d_model, m.d_ff);
    l.b2.resize(m.d_model);
    r.get_vec(l.ln1_gamma);
    r.get_vec(l.ln1_beta);
    r.get_mat(l.wq);
    r.get_mat(l.wk);
    r.get_mat(l.wv);
    r.get_mat(l.wo);
    r.get_vec(l.ln2_gamma);
    r.get_vec(l.ln2_beta);
    r.get_mat(l.w1);
    r.get_vec(l.b1);
    r.get_mat(l.w2);
    r.get_vec(l.b2);
  }
  m.head_w.resize(m.d_model);
  r.get_vec(m.head_w);
  m.head_b = r.get_pod<double>();
  if (r.pos != buf.size() - 4) throw DataError("model file: trailing bytes");
  return m;
}

void write_history(const TrainHistory& h, const std::string& path) {
  std::string out = "epoch\ttrain_loss\tval_loss\tgrad_norm\n";
  for (std::size_t i = 0; i < h.epoch.size(); ++i) {
    out += std::to_string(h.epoch[i]) + "\t" + fmt_full(h.train_loss[i]) + "\t" +
           fmt_full(h.val_loss[i]) + "\t" + fmt_full(h.grad_norm[i]) + "\n";
  }
  write_text_file(path, out);
}

}  // namespace gridmarket
