#pragma once

#include <string>
#include <vector>

#include "gridmarket/common.hpp"

namespace gridmarket {

// Two-layer pre-norm transformer encoder regressing per-bus accepted
// injections from per-bus features [p_net, p_load, pf, c_ls, lambda_corr].
// Inputs are z-scored with training-set statistics stored in the model; the
// head output is de-normalized back to kW.

struct EncoderLayerParams {
  VectorXd ln1_gamma, ln1_beta, ln2_gamma, ln2_beta;
  MatrixXd wq, wk, wv, wo;  // (d x d)
  MatrixXd w1;              // (d_ff x d)
  VectorXd b1;
  MatrixXd w2;  // (d x d_ff)
  VectorXd b2;
};

struct SurrogateModel {
  int d_model = 64;
  int n_layers = 2;
  int d_ff = 128;
  int n_heads = 4;
  int n_features = 5;
  MatrixXd embed_w;  // (d x F)
  VectorXd embed_b;
  std::vector<EncoderLayerParams> layers;
  VectorXd head_w;  // (d)
  double head_b = 0.0;
  VectorXd feat_mean, feat_std;  // (F)
  double target_mean = 0.0;
  double target_std = 1.0;
  std::uint64_t seed = 0;
};

struct TrainConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int batch_size = 256;
  int epochs = 200;
  std::uint64_t seed = 1;
  double val_fraction = 0.1;
  double clip_norm = 0.0;  // 0 disables clipping
  int patience = 25;       // epochs without val improvement; 0 disables
};

struct SurrogateSample {
  MatrixXd features;   // (N x F), physical units
  VectorXd target_kw;  // (N)
};

struct TrainHistory {
  std::vector<int> epoch;
  std::vector<double> train_loss;  // normalized-space MSE
  std::vector<double> val_loss;
  std::vector<double> grad_norm;  // mean global gradient norm over the epoch
  int best_epoch = -1;
};

SurrogateModel make_model(int n_features = 5, int n_heads = 4, std::uint64_t seed = 1);

// deterministic inference; N may differ from the training bus count
VectorXd forward(const SurrogateModel& model, const MatrixXd& features_kw);

// d(prediction at `bus`, kW) / d(p_net feature of the same bus, kW)
double input_gradient(const SurrogateModel& model, const MatrixXd& features_kw, int bus);
// full input Jacobian row for one output bus, shape of `features_kw`
MatrixXd input_gradient_full(const SurrogateModel& model, const MatrixXd& features_kw, int bus);

// attention rows of layer/head for property checks (softmax weights, N x N)
std::vector<MatrixXd> attention_weights(const SurrogateModel& model, const MatrixXd& features_kw,
                                        int layer);
// pre-affine layer-norm output of the first LN of a layer
MatrixXd layernorm_prenorm(const SurrogateModel& model, const MatrixXd& features_kw, int layer);

std::pair<SurrogateModel, TrainHistory> train(const std::vector<SurrogateSample>& dataset,
                                              const TrainConfig& config);

struct EvalMetrics {
  double mae_mw = 0.0;
  double rmse_mw = 0.0;
  double r2 = 0.0;
  int n_tokens = 0;
};
EvalMetrics evaluate(const SurrogateModel& model, const std::vector<SurrogateSample>& dataset);

void save_model(const SurrogateModel& model, const std::string& path);
SurrogateModel load_model(const std::string& path);

void write_history(const TrainHistory& h, const std::string& path);

}  // namespace gridmarket
