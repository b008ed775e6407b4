#include "dmf/backbone/head.hpp"

namespace dmf::backbone {

namespace {

MatrixXd cls_rows(const MatrixXd& seq_out, Index batch) {
  if (batch <= 0 || seq_out.rows() % batch != 0)
    throw ShapeError("forward_head: " + shape_str(seq_out) + " does not split into " + std::to_string(batch) +
                     " sequences");
  const Index T = seq_out.rows() / batch;
  MatrixXd g(batch, seq_out.cols());
  for (Index b = 0; b < batch; ++b) g.row(b) = seq_out.row(b * T);
  return g;
}

}  // namespace

void init_head_params(ParamStore& params, const HeadConfig& cfg, int num_classes, Rng& rng) {
  const Index D = cfg.model_dim;
  params.add_vector(kBnGamma, RowVectorXd::Ones(D));
  params.add_vector(kBnBeta, RowVectorXd::Zero(D));
  params.add_vector(kBnRunningMean, RowVectorXd::Zero(D), false);
  params.add_vector(kBnRunningVar, RowVectorXd::Ones(D), false);
  reset_classifier(params, cfg, num_classes, rng);
}

void reset_classifier(ParamStore& params, const HeadConfig& cfg, int num_classes, Rng& rng) {
  if (num_classes < 1) throw std::invalid_argument("classifier needs at least one class");
  params.erase(kClassifier);
  const Index D = cfg.model_dim;
  params.add(kClassifier, rng.truncated_normal_matrix(D, num_classes, 0.02), {D, num_classes});
}

HeadOutput forward_head(const MatrixXd& seq_out, Index batch, const ParamStore& params, const HeadConfig& cfg,
                        Mode mode) {
  HeadOutput out;
  out.global_feature = cls_rows(seq_out, batch);
  const RowVectorXd gamma = params.value(kBnGamma), beta = params.value(kBnBeta);
  if (mode == Mode::train) {
    out.bn_feature = batch_norm_train(out.global_feature, gamma, beta, cfg.bn_eps, &out.bn_cache, &out.batch_mean,
                                      &out.batch_var_unbiased);
  } else {
    out.bn_feature = batch_norm_eval(out.global_feature, gamma, beta, RowVectorXd(params.value(kBnRunningMean)),
                                     RowVectorXd(params.value(kBnRunningVar)), cfg.bn_eps);
  }
  out.logits = linear(out.bn_feature, params.value(kClassifier));
  return out;
}

void update_running_stats(ParamStore& params, const HeadOutput& out, const HeadConfig& cfg) {
  if (out.batch_mean.size() == 0) throw std::logic_error("update_running_stats: output was not computed in training mode");
  MatrixXd& rm = params.value(kBnRunningMean);
  MatrixXd& rv = params.value(kBnRunningVar);
  rm = (1.0 - cfg.bn_momentum) * rm + cfg.bn_momentum * out.batch_mean;
  rv = (1.0 - cfg.bn_momentum) * rv + cfg.bn_momentum * out.batch_var_unbiased;
}

MatrixXd head_backward(const HeadOutput& out, const MatrixXd& d_global, const MatrixXd& d_logits, Index tokens,
                       ParamStore& params) {
  const Index B = out.global_feature.rows();
  MatrixXd d_bn(B, out.bn_feature.cols());
  d_bn.noalias() = d_logits * params.value(kClassifier).transpose();
  params.grad(kClassifier).noalias() += out.bn_feature.transpose() * d_logits;
  RowVectorXd dgamma = RowVectorXd::Zero(d_bn.cols()), dbeta = RowVectorXd::Zero(d_bn.cols());
  const MatrixXd d_feat =
      d_global + batch_norm_backward(out.bn_cache, RowVectorXd(params.value(kBnGamma)), d_bn, &dgamma, &dbeta);
  params.grad(kBnGamma) += dgamma;
  params.grad(kBnBeta) += dbeta;
  MatrixXd d_seq = MatrixXd::Zero(B * tokens, d_feat.cols());
  for (Index b = 0; b < B; ++b) d_seq.row(b * tokens) = d_feat.row(b);
  return d_seq;
}

}  // namespace dmf::backbone
