#include "dmf/model/dmf_model.hpp"

namespace dmf::model {

void ModelConfig::sync_and_validate() {
  transformer.model_dim = tokenizer.model_dim;
  head.model_dim = tokenizer.model_dim;
  tokenizer.validate();
  transformer.validate();
}

ParamStore init_model(const ModelConfig& cfg_in, int num_classes, Rng& rng) {
  ModelConfig cfg = cfg_in;
  cfg.sync_and_validate();
  ParamStore params;
  fusion::init_translation_params(params, cfg.tokenizer, rng);
  backbone::init_transformer_params(params, cfg.transformer, rng);
  backbone::init_head_params(params, cfg.head, num_classes, rng);
  return params;
}

losses::LossReport loss_and_grad(ParamStore& params, const ModelConfig& cfg, const Batch& batch, double smoothing,
                                 bool update_running_stats, Rng* dropout_rng) {
  const Index B = batch.size();
  const Index T = cfg.tokenizer.tokens();
  const MatrixXd x = fusion::translate(batch.modality, batch.encoded, B, params);
  backbone::EncoderCache cache;
  const MatrixXd seq = backbone::encode(x, B, cfg.transformer, params, &cache, true, dropout_rng);
  const auto head = backbone::forward_head(seq, B, params, cfg.head, backbone::Mode::train);
  if (update_running_stats) backbone::update_running_stats(params, head, cfg.head);
  const auto total = losses::total_loss({head.global_feature, batch.labels}, head.logits, smoothing, true);
  const MatrixXd d_seq = backbone::head_backward(head, total.d_global, total.d_logits, T, params);
  const MatrixXd d_x = backbone::encode_backward(cache, d_seq, cfg.transformer, params);
  fusion::translate_backward(batch.modality, batch.encoded, B, d_x, params);
  return total.report;
}

losses::LossReport loss_only(const ParamStore& params, const ModelConfig& cfg, const Batch& batch, double smoothing) {
  const Index B = batch.size();
  const MatrixXd x = fusion::translate(batch.modality, batch.encoded, B, params);
  const MatrixXd seq = backbone::encode(x, B, cfg.transformer, params);
  const auto head = backbone::forward_head(seq, B, params, cfg.head, backbone::Mode::train);
  return losses::total_loss({head.global_feature, batch.labels}, head.logits, smoothing, false).report;
}

backbone::HeadOutput forward_eval(const ParamStore& params, const ModelConfig& cfg, Modality m,
                                  const MatrixXd& encoded, Index batch) {
  const MatrixXd x = fusion::translate(m, encoded, batch, params);
  const MatrixXd seq = backbone::encode(x, batch, cfg.transformer, params);
  return backbone::forward_head(seq, batch, params, cfg.head, backbone::Mode::eval);
}

MatrixXd embed(const ParamStore& params, const ModelConfig& cfg, Modality m, const MatrixXd& encoded, Index batch) {
  MatrixXd f = forward_eval(params, cfg, m, encoded, batch).bn_feature;
  for (Index r = 0; r < f.rows(); ++r) {
    const double n = f.row(r).norm();
    if (n > 0.0) f.row(r) /= n;
  }
  return f;
}

}  // namespace dmf::model
