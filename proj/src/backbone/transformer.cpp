#include "dmf/backbone/transformer.hpp"

#include <cmath>

namespace dmf::backbone {

namespace {

struct BlockParams {
  RowVectorXd ln1_gamma, ln1_beta, ln2_gamma, ln2_beta;
  const MatrixXd* qkv_w;
  RowVectorXd qkv_b;
  const MatrixXd* out_w;
  RowVectorXd out_b;
  const MatrixXd* fc1_w;
  RowVectorXd fc1_b;
  const MatrixXd* fc2_w;
  RowVectorXd fc2_b;
};

// Biases that only move every output row by one vector are left out of the
// last block: the head's batch norm and the pairwise distances cancel such a
// shift, so the parameter would never receive a gradient.
RowVectorXd bias_or_zero(const ParamStore& params, const std::string& path, Index n) {
  return params.contains(path) ? RowVectorXd(params.value(path)) : RowVectorXd::Zero(n);
}

// Keys carry no bias either: it would shift every score of a row equally,
// which the softmax ignores.
RowVectorXd qkv_bias(const ParamStore& params, const std::string& p) {
  const RowVectorXd& q = params.value(p + "attn/q_bias");
  const Index D = q.size();
  RowVectorXd b = RowVectorXd::Zero(3 * D);
  b.head(D) = q;
  b.tail(D) = bias_or_zero(params, p + "attn/v_bias", D);
  return b;
}

BlockParams fetch(const ParamStore& params, int layer) {
  const std::string p = block_prefix(layer);
  return {params.value(p + "ln1/gamma"),  params.value(p + "ln1/beta"),   params.value(p + "ln2/gamma"),
          params.value(p + "ln2/beta"),   &params.value(p + "attn/qkv/weight"), qkv_bias(params, p),
          &params.value(p + "attn/out/weight"), bias_or_zero(params, p + "attn/out/bias", params.value(p + "attn/out/weight").cols()),
          &params.value(p + "mlp/fc1/weight"), params.value(p + "mlp/fc1/bias"), &params.value(p + "mlp/fc2/weight"),
          bias_or_zero(params, p + "mlp/fc2/bias", params.value(p + "mlp/fc2/weight").cols())};
}

MatrixXd dropout_mask(Index rows, Index cols, double rate, Rng& rng) {
  MatrixXd m(rows, cols);
  const double keep = 1.0 - rate;
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform() < keep ? 1.0 / keep : 0.0;
  return m;
}

// Attention over one block of stacked sequences; fills `probs` when non-null.
MatrixXd attention(const MatrixXd& qkv, Index batch, Index T, const TransformerConfig& cfg,
                   std::vector<MatrixXd>* probs) {
  const Index D = cfg.model_dim, dh = cfg.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  MatrixXd context(batch * T, D);
  if (probs) probs->resize(static_cast<std::size_t>(batch * cfg.heads));
  MatrixXd scores(T, T);
  for (Index b = 0; b < batch; ++b)
    for (Index h = 0; h < cfg.heads; ++h) {
      auto q = qkv.block(b * T, h * dh, T, dh);
      auto k = qkv.block(b * T, D + h * dh, T, dh);
      auto v = qkv.block(b * T, 2 * D + h * dh, T, dh);
      scores.noalias() = q * k.transpose();
      scores *= scale;
      MatrixXd p = softmax_rows(scores);
      context.block(b * T, h * dh, T, dh).noalias() = p * v;
      if (probs) (*probs)[static_cast<std::size_t>(b * cfg.heads + h)] = std::move(p);
    }
  return context;
}

}  // namespace

void TransformerConfig::validate() const {
  if (depth < 1) throw std::invalid_argument("transformer: depth must be >= 1");
  if (heads < 1 || model_dim % heads != 0)
    throw std::invalid_argument("transformer: model_dim " + std::to_string(model_dim) + " is not divisible by " +
                                std::to_string(heads) + " heads");
  if (mlp_ratio <= 0.0 || hidden_dim() < 1) throw std::invalid_argument("transformer: mlp_ratio must be positive");
  if (dropout < 0.0 || dropout >= 1.0) throw std::invalid_argument("transformer: dropout must lie in [0, 1)");
}

std::string block_prefix(int layer) { return "backbone/block" + std::to_string(layer) + "/"; }

void init_transformer_params(ParamStore& params, const TransformerConfig& cfg, Rng& rng) {
  cfg.validate();
  const Index D = cfg.model_dim, H = cfg.hidden_dim();
  for (int l = 0; l < cfg.depth; ++l) {
    const std::string p = block_prefix(l);
    const bool last = l == cfg.depth - 1;
    params.add_vector(p + "ln1/gamma", RowVectorXd::Ones(D));
    params.add_vector(p + "ln1/beta", RowVectorXd::Zero(D));
    params.add(p + "attn/qkv/weight", rng.truncated_normal_matrix(D, 3 * D, 0.02), {D, 3 * D});
    params.add_vector(p + "attn/q_bias", RowVectorXd::Zero(D));
    if (!last) params.add_vector(p + "attn/v_bias", RowVectorXd::Zero(D));
    params.add(p + "attn/out/weight", rng.truncated_normal_matrix(D, D, 0.02), {D, D});
    if (!last) params.add_vector(p + "attn/out/bias", RowVectorXd::Zero(D));
    params.add_vector(p + "ln2/gamma", RowVectorXd::Ones(D));
    params.add_vector(p + "ln2/beta", RowVectorXd::Zero(D));
    params.add(p + "mlp/fc1/weight", rng.truncated_normal_matrix(D, H, 0.02), {D, H});
    params.add_vector(p + "mlp/fc1/bias", RowVectorXd::Zero(H));
    params.add(p + "mlp/fc2/weight", rng.truncated_normal_matrix(H, D, 0.02), {H, D});
    if (!last) params.add_vector(p + "mlp/fc2/bias", RowVectorXd::Zero(D));
  }
}

MatrixXd encode(const MatrixXd& x, Index batch, const TransformerConfig& cfg, const ParamStore& params,
                EncoderCache* cache, bool training, Rng* rng) {
  cfg.validate();
  if (batch <= 0 || x.rows() % batch != 0 || x.cols() != cfg.model_dim)
    throw ShapeError("encode: input " + shape_str(x) + " is not " + std::to_string(batch) +
                     " sequences of width " + std::to_string(cfg.model_dim));
  const Index T = x.rows() / batch;
  const bool use_dropout = training && cfg.dropout > 0.0;
  if (use_dropout && !rng) throw std::invalid_argument("encode: dropout in training mode needs an Rng");
  if (cache) {
    cache->batch = batch;
    cache->tokens = T;
    cache->blocks.assign(static_cast<std::size_t>(cfg.depth), {});
  }

  MatrixXd h = x;
  for (int l = 0; l < cfg.depth; ++l) {
    const BlockParams bp = fetch(params, l);
    BlockCache local;
    BlockCache& c = cache ? cache->blocks[static_cast<std::size_t>(l)] : local;
    const MatrixXd a = layer_norm(h, bp.ln1_gamma, bp.ln1_beta, cfg.ln_eps, &c.ln1);
    c.qkv = linear(a, *bp.qkv_w, bp.qkv_b);
    c.context = attention(c.qkv, batch, T, cfg, cache ? &c.probs : nullptr);
    MatrixXd y = linear(c.context, *bp.out_w, bp.out_b);
    if (use_dropout) {
      c.attn_mask = dropout_mask(y.rows(), y.cols(), cfg.dropout, *rng);
      y = y.cwiseProduct(c.attn_mask);
    }
    c.hidden = h + y;
    c.ln2_out = layer_norm(c.hidden, bp.ln2_gamma, bp.ln2_beta, cfg.ln_eps, &c.ln2);
    c.fc1_out = linear(c.ln2_out, *bp.fc1_w, bp.fc1_b);
    c.gelu_out = gelu(c.fc1_out);
    MatrixXd z = linear(c.gelu_out, *bp.fc2_w, bp.fc2_b);
    if (use_dropout) {
      c.mlp_mask = dropout_mask(z.rows(), z.cols(), cfg.dropout, *rng);
      z = z.cwiseProduct(c.mlp_mask);
    }
    h = c.hidden + z;
  }
  return h;
}

MatrixXd encode_backward(const EncoderCache& cache, const MatrixXd& d_out, const TransformerConfig& cfg,
                         ParamStore& params) {
  const Index batch = cache.batch, T = cache.tokens, D = cfg.model_dim, dh = cfg.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  MatrixXd grad = d_out;
  for (int l = cfg.depth - 1; l >= 0; --l) {
    const BlockCache& c = cache.blocks[static_cast<std::size_t>(l)];
    const std::string p = block_prefix(l);
    auto g = [&](const std::string& name) -> MatrixXd& { return params.grad(p + name); };
    auto vec_grad = [&](const std::string& name) {
      RowVectorXd v = RowVectorXd::Zero(params.value(p + name).size());
      return v;
    };
    const BlockParams bp = fetch(params, l);

    // MLP branch.
    MatrixXd dz = c.mlp_mask.size() ? MatrixXd(grad.cwiseProduct(c.mlp_mask)) : grad;
    RowVectorXd db = RowVectorXd::Zero(D);
    const MatrixXd dg = linear_backward(c.gelu_out, *bp.fc2_w, dz, &g("mlp/fc2/weight"), &db);
    if (params.contains(p + "mlp/fc2/bias")) g("mlp/fc2/bias") += db;
    const MatrixXd du = gelu_backward(c.fc1_out, dg);
    db = vec_grad("mlp/fc1/bias");
    const MatrixXd dc = linear_backward(c.ln2_out, *bp.fc1_w, du, &g("mlp/fc1/weight"), &db);
    g("mlp/fc1/bias") += db;
    RowVectorXd dgamma = vec_grad("ln2/gamma"), dbeta = vec_grad("ln2/beta");
    MatrixXd d_hidden = grad + layer_norm_backward(c.ln2, bp.ln2_gamma, dc, &dgamma, &dbeta);
    g("ln2/gamma") += dgamma;
    g("ln2/beta") += dbeta;

    // Attention branch.
    MatrixXd dy = c.attn_mask.size() ? MatrixXd(d_hidden.cwiseProduct(c.attn_mask)) : d_hidden;
    db = RowVectorXd::Zero(D);
    const MatrixXd d_context = linear_backward(c.context, *bp.out_w, dy, &g("attn/out/weight"), &db);
    if (params.contains(p + "attn/out/bias")) g("attn/out/bias") += db;

    MatrixXd d_qkv(batch * T, 3 * D);
    MatrixXd dp(T, T), ds(T, T);
    for (Index b = 0; b < batch; ++b)
      for (Index h = 0; h < cfg.heads; ++h) {
        const MatrixXd& prob = c.probs[static_cast<std::size_t>(b * cfg.heads + h)];
        auto q = c.qkv.block(b * T, h * dh, T, dh);
        auto k = c.qkv.block(b * T, D + h * dh, T, dh);
        auto v = c.qkv.block(b * T, 2 * D + h * dh, T, dh);
        auto d_o = d_context.block(b * T, h * dh, T, dh);
        dp.noalias() = d_o * v.transpose();
        d_qkv.block(b * T, 2 * D + h * dh, T, dh).noalias() = prob.transpose() * d_o;
        ds = softmax_rows_backward(prob, dp) * scale;
        d_qkv.block(b * T, h * dh, T, dh).noalias() = ds * k;
        d_qkv.block(b * T, D + h * dh, T, dh).noalias() = ds.transpose() * q;
      }
    const MatrixXd ln1_out = (c.ln1.xhat.array().rowwise() * bp.ln1_gamma.array()).rowwise() + bp.ln1_beta.array();
    db = RowVectorXd::Zero(3 * D);
    const MatrixXd da = linear_backward(ln1_out, *bp.qkv_w, d_qkv, &g("attn/qkv/weight"), &db);
    g("attn/q_bias") += db.head(D);
    if (params.contains(p + "attn/v_bias")) g("attn/v_bias") += db.tail(D);
    dgamma = vec_grad("ln1/gamma");
    dbeta = vec_grad("ln1/beta");
    grad = d_hidden + layer_norm_backward(c.ln1, bp.ln1_gamma, da, &dgamma, &dbeta);
    g("ln1/gamma") += dgamma;
    g("ln1/beta") += dbeta;
  }
  return grad;
}

std::vector<MatrixXd> extract_attention(const MatrixXd& seq, const TransformerConfig& cfg, const ParamStore& params,
                                        int layer) {
  if (layer < 0 || layer >= cfg.depth)
    throw std::out_of_range("extract_attention: layer " + std::to_string(layer) + " outside [0, " +
                            std::to_string(cfg.depth) + ")");
  EncoderCache cache;
  encode(seq, 1, cfg, params, &cache);
  return cache.blocks[static_cast<std::size_t>(layer)].probs;
}

}  // namespace dmf::backbone
