#pragma once

#include "dmf/numerics/layers.hpp"
#include "dmf/numerics/param_store.hpp"
#include "dmf/numerics/random.hpp"

#include <string>
#include <vector>

namespace dmf::backbone {

struct TransformerConfig {
  int depth = 2;
  int heads = 4;
  int model_dim = 64;
  double mlp_ratio = 4.0;
  double dropout = 0.0;
  double ln_eps = 1e-5;

  int head_dim() const { return model_dim / heads; }
  int hidden_dim() const { return static_cast<int>(model_dim * mlp_ratio); }
  /// Throws std::invalid_argument on head divisibility or depth violations.
  void validate() const;
};

std::string block_prefix(int layer);

/// Registers every block's weights under "backbone/block<i>/...".
void init_transformer_params(ParamStore& params, const TransformerConfig& cfg, Rng& rng);

/// Activations one pre-norm block keeps for its backward pass.
struct BlockCache {
  NormCache<double> ln1;
  MatrixXd qkv;
  std::vector<MatrixXd> probs;  // batch * heads matrices, T x T, index b * heads + h
  MatrixXd context;
  MatrixXd attn_mask;  // dropout masks (empty when dropout is off)
  MatrixXd hidden;     // input + attention branch
  NormCache<double> ln2;
  MatrixXd ln2_out;
  MatrixXd fc1_out;  // pre-activation
  MatrixXd gelu_out;
  MatrixXd mlp_mask;
};

struct EncoderCache {
  Index batch = 0;
  Index tokens = 0;
  std::vector<BlockCache> blocks;
};

/// Runs `depth` pre-norm blocks over a stack of `batch` sequences
/// (rows [b*T, (b+1)*T) belong to sequence b):
///   h = x + MHSA(LN1(x));  out = h + MLP(LN2(h))
/// `rng` is only consulted for dropout in training mode.
MatrixXd encode(const MatrixXd& x, Index batch, const TransformerConfig& cfg, const ParamStore& params,
                EncoderCache* cache = nullptr, bool training = false, Rng* rng = nullptr);

/// Backpropagates dL/d(out) through the cached blocks, accumulating weight
/// gradients, and returns dL/d(x).
MatrixXd encode_backward(const EncoderCache& cache, const MatrixXd& d_out, const TransformerConfig& cfg,
                         ParamStore& params);

/// Post-softmax attention of `layer` for a single sequence: one (T x T)
/// matrix per head.
std::vector<MatrixXd> extract_attention(const MatrixXd& seq, const TransformerConfig& cfg, const ParamStore& params,
                                        int layer);

}  // namespace dmf::backbone
