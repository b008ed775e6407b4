#pragma once

#include "dmf/backbone/head.hpp"
#include "dmf/backbone/transformer.hpp"
#include "dmf/fusion/tokenizer.hpp"
#include "dmf/losses/losses.hpp"

#include <vector>

namespace dmf::model {

using fusion::Modality;

struct ModelConfig {
  fusion::TokenizerConfig tokenizer;
  backbone::TransformerConfig transformer;
  backbone::HeadConfig head;

  /// Propagates the shared width D into every sub-config, then validates.
  void sync_and_validate();
};

/// Full parameter set: both modalities' translation parameters, one shared
/// backbone, the BN neck and a classifier over `num_classes` identities.
ParamStore init_model(const ModelConfig& cfg, int num_classes, Rng& rng);

/// A single-modality batch of frozen encodings (sample b at rows [b*N, (b+1)*N)).
struct Batch {
  Modality modality = Modality::image;
  MatrixXd encoded;
  std::vector<int> labels;

  Index size() const { return static_cast<Index>(labels.size()); }
};

/// Forward in training mode (batch-statistics BN neck), total loss, and a full
/// backward pass accumulating into ParamStore gradients.
losses::LossReport loss_and_grad(ParamStore& params, const ModelConfig& cfg, const Batch& batch, double smoothing,
                                 bool update_running_stats = true, Rng* dropout_rng = nullptr);

/// Same forward and loss without gradients or running-stat updates.
losses::LossReport loss_only(const ParamStore& params, const ModelConfig& cfg, const Batch& batch, double smoothing);

/// Eval-mode forward of stacked encodings; returns the head outputs.
backbone::HeadOutput forward_eval(const ParamStore& params, const ModelConfig& cfg, Modality m,
                                  const MatrixXd& encoded, Index batch);

/// Retrieval embedding: post-BN-neck feature, L2-normalized per row.
MatrixXd embed(const ParamStore& params, const ModelConfig& cfg, Modality m, const MatrixXd& encoded, Index batch);

}  // namespace dmf::model
