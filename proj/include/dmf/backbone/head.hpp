#pragma once

#include "dmf/numerics/layers.hpp"
#include "dmf/numerics/param_store.hpp"
#include "dmf/numerics/random.hpp"

namespace dmf::backbone {

enum class Mode { train, eval };

struct HeadConfig {
  int model_dim = 64;
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;
};

inline constexpr const char* kBnGamma = "neck/bn/gamma";
inline constexpr const char* kBnBeta = "neck/bn/beta";
inline constexpr const char* kBnRunningMean = "neck/bn/running_mean";
inline constexpr const char* kBnRunningVar = "neck/bn/running_var";
inline constexpr const char* kClassifier = "head/classifier/weight";

/// BN neck (running stats start at mean 0, var 1) plus a bias-free classifier.
void init_head_params(ParamStore& params, const HeadConfig& cfg, int num_classes, Rng& rng);

/// Replaces the classifier with a freshly initialized one for `num_classes`.
void reset_classifier(ParamStore& params, const HeadConfig& cfg, int num_classes, Rng& rng);

struct HeadOutput {
  MatrixXd global_feature;  // B x D, CLS outputs (triplet branch)
  MatrixXd bn_feature;      // B x D, after the BN neck (ID branch, retrieval)
  MatrixXd logits;          // B x M
  NormCache<double> bn_cache;
  RowVectorXd batch_mean;          // training mode only
  RowVectorXd batch_var_unbiased;  // training mode only
};

/// Global feature = CLS row of each sequence. Training mode normalizes with
/// batch statistics, eval mode with the running estimates.
HeadOutput forward_head(const MatrixXd& seq_out, Index batch, const ParamStore& params, const HeadConfig& cfg,
                        Mode mode);

/// Folds a training-mode output's batch statistics into the running estimates.
void update_running_stats(ParamStore& params, const HeadOutput& out, const HeadConfig& cfg);

/// Combines dL/d(global) from the triplet branch with the ID branch's
/// dL/d(logits); returns dL/d(seq_out) with non-CLS rows zero.
MatrixXd head_backward(const HeadOutput& out, const MatrixXd& d_global, const MatrixXd& d_logits, Index tokens,
                       ParamStore& params);

}  // namespace dmf::backbone
