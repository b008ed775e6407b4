#pragma once

#include "dmf/numerics/dense.hpp"

#include <vector>

#include <nlohmann/json.hpp>

namespace dmf::losses {

/// P identities x K samples of global (pre-BN) features.
struct TripletBatch {
  MatrixXd features;  // B x D
  std::vector<int> labels;

  /// Throws std::invalid_argument unless every label occurs equally often
  /// (K >= 2) and there are at least two labels.
  void validate() const;
};

/// d[a, b] = sum_k (f[a, k] - f[b, k])^2. Symmetric bit for bit, zero diagonal,
/// never negative.
MatrixXd pairwise_sq_dist(const MatrixXd& features);

struct TripletResult {
  double loss = 0.0;
  std::vector<Index> hardest_positive;
  std::vector<Index> hardest_negative;
  /// Anchors whose hardest positive is farther than their hardest negative.
  int active = 0;
  MatrixXd grad;  // dL/d(features), filled when requested
};

/// Soft-margin triplet loss with batch-hard mining, averaged over anchors:
///   mean_a log(1 + exp(d[a, p*] - d[a, n*]))
/// p* maximizes d over same-label rows (excluding a), n* minimizes it over
/// other labels; ties go to the lowest index. Throws std::invalid_argument
/// when an anchor has no positive or no negative.
TripletResult triplet_loss_batch_hard(const MatrixXd& features, const std::vector<int>& labels,
                                      bool with_grad = false);

struct IdLossResult {
  double loss = 0.0;
  MatrixXd grad;  // dL/d(logits)
};

/// Mean cross-entropy against (1 - smoothing) * onehot + smoothing / M.
IdLossResult id_loss(const MatrixXd& logits, const std::vector<int>& labels, double smoothing = 0.0,
                     bool with_grad = false);

struct LossReport {
  double l_id = 0.0;
  double l_triplet = 0.0;
  double l_total = 0.0;
  int active_triplets = 0;
};

nlohmann::json to_json(const LossReport& r);

struct TotalLoss {
  LossReport report;
  MatrixXd d_global;  // from the triplet branch
  MatrixXd d_logits;  // from the ID branch
};

/// Unweighted sum of the ID loss on post-BN logits and the triplet loss on
/// pre-BN global features.
TotalLoss total_loss(const TripletBatch& batch, const MatrixXd& logits, double smoothing, bool with_grad = false);

}  // namespace dmf::losses
