#include "dmf/losses/losses.hpp"

#include <cmath>
#include <map>
#include <stdexcept>

namespace dmf::losses {

namespace {

// log(1 + exp(m)) without overflow.
double softplus(double m) { return m > 0.0 ? m + std::log1p(std::exp(-m)) : std::log1p(std::exp(m)); }
double sigmoid(double m) {
  if (m >= 0.0) return 1.0 / (1.0 + std::exp(-m));
  const double e = std::exp(m);
  return e / (1.0 + e);
}

}  // namespace

void TripletBatch::validate() const {
  if (static_cast<Index>(labels.size()) != features.rows())
    throw std::invalid_argument("TripletBatch: " + std::to_string(labels.size()) + " labels for " +
                                std::to_string(features.rows()) + " feature rows");
  std::map<int, int> counts;
  for (int l : labels) ++counts[l];
  if (counts.size() < 2) throw std::invalid_argument("TripletBatch: need at least P=2 identities");
  const int k = counts.begin()->second;
  for (const auto& [label, c] : counts)
    if (c != k) throw std::invalid_argument("TripletBatch: identity " + std::to_string(label) + " has " +
                                            std::to_string(c) + " samples, expected K=" + std::to_string(k));
  if (k < 2) throw std::invalid_argument("TripletBatch: need at least K=2 samples per identity");
}

MatrixXd pairwise_sq_dist(const MatrixXd& f) {
  const Index B = f.rows();
  MatrixXd d = MatrixXd::Zero(B, B);
  for (Index a = 0; a < B; ++a)
    for (Index b = a + 1; b < B; ++b) {
      const double v = std::max(0.0, (f.row(a) - f.row(b)).squaredNorm());
      d(a, b) = v;
      d(b, a) = v;
    }
  return d;
}

TripletResult triplet_loss_batch_hard(const MatrixXd& f, const std::vector<int>& labels, bool with_grad) {
  const Index B = f.rows();
  if (static_cast<Index>(labels.size()) != B)
    throw std::invalid_argument("triplet_loss: label count does not match feature rows");
  const MatrixXd d = pairwise_sq_dist(f);
  TripletResult r;
  r.hardest_positive.resize(static_cast<std::size_t>(B));
  r.hardest_negative.resize(static_cast<std::size_t>(B));
  if (with_grad) r.grad = MatrixXd::Zero(B, f.cols());
  double sum = 0.0;
  for (Index a = 0; a < B; ++a) {
    Index pos = -1, neg = -1;
    for (Index j = 0; j < B; ++j) {
      if (j == a) continue;
      if (labels[static_cast<std::size_t>(j)] == labels[static_cast<std::size_t>(a)]) {
        if (pos < 0 || d(a, j) > d(a, pos)) pos = j;
      } else if (neg < 0 || d(a, j) < d(a, neg)) {
        neg = j;
      }
    }
    if (pos < 0 || neg < 0)
      throw std::invalid_argument("triplet_loss: anchor " + std::to_string(a) + " has no " +
                                  (pos < 0 ? "positive" : "negative"));
    r.hardest_positive[static_cast<std::size_t>(a)] = pos;
    r.hardest_negative[static_cast<std::size_t>(a)] = neg;
    const double margin = d(a, pos) - d(a, neg);
    sum += softplus(margin);
    if (margin > 0.0) ++r.active;
    if (with_grad) {
      const double w = sigmoid(margin) / static_cast<double>(B);
      const RowVectorXd ap = 2.0 * w * (f.row(a) - f.row(pos));
      const RowVectorXd an = 2.0 * w * (f.row(a) - f.row(neg));
      r.grad.row(a) += ap - an;
      r.grad.row(pos) -= ap;
      r.grad.row(neg) += an;
    }
  }
  r.loss = sum / static_cast<double>(B);
  return r;
}

IdLossResult id_loss(const MatrixXd& logits, const std::vector<int>& labels, double smoothing, bool with_grad) {
  const Index B = logits.rows(), M = logits.cols();
  if (static_cast<Index>(labels.size()) != B) throw std::invalid_argument("id_loss: label count does not match logits");
  if (smoothing < 0.0 || smoothing >= 1.0) throw std::invalid_argument("id_loss: smoothing must lie in [0, 1)");
  IdLossResult r;
  if (with_grad) r.grad.resize(B, M);
  const double off = smoothing / static_cast<double>(M);
  double sum = 0.0;
  for (Index i = 0; i < B; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= M)
      throw std::out_of_range("id_loss: label " + std::to_string(y) + " outside [0, " + std::to_string(M) + ")");
    const double mx = logits.row(i).maxCoeff();
    const double lse = mx + std::log((logits.row(i).array() - mx).exp().sum());
    // -sum_j q_j log p_j with log p_j = logit_j - lse
    double row = (1.0 - smoothing) * (lse - logits(i, y));
    if (smoothing > 0.0) row += off * (static_cast<double>(M) * lse - logits.row(i).sum());
    sum += row;
    if (with_grad) {
      r.grad.row(i) = (logits.row(i).array() - lse).exp().matrix();
      r.grad.row(i).array() -= off;
      r.grad(i, y) -= 1.0 - smoothing;
    }
  }
  r.loss = sum / static_cast<double>(B);
  if (with_grad) r.grad /= static_cast<double>(B);
  return r;
}

nlohmann::json to_json(const LossReport& r) {
  return {{"l_id", r.l_id}, {"l_triplet", r.l_triplet}, {"l_total", r.l_total}, {"active_triplets", r.active_triplets}};
}

TotalLoss total_loss(const TripletBatch& batch, const MatrixXd& logits, double smoothing, bool with_grad) {
  batch.validate();
  if (!batch.features.allFinite() || !logits.allFinite())
    throw NumericError("total_loss: non-finite features or logits");
  TotalLoss t;
  const auto tri = triplet_loss_batch_hard(batch.features, batch.labels, with_grad);
  auto id = id_loss(logits, batch.labels, smoothing, with_grad);
  t.report.l_id = id.loss;
  t.report.l_triplet = tri.loss;
  t.report.l_total = id.loss + tri.loss;
  t.report.active_triplets = tri.active;
  if (!std::isfinite(t.report.l_total)) throw NumericError("total_loss: non-finite loss");
  if (with_grad) {
    t.d_global = tri.grad;
    t.d_logits = std::move(id.grad);
  }
  return t;
}

}  // namespace dmf::losses
