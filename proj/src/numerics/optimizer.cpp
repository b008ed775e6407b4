#include "dmf/numerics/optimizer.hpp"

#include <numbers>

namespace dmf {

CosineSchedule::CosineSchedule(double base_lr, long total_iters) : base_lr_(base_lr), total_iters_(total_iters) {
  if (total_iters <= 0) throw std::invalid_argument("CosineSchedule: total_iters must be positive");
  if (base_lr < 0.0) throw std::invalid_argument("CosineSchedule: base_lr must be non-negative");
}

double CosineSchedule::operator()(long iter) const {
  if (iter >= total_iters_) return 0.0;
  if (iter <= 0) return base_lr_;
  const double progress = static_cast<double>(iter) / static_cast<double>(total_iters_);
  return base_lr_ * (1.0 + std::cos(std::numbers::pi * progress)) / 2.0;
}

void sgd_step(ParamStore& params, double lr, double momentum, double weight_decay) {
  for (const auto& [path, e] : params)
    if (e.trainable && !all_finite(e.grad)) throw NumericError("sgd_step: non-finite gradient in '" + path + "'");

  for (auto& [path, e] : params) {
    if (!e.trainable) continue;
    const double wd = e.decay ? weight_decay : 0.0;
    if (wd != 0.0)
      e.velocity = momentum * e.velocity + e.grad + wd * e.value;
    else
      e.velocity = momentum * e.velocity + e.grad;
    e.value.noalias() -= lr * e.velocity;
  }
  params.zero_grad();
}

}  // namespace dmf
