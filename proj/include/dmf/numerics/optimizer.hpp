#pragma once

#include "dmf/numerics/param_store.hpp"

namespace dmf {

/// lr(t) = base_lr * (1 + cos(pi * t / total_iters)) / 2, clamped to 0 past the end.
class CosineSchedule {
 public:
  CosineSchedule(double base_lr, long total_iters);
  double operator()(long iter) const;
  double base_lr() const { return base_lr_; }
  long total_iters() const { return total_iters_; }

 private:
  double base_lr_;
  long total_iters_;
};

/// SGD with classic momentum and coupled weight decay:
///   v <- momentum * v + (g + wd * w);  w <- w - lr * v
/// Frozen entries are skipped. Gradients are zeroed afterwards. If any
/// trainable gradient is non-finite nothing is updated and NumericError
/// names the offending path.
void sgd_step(ParamStore& params, double lr, double momentum, double weight_decay);

}  // namespace dmf
