#pragma once

#include "dmf/numerics/param_store.hpp"

#include <cstdint>
#include <functional>
#include <string>

namespace dmf {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_path;
  Index worst_index = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  int coordinates = 0;
};

/// Compares analytic gradients against central differences on randomly
/// sampled trainable coordinates.
///
/// `loss_and_grad` must fill ParamEntry::grad for every trainable entry and
/// return the loss. `loss_only` evaluates the loss at the current values.
/// Relative error uses max(|analytic|, |numeric|, 1e-8) as denominator.
GradCheckResult grad_check(const std::function<double(ParamStore&)>& loss_and_grad,
                           const std::function<double(ParamStore&)>& loss_only, ParamStore& params,
                           double h, int sample, std::uint64_t seed);

}  // namespace dmf
