#include "dmf/numerics/grad_check.hpp"

#include "dmf/numerics/random.hpp"

#include <algorithm>
#include <numeric>
#include <vector>

namespace dmf {

GradCheckResult grad_check(const std::function<double(ParamStore&)>& loss_and_grad,
                           const std::function<double(ParamStore&)>& loss_only, ParamStore& params,
                           double h, int sample, std::uint64_t seed) {
  if (!(h >= 1e-7 && h <= 1e-3)) throw std::invalid_argument("grad_check: step h must lie in [1e-7, 1e-3]");

  params.zero_grad();
  loss_and_grad(params);
  std::vector<std::pair<std::string, MatrixXd>> analytic;
  std::vector<Index> sizes;
  for (const auto& [path, e] : params) {
    if (!e.trainable) continue;
    analytic.emplace_back(path, e.grad);
    sizes.push_back(e.value.size());
  }
  params.zero_grad();

  GradCheckResult result;
  if (analytic.empty()) return result;
  const Index total = std::accumulate(sizes.begin(), sizes.end(), Index{0});

  // Every trainable entry is visited at least once, the remainder is drawn
  // uniformly over all trainable scalars.
  Rng rng(seed);
  std::vector<std::pair<std::size_t, Index>> coords;
  for (std::size_t k = 0; k < analytic.size() && static_cast<int>(coords.size()) < sample; ++k)
    coords.emplace_back(k, static_cast<Index>(rng.index(static_cast<std::size_t>(sizes[k]))));
  while (static_cast<int>(coords.size()) < sample) {
    Index flat = static_cast<Index>(rng.index(static_cast<std::size_t>(total)));
    std::size_t k = 0;
    while (flat >= sizes[k]) flat -= sizes[k++];
    coords.emplace_back(k, flat);
  }

  for (const auto& [k, idx] : coords) {
    const std::string& path = analytic[k].first;
    double& theta = params.value(path).data()[idx];
    const double saved = theta;
    theta = saved + h;
    const double f_plus = loss_only(params);
    theta = saved - h;
    const double f_minus = loss_only(params);
    theta = saved;
    const double numeric = (f_plus - f_minus) / (2.0 * h);
    const double a = analytic[k].second.data()[idx];
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
    const double rel = std::abs(a - numeric) / denom;
    ++result.coordinates;
    if (rel > result.max_rel_error || result.worst_index < 0) {
      result.max_rel_error = std::max(rel, result.max_rel_error);
      result.worst_path = path;
      result.worst_index = idx;
      result.worst_analytic = a;
      result.worst_numeric = numeric;
    }
  }
  return result;
}

}  // namespace dmf
