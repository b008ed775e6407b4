#pragma once

#include "dmf/eval/retrieval.hpp"
#include "dmf/trainer/trainer.hpp"

#include <functional>
#include <string>
#include <vector>

namespace dmf::trainer {

/// The four pre-training variants, in table order.
struct AblationMethod {
  std::string name;
  bool pretrain = false;
  bool use_image = false;
  bool use_text = false;
};

const std::vector<AblationMethod>& ablation_methods();

struct AblationRow {
  std::string method;
  std::vector<std::uint64_t> seeds;
  std::vector<eval::EvalReport> reports;

  double median_map() const;
  double median_rank(int k) const;
};

struct AblationResult {
  std::vector<AblationRow> rows;
  nlohmann::json config;
};

/// Seeds run as cfg.train.seed + s for s in [0, seeds). `progress` receives
/// one line per finished (method, seed).
AblationResult run_ablation(const synth::Dataset& data, const RunConfig& cfg, int seeds,
                            const std::function<void(const std::string&)>& progress = {});

nlohmann::json to_json(const AblationResult& r);
/// Medians over seeds, one aligned row per method.
std::string format_table(const AblationResult& r);

double median(std::vector<double> v);

}  // namespace dmf::trainer
