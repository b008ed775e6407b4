#pragma once

#include "dmf/model/dmf_model.hpp"
#include "dmf/synthdata/dataset.hpp"

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

namespace dmf::trainer {

using synth::ConfigError;

enum class IterationUnit { epochs, steps };

struct TrainConfig {
  /// Stage lengths, read as epochs over the stage's sample set or as raw steps.
  long pretrain_iters = 120;
  long finetune_iters = 120;
  IterationUnit unit = IterationUnit::epochs;
  int batch_p = 16;
  int batch_k = 4;
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::string schedule = "cosine";
  double label_smoothing = 0.0;
  std::uint64_t seed = 0;
  /// Checkpoint every this many steps (0: only at the end of a stage).
  long checkpoint_every = 0;
  /// Adds wall-clock seconds to each log record (breaks byte-identical logs).
  bool log_wall_time = false;

  int batch_size() const { return batch_p * batch_k; }
  /// Optimizer steps for a stage with `samples` items.
  long steps_for(long iters, std::size_t samples) const;
  void validate() const;
};

struct EvalConfig {
  int max_rank = 20;
  int top_k = 15;
};

/// Every section is optional; omitted keys keep the defaults, unknown keys
/// are rejected with ConfigError.
struct RunConfig {
  synth::GeneratorConfig data = synth::GeneratorConfig::defaults();
  model::ModelConfig model;
  TrainConfig train;
  EvalConfig eval;

  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::filesystem::path& path);
  /// Cross-section checks (image size vs patches, K vs data) and sync of D.
  void finalize();
};

nlohmann::json to_json(const RunConfig& c);
nlohmann::json to_json(const model::ModelConfig& m);
nlohmann::json to_json(const TrainConfig& t);
model::ModelConfig model_config_from_json(const nlohmann::json& j, int image_height, int image_width);

}  // namespace dmf::trainer
