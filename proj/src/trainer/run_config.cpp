#include "dmf/trainer/run_config.hpp"

#include "dmf/io/json_util.hpp"

#include <fstream>
#include <sstream>

namespace dmf::trainer {

using nlohmann::json;
using io::read_optional;
using io::reject_unknown_keys;

long TrainConfig::steps_for(long iters, std::size_t samples) const {
  if (unit == IterationUnit::steps) return iters;
  const long per_epoch = static_cast<long>((samples + static_cast<std::size_t>(batch_size()) - 1) /
                                           static_cast<std::size_t>(batch_size()));
  return std::max(1L, iters * std::max(1L, per_epoch));
}

void TrainConfig::validate() const {
  if (pretrain_iters < 1 || finetune_iters < 1) throw ConfigError("train: iteration counts must be >= 1");
  if (batch_p < 2 || batch_k < 2) throw ConfigError("train: P and K must both be >= 2");
  if (lr <= 0.0) throw ConfigError("train: lr must be positive");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("train: momentum must lie in [0, 1)");
  if (weight_decay < 0.0) throw ConfigError("train: weight_decay must be >= 0");
  if (schedule != "cosine") throw ConfigError("train: unsupported schedule '" + schedule + "'");
  if (label_smoothing < 0.0 || label_smoothing >= 1.0) throw ConfigError("train: label_smoothing must lie in [0, 1)");
  if (checkpoint_every < 0) throw ConfigError("train: checkpoint_every must be >= 0");
}

json to_json(const model::ModelConfig& m) {
  return {{"patch_h", m.tokenizer.patch_h},
          {"patch_w", m.tokenizer.patch_w},
          {"model_dim", m.tokenizer.model_dim},
          {"image_enc_dim", m.tokenizer.image_enc_dim},
          {"text_enc_dim", m.tokenizer.text_enc_dim},
          {"encoder_seed", m.tokenizer.encoder_seed},
          {"depth", m.transformer.depth},
          {"heads", m.transformer.heads},
          {"mlp_ratio", m.transformer.mlp_ratio},
          {"dropout", m.transformer.dropout},
          {"bn_momentum", m.head.bn_momentum}};
}

model::ModelConfig model_config_from_json(const json& j, int image_height, int image_width) {
  model::ModelConfig m;
  m.tokenizer.image_height = image_height;
  m.tokenizer.image_width = image_width;
  reject_unknown_keys<ConfigError>(j,
                                   {"patch_h", "patch_w", "model_dim", "image_enc_dim", "text_enc_dim",
                                    "encoder_seed", "depth", "heads", "mlp_ratio", "dropout", "bn_momentum"},
                                   "model");
  read_optional<ConfigError>(j, "patch_h", m.tokenizer.patch_h, "model");
  read_optional<ConfigError>(j, "patch_w", m.tokenizer.patch_w, "model");
  read_optional<ConfigError>(j, "model_dim", m.tokenizer.model_dim, "model");
  read_optional<ConfigError>(j, "image_enc_dim", m.tokenizer.image_enc_dim, "model");
  read_optional<ConfigError>(j, "text_enc_dim", m.tokenizer.text_enc_dim, "model");
  read_optional<ConfigError>(j, "encoder_seed", m.tokenizer.encoder_seed, "model");
  read_optional<ConfigError>(j, "depth", m.transformer.depth, "model");
  read_optional<ConfigError>(j, "heads", m.transformer.heads, "model");
  read_optional<ConfigError>(j, "mlp_ratio", m.transformer.mlp_ratio, "model");
  read_optional<ConfigError>(j, "dropout", m.transformer.dropout, "model");
  read_optional<ConfigError>(j, "bn_momentum", m.head.bn_momentum, "model");
  return m;
}

json to_json(const TrainConfig& t) {
  return {{"pretrain_iters", t.pretrain_iters},
          {"finetune_iters", t.finetune_iters},
          {"iteration_unit", t.unit == IterationUnit::epochs ? "epochs" : "steps"},
          {"P", t.batch_p},
          {"K", t.batch_k},
          {"lr", t.lr},
          {"momentum", t.momentum},
          {"weight_decay", t.weight_decay},
          {"schedule", t.schedule},
          {"label_smoothing", t.label_smoothing},
          {"seed", t.seed},
          {"checkpoint_every", t.checkpoint_every},
          {"log_wall_time", t.log_wall_time}};
}

json to_json(const RunConfig& c) {
  return {{"data", synth::to_json(c.data)},
          {"model", to_json(c.model)},
          {"train", to_json(c.train)},
          {"eval", {{"max_rank", c.eval.max_rank}, {"top_k", c.eval.top_k}}}};
}

RunConfig RunConfig::from_json(const json& j) {
  RunConfig c;
  reject_unknown_keys<ConfigError>(j, {"data", "model", "train", "eval"}, "config");
  if (auto it = j.find("data"); it != j.end()) c.data = synth::generator_config_from_json(*it);
  c.model = model_config_from_json(j.value("model", json::object()), c.data.size.height, c.data.size.width);
  if (auto it = j.find("train"); it != j.end()) {
    const json& t = *it;
    reject_unknown_keys<ConfigError>(t,
                                     {"pretrain_iters", "finetune_iters", "iteration_unit", "P", "K", "lr",
                                      "momentum", "weight_decay", "schedule", "label_smoothing", "seed",
                                      "checkpoint_every", "log_wall_time"},
                                     "train");
    auto& tc = c.train;
    read_optional<ConfigError>(t, "pretrain_iters", tc.pretrain_iters, "train");
    read_optional<ConfigError>(t, "finetune_iters", tc.finetune_iters, "train");
    std::string unit = "epochs";
    read_optional<ConfigError>(t, "iteration_unit", unit, "train");
    if (unit == "epochs")
      tc.unit = IterationUnit::epochs;
    else if (unit == "steps")
      tc.unit = IterationUnit::steps;
    else
      throw ConfigError("train.iteration_unit: expected 'epochs' or 'steps', got '" + unit + "'");
    read_optional<ConfigError>(t, "P", tc.batch_p, "train");
    read_optional<ConfigError>(t, "K", tc.batch_k, "train");
    read_optional<ConfigError>(t, "lr", tc.lr, "train");
    read_optional<ConfigError>(t, "momentum", tc.momentum, "train");
    read_optional<ConfigError>(t, "weight_decay", tc.weight_decay, "train");
    read_optional<ConfigError>(t, "schedule", tc.schedule, "train");
    read_optional<ConfigError>(t, "label_smoothing", tc.label_smoothing, "train");
    read_optional<ConfigError>(t, "seed", tc.seed, "train");
    read_optional<ConfigError>(t, "checkpoint_every", tc.checkpoint_every, "train");
    read_optional<ConfigError>(t, "log_wall_time", tc.log_wall_time, "train");
  }
  if (auto it = j.find("eval"); it != j.end()) {
    reject_unknown_keys<ConfigError>(*it, {"max_rank", "top_k"}, "eval");
    read_optional<ConfigError>(*it, "max_rank", c.eval.max_rank, "eval");
    read_optional<ConfigError>(*it, "top_k", c.eval.top_k, "eval");
  }
  c.finalize();
  return c;
}

void RunConfig::finalize() {
  model.tokenizer.image_height = data.size.height;
  model.tokenizer.image_width = data.size.width;
  data.min_per_identity = train.batch_k;
  train.validate();
  try {
    model.sync_and_validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("model: ") + e.what());
  }
  if (eval.max_rank < 1) throw ConfigError("eval.max_rank must be >= 1");
  if (eval.top_k < 1) throw ConfigError("eval.top_k must be >= 1");
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return from_json(j);
}

}  // namespace dmf::trainer
