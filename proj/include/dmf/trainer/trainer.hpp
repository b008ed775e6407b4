#pragma once

#include "dmf/trainer/checkpoint.hpp"
#include "dmf/trainer/run_config.hpp"

#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <vector>

namespace dmf::trainer {

/// Draws P identities with at least K samples each, then K samples per identity.
class PkSampler {
 public:
  PkSampler(const std::vector<int>& labels, int p, int k);
  std::vector<std::size_t> sample(Rng& rng) const;
  std::size_t eligible_identities() const { return eligible_.size(); }

 private:
  std::vector<std::vector<std::size_t>> eligible_;
  int p_, k_;
};

/// One modality's frozen encodings with class labels in the stage's label space.
struct SampleSource {
  fusion::Modality modality = fusion::Modality::image;
  std::vector<MatrixXd> encoded;
  std::vector<int> labels;
};

/// Stacks the chosen samples into a model batch.
model::Batch make_batch(const SampleSource& src, const std::vector<std::size_t>& picks);

/// Probability of drawing an image batch: |S_i| / (|S_i| + |S_t|).
double image_probability(std::size_t images, std::size_t texts);

/// One routing draw: image with probability `p_image`.
fusion::Modality draw_modality(Rng& rng, double p_image);

struct StageOptions {
  bool use_image = true;
  bool use_text = true;
  /// Log sink for JSON-lines records (may be null).
  std::ostream* log = nullptr;
  /// Where interval checkpoints go (only used when train.checkpoint_every > 0).
  std::optional<std::filesystem::path> checkpoint_path;
  /// Continue a stage from one of its own checkpoints.
  const Checkpoint* resume = nullptr;
  /// Called before every optimizer step with the step index and parameters.
  std::function<void(long, const ParamStore&)> before_step;
};

/// Stage I: multimodal pre-training over S_i and S_t.
Checkpoint pretrain(const synth::Dataset& data, const RunConfig& cfg, const StageOptions& opt = {});

/// Parameters at fine-tuning step 0: everything but the classifier comes
/// from `init` (or a fresh model when null); the classifier is re-drawn for
/// `num_classes`; text translation is frozen; velocities are cleared.
ParamStore prepare_finetune(const Checkpoint* init, const RunConfig& cfg, int num_classes);

/// Stage II: image-only fine-tuning on S_f. `init` null means from scratch.
Checkpoint finetune(const synth::Dataset& data, const Checkpoint* init, const RunConfig& cfg,
                    const StageOptions& opt = {});

/// Label space of a split: sorted distinct identity ids (label = position).
std::vector<int> label_space(const std::vector<synth::PersonImage>& images);

}  // namespace dmf::trainer
