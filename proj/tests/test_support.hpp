#pragma once

#include "dmf/model/dmf_model.hpp"
#include "dmf/synthdata/dataset.hpp"
#include "dmf/trainer/run_config.hpp"

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace dmf::fixture {

// Smallest geometry the caption length allows: 24x12 images, 4x4 patches,
// N = 18 tokens per modality.
inline model::ModelConfig micro_model(int dim = 16, int depth = 2, int heads = 2) {
  model::ModelConfig c;
  c.tokenizer.image_height = 24;
  c.tokenizer.image_width = 12;
  c.tokenizer.patch_h = 4;
  c.tokenizer.patch_w = 4;
  c.tokenizer.model_dim = dim;
  c.tokenizer.image_enc_dim = 16;
  c.tokenizer.text_enc_dim = 8;
  c.transformer.depth = depth;
  c.transformer.heads = heads;
  c.sync_and_validate();
  return c;
}

// Random images of the micro geometry.
inline std::vector<synth::PersonImage> random_images(const std::vector<int>& ids, int h, int w, Rng& rng) {
  std::vector<synth::PersonImage> out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    synth::PersonImage img;
    img.pixels = MatrixXd(h, 3 * w);
    for (Index k = 0; k < img.pixels.size(); ++k) img.pixels.data()[k] = rng.uniform();
    img.identity_id = ids[i];
    img.camera_id = static_cast<int>(i % 2);
    out.push_back(std::move(img));
  }
  return out;
}

// Moves every trainable value off its initialization so gradients are not
// dominated by the near-identity start.
inline void scramble(ParamStore& params, Rng& rng, double scale) {
  for (auto& [path, e] : params) {
    if (!e.trainable) continue;
    for (Index k = 0; k < e.value.size(); ++k) e.value.data()[k] += scale * rng.normal();
  }
}

inline model::Batch image_batch(const model::ModelConfig& cfg, const ParamStore& params,
                                const std::vector<synth::PersonImage>& imgs, const std::vector<int>& labels) {
  model::Batch b;
  b.modality = fusion::Modality::image;
  const Index n = cfg.tokenizer.num_patches();
  b.encoded.resize(static_cast<Index>(imgs.size()) * n, cfg.tokenizer.image_enc_dim);
  for (std::size_t i = 0; i < imgs.size(); ++i)
    b.encoded.middleRows(static_cast<Index>(i) * n, n) = fusion::encode_image(imgs[i], cfg.tokenizer, params);
  b.labels = labels;
  return b;
}

inline model::Batch text_batch(const model::ModelConfig& cfg, const ParamStore& params,
                               const std::vector<synth::Caption>& caps, const std::vector<int>& labels) {
  model::Batch b;
  b.modality = fusion::Modality::text;
  const Index n = cfg.tokenizer.num_patches();
  b.encoded.resize(static_cast<Index>(caps.size()) * n, cfg.tokenizer.text_enc_dim);
  for (std::size_t i = 0; i < caps.size(); ++i)
    b.encoded.middleRows(static_cast<Index>(i) * n, n) = fusion::encode_caption(caps[i], cfg.tokenizer, params);
  b.labels = labels;
  return b;
}

// Captions for `ids` with a varying background per sample.
inline std::vector<synth::Caption> captions_for(const std::vector<int>& labels, std::uint64_t seed) {
  const auto profiles = synth::gen_identities(8, seed);
  std::vector<synth::Caption> out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int bg = static_cast<int>(i % 4);
    out.push_back(synth::caption_of(profiles[static_cast<std::size_t>(labels[i])], {bg, bg, bg, bg}, 0));
  }
  return out;
}

// A small dataset that trains in seconds: micro images, few identities.
inline trainer::RunConfig small_run(std::uint64_t seed = 0) {
  trainer::RunConfig cfg;
  cfg.data.size = {24, 12};
  cfg.data.pretrain_identities = 6;
  cfg.data.pretrain_images_per_identity = 5;
  cfg.data.finetune_identities = 5;
  cfg.data.finetune_images_per_identity = 4;
  cfg.data.test_identities = 4;
  cfg.data.test_images_per_camera = 2;
  cfg.model = micro_model();
  cfg.train.unit = trainer::IterationUnit::steps;
  cfg.train.pretrain_iters = 6;
  cfg.train.finetune_iters = 4;
  cfg.train.batch_p = 3;
  cfg.train.batch_k = 2;
  cfg.train.seed = seed;
  cfg.finalize();
  return cfg;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("dmf_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace dmf::fixture
