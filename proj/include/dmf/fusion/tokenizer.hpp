#pragma once

#include "dmf/numerics/param_store.hpp"
#include "dmf/numerics/random.hpp"
#include "dmf/synthdata/generator.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace dmf::fusion {

enum class Modality { image, text };

inline const char* modality_name(Modality m) { return m == Modality::image ? "image" : "text"; }

/// Non-overlapping raster-order patches, one flattened (y, x, channel) row each.
struct PatchGrid {
  int patch_h = 0;
  int patch_w = 0;
  MatrixXd patches;  // N x (patch_h * patch_w * 3)

  Index count() const { return patches.rows(); }
  Index flat_dim() const { return patches.cols(); }
};

/// Throws ShapeError listing valid patch sizes when the image does not tile.
PatchGrid split_patches(const synth::PersonImage& img, int patch_h, int patch_w);

/// Divisors of `extent`, used to suggest valid patch sizes.
std::vector<int> divisors(int extent);

struct TokenizerConfig {
  int image_height = 64;
  int image_width = 32;
  int patch_h = 8;
  int patch_w = 8;
  int model_dim = 64;       // D
  int image_enc_dim = 64;   // D_i
  int text_enc_dim = 32;    // D_t
  std::uint64_t encoder_seed = 2022;

  /// N: patches per image, also the padded caption length.
  int num_patches() const { return (image_height / patch_h) * (image_width / patch_w); }
  int tokens() const { return num_patches() + 1; }
  int flat_dim() const { return patch_h * patch_w * 3; }
  void validate() const;
};

/// Frozen stand-in for a pre-trained encoder: a seeded semi-orthogonal
/// patch map for images, a seeded embedding table for caption words (the
/// pad word embeds to zero). Weights are rounded to float32-representable
/// values so persistence leaves them bitwise unchanged.
struct FrozenEncoder {
  Modality modality;
  MatrixXd weights;

  static FrozenEncoder image(int flat_dim, int out_dim, std::uint64_t seed);
  static FrozenEncoder text(std::size_t vocabulary_size, int out_dim, std::uint64_t seed);

  /// Image: patches (N x flat) -> N x D_i.
  MatrixXd encode_patches(const PatchGrid& grid) const;
  /// Text: token ids -> rows of the embedding table.
  MatrixXd lookup(const std::vector<std::size_t>& ids) const;
};

/// One modality's sequence in the shared (N+1) x D token space.
struct FusedSequence {
  MatrixXd tokens;
  Modality modality = Modality::image;
  int identity_id = 0;
};

/// Canonical ParamStore paths of one modality's translation parameters.
struct TranslationPaths {
  std::string proj_weight, proj_bias, cls, pos, encoder;
  static TranslationPaths of(Modality m);
};

/// Registers both frozen encoders and both modalities' learnable projection,
/// CLS token and position embedding.
void init_translation_params(ParamStore& params, const TokenizerConfig& cfg, Rng& rng);

/// Frozen encoding of one image (N x D_i); constant for the life of a run.
MatrixXd encode_image(const synth::PersonImage& img, const TokenizerConfig& cfg, const ParamStore& params);

/// Caption word ids padded with the pad id to N. Throws std::out_of_range on
/// unknown words and std::invalid_argument when the caption exceeds N words.
std::vector<std::size_t> caption_ids(const synth::Caption& cap, const TokenizerConfig& cfg);

/// Frozen encoding of one caption (N x D_t).
MatrixXd encode_caption(const synth::Caption& cap, const TokenizerConfig& cfg, const ParamStore& params);

/// Batched translation of frozen encodings: sample b of `encoded` occupies
/// rows [b*N, (b+1)*N); the output puts sample b at rows [b*(N+1), (b+1)*(N+1)):
///   [cls; content * W + bias] + pos
MatrixXd translate(Modality m, const MatrixXd& encoded, Index batch, const ParamStore& params);

/// Accumulates gradients of the translation parameters from dL/d(output).
void translate_backward(Modality m, const MatrixXd& encoded, Index batch, const MatrixXd& d_out, ParamStore& params);

FusedSequence image_translate(const synth::PersonImage& img, const TokenizerConfig& cfg, const ParamStore& params);
FusedSequence text_translate(const synth::Caption& cap, const TokenizerConfig& cfg, const ParamStore& params);

}  // namespace dmf::fusion
