#pragma once

#include "dmf/numerics/dense.hpp"
#include "dmf/synthdata/vocabulary.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace dmf::synth {

/// Identity attributes plus the background slots of one particular rendering.
struct AttributeProfile {
  int identity_id = 0;
  std::array<int, kForegroundSlots> foreground{};
  std::array<int, kBackgroundSlots> background{};
};

/// Photometric and scenery parameters of one data domain.
struct DomainStyle {
  int domain_id = 0;
  double hue_shift = 0.0;          // fraction of a full hue turn, [-0.5, 0.5]
  double illumination_gain = 1.0;  // [0.5, 1.5]
  std::uint64_t background_palette = 0;
  int camera_count = 2;
  double noise_sigma = 0.0;

  void validate() const;
};

/// L2 distance over the continuous style fields (hue, gain, noise).
double style_distance(const DomainStyle& a, const DomainStyle& b);

/// H x W x 3 image stored as an H x (3W) row-major matrix (interleaved RGB).
struct PersonImage {
  MatrixXd pixels;
  int identity_id = 0;
  int camera_id = 0;
  int domain_id = 0;

  Index height() const { return pixels.rows(); }
  Index width() const { return pixels.cols() / 3; }
  double& at(Index y, Index x, int c) { return pixels(y, 3 * x + c); }
  double at(Index y, Index x, int c) const { return pixels(y, 3 * x + c); }
};

struct Caption {
  int identity_id = 0;
  int domain_id = 0;
  std::vector<std::string> tokens;
};

/// Deterministic seed mixing (splitmix64 finalizer).
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

/// `count` identities with pairwise-distinct foreground tuples, ids 0..count-1.
/// Throws std::invalid_argument when count < 2 or exceeds the attribute space.
std::vector<AttributeProfile> gen_identities(int count, std::uint64_t seed);

/// Number of distinct foreground tuples (saturates at UINT64_MAX).
std::uint64_t foreground_cardinality();

struct RenderSize {
  int height = 64;
  int width = 32;
};

/// Scenery + person, before the domain's photometric style (gain, hue, noise).
PersonImage render_reference(const AttributeProfile& profile, const DomainStyle& style, int camera_id,
                             std::uint64_t seed, RenderSize size = {});

/// Photometric style applied to a reference render, clamped to [0, 1].
void apply_style(PersonImage& image, const DomainStyle& style, std::uint64_t seed);

PersonImage render_image(const AttributeProfile& profile, const DomainStyle& style, int camera_id,
                         std::uint64_t seed, RenderSize size = {});

/// Row range [begin, end) holding the torso and arms of a rendering of `profile`.
std::pair<int, int> torso_band(const AttributeProfile& profile, RenderSize size = {});

Caption caption_of(const AttributeProfile& profile, const std::array<int, kBackgroundSlots>& background,
                   int domain_id = 0);

/// Inverse of caption_of over the vocabulary: recovers (foreground, background).
AttributeProfile profile_of(const Caption& caption);

}  // namespace dmf::synth
