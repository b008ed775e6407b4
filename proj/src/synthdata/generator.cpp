#include "dmf/synthdata/generator.hpp"

#include "dmf/numerics/random.hpp"

#include <cmath>
#include <algorithm>
#include <limits>
#include <numbers>
#include <optional>
#include <set>
#include <stdexcept>

namespace dmf::synth {

namespace {

using Rgb = Eigen::Vector3d;

// Foreground slot indices, in vocabulary order.
enum Slot : int {
  kGender,
  kAge,
  kSkin,
  kHairColor,
  kHairLength,
  kHat,
  kUpperColor,
  kUpperType,
  kSleeve,
  kUpperPattern,
  kLowerColor,
  kLowerType,
  kShoes,
  kBag
};
enum BackgroundSlot : int { kViewpoint, kWeather, kIllumination, kScene };

const std::vector<Rgb>& upper_colors() {
  static const std::vector<Rgb> c = {{0.80, 0.12, 0.12}, {0.15, 0.60, 0.20}, {0.15, 0.25, 0.75},
                                     {0.90, 0.80, 0.15}, {0.92, 0.92, 0.90}, {0.08, 0.08, 0.10},
                                     {0.50, 0.20, 0.60}, {0.95, 0.50, 0.10}};
  return c;
}
const std::vector<Rgb>& lower_colors() {
  static const std::vector<Rgb> c = {{0.08, 0.08, 0.10}, {0.15, 0.22, 0.55}, {0.50, 0.50, 0.50},
                                     {0.45, 0.30, 0.15}, {0.92, 0.92, 0.90}, {0.20, 0.45, 0.20},
                                     {0.70, 0.15, 0.15}, {0.85, 0.78, 0.60}};
  return c;
}
const std::vector<Rgb>& skin_colors() {
  static const std::vector<Rgb> c = {{0.95, 0.80, 0.70}, {0.85, 0.65, 0.50}, {0.60, 0.42, 0.30}, {0.38, 0.25, 0.18}};
  return c;
}
const std::vector<Rgb>& hair_colors() {
  static const std::vector<Rgb> c = {
      {0.05, 0.05, 0.05}, {0.35, 0.20, 0.10}, {0.90, 0.80, 0.45}, {0.65, 0.65, 0.65}, {0.60, 0.20, 0.08}};
  return c;
}
const std::vector<Rgb>& shoe_colors() {
  static const std::vector<Rgb> c = {
      {0.05, 0.05, 0.05}, {0.95, 0.95, 0.95}, {0.40, 0.25, 0.12}, {0.75, 0.10, 0.10}, {0.10, 0.20, 0.70}};
  return c;
}
const Rgb kHatColors[] = {{0, 0, 0}, {0.10, 0.20, 0.60}, {0.60, 0.10, 0.30}, {0.90, 0.90, 0.20}};
const Rgb kBagColors[] = {{0, 0, 0}, {0.55, 0.25, 0.10}, {0.20, 0.20, 0.25}, {0.70, 0.50, 0.30}};

struct Layout {
  double top, head_end, torso_end, legs_end, bottom;
};

Layout layout_for(const AttributeProfile& p) {
  static const double tops[] = {0.28, 0.06, 0.05, 0.09};
  Layout l;
  l.top = tops[p.foreground[kAge]];
  l.bottom = 0.97;
  const double h = l.bottom - l.top;
  l.head_end = l.top + 0.17 * h;
  l.torso_end = l.top + 0.55 * h;
  l.legs_end = l.top + 0.93 * h;
  return l;
}

struct CameraJitter {
  bool flip;
  int shift_px;
  double scale_x;
};

CameraJitter camera_jitter(int camera_id) {
  return {camera_id % 2 == 1, (camera_id * 3) % 5 - 2, 1.0 + 0.06 * ((camera_id % 3) - 1)};
}

Rgb lerp(const Rgb& a, const Rgb& b, double t) { return a + t * (b - a); }

// Colour of the person at (u, v), or nothing when the pixel is background.
std::optional<Rgb> person_pixel(const AttributeProfile& p, const Layout& l, double u, double v, double cx,
                                double sx, int row, int col) {
  const auto& fg = p.foreground;
  const int view = p.background[kViewpoint];
  const bool side = view >= 2;
  const bool back = view == 1;
  const double dx = u - cx;
  const double adx = std::abs(dx);
  static const double gender_width[] = {0.24, 0.20, 0.22};
  const double hw = gender_width[fg[kGender]] * sx * (side ? 0.75 : 1.0);
  const Rgb skin = skin_colors()[fg[kSkin]];
  const Rgb upper = upper_colors()[fg[kUpperColor]];
  const Rgb lower = lower_colors()[fg[kLowerColor]];
  const Rgb hair = hair_colors()[fg[kHairColor]];
  const double torso_h = l.torso_end - l.head_end;
  const double legs_h = l.legs_end - l.torso_end;

  // Bag overlays come first: they occlude the body.
  const int bag = fg[kBag];
  if (bag != 0) {
    const Rgb bc = kBagColors[bag];
    const double side_sign = view == 2 ? -1.0 : 1.0;
    if (bag == 1) {
      const double s = dx * side_sign;
      if (s > hw + 0.02 && s < hw + 0.16 && v > l.torso_end - 0.06 && v < l.torso_end + 0.08) return bc;
    } else if (bag == 2) {
      if (back) {
        if (adx < hw * 0.8 && v > l.head_end + 0.1 * torso_h && v < l.torso_end - 0.02) return bc;
      } else if (side) {
        const double s = -dx * side_sign;
        if (s > hw && s < hw + 0.12 && v > l.head_end + 0.1 * torso_h && v < l.torso_end - 0.02) return bc;
      } else if (adx > hw * 0.45 && adx < hw * 0.62 && v >= l.head_end && v < l.torso_end) {
        return bc;
      }
    } else if (bag == 3) {
      const double t = (v - l.head_end) / torso_h;
      if (t >= 0 && t < 1 && adx < hw && std::abs(dx - (0.9 * t - 0.45) * hw * side_sign) < 0.035) return bc;
      const double s = dx * side_sign;
      if (s > hw - 0.02 && s < hw + 0.12 && v > l.torso_end - 0.10 && v < l.torso_end + 0.02) return bc;
    }
  }

  // Head, hair and hat.
  if (v >= l.top && v < l.head_end) {
    const double rx = 0.14 * sx;
    const double ry = (l.head_end - l.top) / 2;
    const double cy = l.top + ry;
    const double e = (dx / rx) * (dx / rx) + ((v - cy) / ry) * ((v - cy) / ry);
    if (e <= 1.0) {
      const double t = (v - l.top) / (l.head_end - l.top);
      const int hat = fg[kHat];
      static const double hat_extent[] = {0.0, 0.35, 0.45, 0.55};
      if (hat != 0 && t < hat_extent[hat]) return kHatColors[hat];
      if (back || t < 0.40) return hair;
      const int len = fg[kHairLength];
      if (len >= 1 && adx > 0.6 * rx) return hair;
      return skin;
    }
    if (fg[kHat] == 1 && !back) {
      // cap brim sticks out on one side
      const double t = (v - l.top) / (l.head_end - l.top);
      if (t > 0.30 && t < 0.42 && dx > 0 && dx < rx * 1.6) return kHatColors[1];
    }
    return std::nullopt;
  }

  // Torso band: torso, arms, long hair.
  if (v >= l.head_end && v < l.torso_end) {
    const double t = (v - l.head_end) / torso_h;
    if (fg[kHairLength] == 2 && t < 0.25 && (back ? adx < 0.12 : (adx > 0.07 && adx < 0.14))) return hair;
    if (adx < hw) {
      Rgb c = upper;
      const Rgb accent = upper.mean() > 0.5 ? Rgb(0.1, 0.1, 0.1) : Rgb(0.95, 0.95, 0.95);
      switch (fg[kUpperPattern]) {
        case 1:
          if ((row / 2) % 2 == 1) c = 0.6 * upper;
          break;
        case 2:
          if (((row / 2) + (col / 2)) % 2 == 1) c = 0.7 * upper;
          break;
        case 3:
          if (view == 0 && adx < 0.06 && t > 0.20 && t < 0.40) c = accent;
          break;
        default:
          break;
      }
      if (!back && !side) {
        if (fg[kUpperType] == 1 && t < 0.10 && adx < 0.09) c = Rgb(0.95, 0.95, 0.95);
        if (fg[kUpperType] == 2 && adx < 0.025) c = 0.5 * upper;
      }
      return c;
    }
    const bool arm = side ? false : (adx >= hw && adx < hw + 0.08 * sx);
    if (arm) {
      switch (fg[kSleeve]) {
        case 1:
          return upper;
        case 0:
          return t < 0.35 ? upper : skin;
        default:
          return skin;
      }
    }
    return std::nullopt;
  }

  // Legs.
  if (v >= l.torso_end && v < l.legs_end) {
    const double t = (v - l.torso_end) / legs_h;
    const bool on_leg = adx > 0.02 && adx < hw * 0.9;
    switch (fg[kLowerType]) {
      case 0:
        if (on_leg) return lower;
        break;
      case 1:
        if (on_leg) return t < 0.4 ? lower : skin;
        break;
      default:
        if (t < 0.6 && adx < hw * (1.0 + 0.4 * t)) return lower;
        if (on_leg) return skin;
        break;
    }
    return std::nullopt;
  }

  if (v >= l.legs_end && v < l.bottom && adx > 0.02 && adx < hw * 0.95) return shoe_colors()[fg[kShoes]];
  return std::nullopt;
}

Rgb scene_base(std::uint64_t palette, int scene) {
  Rng rng(mix_seed(palette, static_cast<std::uint64_t>(scene) + 1));
  Rgb c;
  for (int k = 0; k < 3; ++k) c(k) = rng.uniform(0.2, 0.8);
  return c;
}

Eigen::Matrix3d hue_rotation(double turns) {
  const double theta = 2.0 * std::numbers::pi * turns;
  const Eigen::Vector3d axis = Eigen::Vector3d::Ones().normalized();
  return Eigen::AngleAxisd(theta, axis).toRotationMatrix();
}

}  // namespace

void DomainStyle::validate() const {
  if (hue_shift < -0.5 || hue_shift > 0.5) throw std::invalid_argument("DomainStyle: hue_shift outside [-0.5, 0.5]");
  if (illumination_gain < 0.5 || illumination_gain > 1.5)
    throw std::invalid_argument("DomainStyle: illumination_gain outside [0.5, 1.5]");
  if (camera_count < 2) throw std::invalid_argument("DomainStyle: camera_count must be >= 2");
  if (noise_sigma < 0.0) throw std::invalid_argument("DomainStyle: noise_sigma must be >= 0");
}

double style_distance(const DomainStyle& a, const DomainStyle& b) {
  const double dh = a.hue_shift - b.hue_shift;
  const double dg = a.illumination_gain - b.illumination_gain;
  const double dn = a.noise_sigma - b.noise_sigma;
  return std::sqrt(dh * dh + dg * dg + dn * dn);
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t foreground_cardinality() {
  std::uint64_t n = 1;
  for (const auto& s : foreground_slots()) {
    const std::uint64_t k = s.categories.size();
    if (n > std::numeric_limits<std::uint64_t>::max() / k) return std::numeric_limits<std::uint64_t>::max();
    n *= k;
  }
  return n;
}

std::vector<AttributeProfile> gen_identities(int count, std::uint64_t seed) {
  if (count < 2) throw std::invalid_argument("gen_identities: count must be >= 2");
  if (static_cast<std::uint64_t>(count) > foreground_cardinality())
    throw std::invalid_argument("gen_identities: " + std::to_string(count) + " identities exceed the " +
                                std::to_string(foreground_cardinality()) + " distinct attribute tuples");
  Rng rng(seed);
  std::set<std::array<int, kForegroundSlots>> seen;
  std::vector<AttributeProfile> out;
  out.reserve(static_cast<std::size_t>(count));
  const auto& slots = foreground_slots();
  while (static_cast<int>(out.size()) < count) {
    AttributeProfile p;
    p.identity_id = static_cast<int>(out.size());
    for (std::size_t s = 0; s < kForegroundSlots; ++s)
      p.foreground[s] = static_cast<int>(rng.index(slots[s].categories.size()));
    if (!seen.insert(p.foreground).second) continue;
    out.push_back(p);
  }
  return out;
}

std::pair<int, int> torso_band(const AttributeProfile& profile, RenderSize size) {
  const Layout l = layout_for(profile);
  int begin = size.height, end = 0;
  for (int y = 0; y < size.height; ++y) {
    const double v = (y + 0.5) / size.height;
    if (v >= l.head_end && v < l.torso_end) {
      begin = std::min(begin, y);
      end = std::max(end, y + 1);
    }
  }
  return {begin, end};
}

PersonImage render_reference(const AttributeProfile& profile, const DomainStyle& style, int camera_id,
                             std::uint64_t seed, RenderSize size) {
  if (camera_id < 0 || camera_id >= style.camera_count)
    throw std::invalid_argument("render_image: camera_id " + std::to_string(camera_id) + " outside [0, " +
                                std::to_string(style.camera_count) + ")");
  for (std::size_t s = 0; s < kBackgroundSlots; ++s)
    if (profile.background[s] < 0 ||
        profile.background[s] >= static_cast<int>(background_slots()[s].categories.size()))
      throw std::invalid_argument("render_image: background slot out of range");

  const int H = size.height, W = size.width;
  PersonImage img;
  img.pixels = MatrixXd::Zero(H, 3 * W);
  img.identity_id = profile.identity_id;
  img.camera_id = camera_id;
  img.domain_id = style.domain_id;

  Rng rng(mix_seed(seed, 0x5eed));
  const auto& bg = profile.background;
  const Layout l = layout_for(profile);
  const CameraJitter cam = camera_jitter(camera_id);
  const int jitter = static_cast<int>(rng.index(3)) - 1;
  const double cx = 0.5 + static_cast<double>(cam.shift_px + jitter) / W;

  // Scenery: base colour per scene, sky gradient outdoors, a few blocks.
  const Rgb base = scene_base(style.background_palette, bg[kScene]);
  const bool outdoor = bg[kScene] == 0 || bg[kScene] == 1 || bg[kScene] >= 4;
  struct Block {
    double u0, u1, v0, v1;
    Rgb color;
  };
  std::vector<Block> blocks(4);
  for (auto& b : blocks) {
    b.u0 = rng.uniform(-0.2, 0.9);
    b.u1 = b.u0 + rng.uniform(0.15, 0.5);
    b.v0 = rng.uniform(0.0, 0.7);
    b.v1 = b.v0 + rng.uniform(0.1, 0.4);
    for (int k = 0; k < 3; ++k) b.color(k) = std::clamp(base(k) + rng.uniform(-0.15, 0.15), 0.0, 1.0);
  }
  const double rain_phase = rng.uniform(0.0, 6.0);

  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const int xs = cam.flip ? W - 1 - x : x;
      const double u = (xs + 0.5) / W;
      const double v = (y + 0.5) / H;
      Rgb c = base;
      if (outdoor && v < 0.4) c = lerp(base, Rgb(0.75, 0.85, 0.95), 0.6 * (0.4 - v) / 0.4);
      for (const auto& b : blocks)
        if (u >= b.u0 && u < b.u1 && v >= b.v0 && v < b.v1) c = b.color;
      if (auto p = person_pixel(profile, l, u, v, cx, cam.scale_x, y, xs)) c = *p;

      switch (bg[kWeather]) {
        case 0:
          c *= 1.05;
          break;
        case 1:
          c = lerp(c, Rgb::Constant(0.55), 0.15);
          break;
        case 2:
          c *= 0.85;
          if (std::fmod(x + y * 0.5 + rain_phase, 6.0) < 0.7) c = lerp(c, Rgb::Constant(0.9), 0.3);
          break;
        default:
          c = lerp(c, Rgb::Constant(0.8), 0.35);
          break;
      }
      switch (bg[kIllumination]) {
        case 0:
          c *= 1.1;
          break;
        case 1:
          c *= 0.7;
          break;
        case 2:
          c = c.cwiseProduct(Rgb(1.08, 1.0, 0.88));
          break;
        default:
          c = c.cwiseProduct(Rgb(0.9, 1.0, 1.1));
          break;
      }
      for (int k = 0; k < 3; ++k) img.at(y, x, k) = std::clamp(c(k), 0.0, 1.0);
    }
  }
  return img;
}

void apply_style(PersonImage& image, const DomainStyle& style, std::uint64_t seed) {
  const Eigen::Matrix3d rot = hue_rotation(style.hue_shift);
  Rng rng(mix_seed(seed, 0x5171e));
  const bool identity_hue = style.hue_shift == 0.0;
  for (Index y = 0; y < image.height(); ++y) {
    for (Index x = 0; x < image.width(); ++x) {
      Rgb c(image.at(y, x, 0), image.at(y, x, 1), image.at(y, x, 2));
      if (!identity_hue) c = rot * c;
      c *= style.illumination_gain;
      for (int k = 0; k < 3; ++k) {
        double val = c(k);
        if (style.noise_sigma > 0.0) val += rng.normal(0.0, style.noise_sigma);
        image.at(y, x, k) = std::clamp(val, 0.0, 1.0);
      }
    }
  }
}

PersonImage render_image(const AttributeProfile& profile, const DomainStyle& style, int camera_id,
                         std::uint64_t seed, RenderSize size) {
  PersonImage img = render_reference(profile, style, camera_id, seed, size);
  apply_style(img, style, seed);
  return img;
}

Caption caption_of(const AttributeProfile& profile, const std::array<int, kBackgroundSlots>& background,
                   int domain_id) {
  const auto& vocab = Vocabulary::standard();
  Caption cap;
  cap.identity_id = profile.identity_id;
  cap.domain_id = domain_id;
  cap.tokens.reserve(kCaptionLength);
  for (std::size_t s = 0; s < kForegroundSlots; ++s)
    cap.tokens.push_back(vocab.foreground_word(s, static_cast<std::size_t>(profile.foreground[s])));
  for (std::size_t s = 0; s < kBackgroundSlots; ++s)
    cap.tokens.push_back(vocab.background_word(s, static_cast<std::size_t>(background[s])));
  return cap;
}

AttributeProfile profile_of(const Caption& caption) {
  if (caption.tokens.size() != kCaptionLength)
    throw std::invalid_argument("profile_of: caption must hold " + std::to_string(kCaptionLength) + " tokens");
  const auto& vocab = Vocabulary::standard();
  AttributeProfile p;
  p.identity_id = caption.identity_id;
  for (std::size_t i = 0; i < kCaptionLength; ++i) {
    const auto sv = vocab.decode(caption.tokens[i]);
    const bool expect_fg = i < kForegroundSlots;
    const std::size_t expect_slot = expect_fg ? i : i - kForegroundSlots;
    if (sv.foreground != expect_fg || sv.slot != expect_slot)
      throw std::invalid_argument("profile_of: token '" + caption.tokens[i] + "' out of slot order");
    if (expect_fg)
      p.foreground[expect_slot] = static_cast<int>(sv.category);
    else
      p.background[expect_slot] = static_cast<int>(sv.category);
  }
  return p;
}

}  // namespace dmf::synth
