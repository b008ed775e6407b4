#include "dmf/synthdata/dataset.hpp"

#include "dmf/io/json_util.hpp"
#include "dmf/io/png.hpp"
#include "dmf/numerics/random.hpp"

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

namespace dmf::synth {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint64_t kPretrainTag = 1, kFinetuneTag = 2, kTestTag = 3;

std::string image_name(int identity, int camera, int index) {
  std::ostringstream os;
  os << std::setw(4) << std::setfill('0') << identity << "_" << camera << "_" << std::setw(2) << index << ".png";
  return os.str();
}

std::string caption_name(int identity, int index) {
  std::ostringstream os;
  os << std::setw(4) << std::setfill('0') << identity << "_" << std::setw(2) << index << ".json";
  return os.str();
}

std::size_t background_combinations() {
  std::size_t n = 1;
  for (const auto& s : background_slots()) n *= s.categories.size();
  return n;
}

std::array<int, kBackgroundSlots> background_from_index(std::size_t code) {
  std::array<int, kBackgroundSlots> bg{};
  for (std::size_t s = 0; s < kBackgroundSlots; ++s) {
    const std::size_t k = background_slots()[s].categories.size();
    bg[s] = static_cast<int>(code % k);
    code /= k;
  }
  return bg;
}

/// `count` pairwise-distinct background tuples for one identity.
std::vector<std::array<int, kBackgroundSlots>> distinct_backgrounds(std::uint64_t seed, std::size_t count) {
  Rng rng(seed);
  std::vector<std::array<int, kBackgroundSlots>> out;
  for (std::size_t code : rng.sample_without_replacement(background_combinations(), count))
    out.push_back(background_from_index(code));
  return out;
}

void quantize(PersonImage& img) {
  img.pixels = (img.pixels.array() * 255.0).round() / 255.0;
}

json row_json(const ManifestRow& r) {
  return {{"file", r.file}, {"identity", r.identity}, {"camera", r.camera}, {"domain", r.domain}};
}

json style_json(const DomainStyle& s) {
  return {{"domain_id", s.domain_id},
          {"hue_shift", s.hue_shift},
          {"illumination_gain", s.illumination_gain},
          {"background_palette", s.background_palette},
          {"camera_count", s.camera_count},
          {"noise_sigma", s.noise_sigma}};
}

DomainStyle style_from_json(const json& j) {
  io::reject_unknown_keys<ConfigError>(
      j, {"domain_id", "hue_shift", "illumination_gain", "background_palette", "camera_count", "noise_sigma"},
      "data.domains[]");
  DomainStyle s;
  io::read_optional<ConfigError>(j, "domain_id", s.domain_id, "data.domains[]");
  io::read_optional<ConfigError>(j, "hue_shift", s.hue_shift, "data.domains[]");
  io::read_optional<ConfigError>(j, "illumination_gain", s.illumination_gain, "data.domains[]");
  io::read_optional<ConfigError>(j, "background_palette", s.background_palette, "data.domains[]");
  io::read_optional<ConfigError>(j, "camera_count", s.camera_count, "data.domains[]");
  io::read_optional<ConfigError>(j, "noise_sigma", s.noise_sigma, "data.domains[]");
  return s;
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("missing file '" + p.string() + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace

GeneratorConfig GeneratorConfig::defaults() {
  GeneratorConfig c;
  // Two synthetic pre-training domains, one "realistic" fine-tuning domain
  // and one held-out test domain with its own photometric style.
  c.domains = {
      {0, 0.00, 1.00, 11, 4, 0.02},
      {1, 0.06, 1.25, 23, 4, 0.03},
      {2, -0.05, 0.90, 37, 3, 0.05},
      {3, 0.10, 0.75, 53, 3, 0.04},
  };
  return c;
}

const DomainStyle& GeneratorConfig::domain(int id) const {
  for (const auto& d : domains)
    if (d.domain_id == id) return d;
  throw ConfigError("data: no domain with id " + std::to_string(id));
}

void GeneratorConfig::validate() const {
  if (size.height <= 0 || size.width <= 0) throw ConfigError("data: image size must be positive");
  std::set<int> ids;
  for (const auto& d : domains) {
    try {
      d.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("data: domain ") + std::to_string(d.domain_id) + ": " + e.what());
    }
    if (!ids.insert(d.domain_id).second) throw ConfigError("data: duplicate domain id " + std::to_string(d.domain_id));
  }
  if (pretrain_domains.empty()) throw ConfigError("data: at least one pre-training domain is required");
  std::vector<int> used = pretrain_domains;
  used.push_back(finetune_domain);
  used.push_back(test_domain);
  for (int id : used) domain(id);
  for (std::size_t a = 0; a < used.size(); ++a)
    for (std::size_t b = a + 1; b < used.size(); ++b) {
      if (used[a] == used[b]) throw ConfigError("data: pre-training, fine-tuning and test domains must be distinct");
      const double dist = style_distance(domain(used[a]), domain(used[b]));
      const bool involves_test = used[a] == test_domain || used[b] == test_domain;
      if (dist <= 0.0 || (involves_test && dist < min_style_distance)) {
        std::ostringstream os;
        os << "data: domains " << used[a] << " and " << used[b] << " have style distance " << dist
           << (involves_test ? ", below the minimum " + std::to_string(min_style_distance) : ", not style-distinct");
        throw ConfigError(os.str());
      }
    }
  if (pretrain_identities < 2 || finetune_identities < 2 || test_identities < 2)
    throw ConfigError("data: every split needs at least 2 identities");
  if (pretrain_images_per_identity < min_per_identity)
    throw ConfigError("data: " + std::to_string(pretrain_images_per_identity) +
                      " pre-training images per identity cannot fill K=" + std::to_string(min_per_identity));
  if (finetune_images_per_identity < min_per_identity)
    throw ConfigError("data: " + std::to_string(finetune_images_per_identity) +
                      " fine-tuning images per identity cannot fill K=" + std::to_string(min_per_identity));
  if (static_cast<std::size_t>(pretrain_images_per_identity) > background_combinations())
    throw ConfigError("data: not enough distinct captions per identity");
  if (test_images_per_camera < 1) throw ConfigError("data: test_images_per_camera must be >= 1");
  if (domain(test_domain).camera_count < 2) throw ConfigError("data: the test domain needs >= 2 cameras");
}

json to_json(const GeneratorConfig& c) {
  json domains = json::array();
  for (const auto& d : c.domains) domains.push_back(style_json(d));
  return {{"seed", c.seed},
          {"image_height", c.size.height},
          {"image_width", c.size.width},
          {"min_per_identity", c.min_per_identity},
          {"min_style_distance", c.min_style_distance},
          {"domains", domains},
          {"pretrain",
           {{"identities", c.pretrain_identities},
            {"images_per_identity", c.pretrain_images_per_identity},
            {"domains", c.pretrain_domains}}},
          {"finetune",
           {{"identities", c.finetune_identities},
            {"images_per_identity", c.finetune_images_per_identity},
            {"domain", c.finetune_domain}}},
          {"test",
           {{"identities", c.test_identities},
            {"images_per_camera", c.test_images_per_camera},
            {"domain", c.test_domain}}}};
}

GeneratorConfig generator_config_from_json(const json& j) {
  GeneratorConfig c = GeneratorConfig::defaults();
  io::reject_unknown_keys<ConfigError>(j,
                                       {"seed", "image_height", "image_width", "min_per_identity",
                                        "min_style_distance", "domains", "pretrain", "finetune", "test"},
                                       "data");
  io::read_optional<ConfigError>(j, "seed", c.seed, "data");
  io::read_optional<ConfigError>(j, "image_height", c.size.height, "data");
  io::read_optional<ConfigError>(j, "image_width", c.size.width, "data");
  io::read_optional<ConfigError>(j, "min_per_identity", c.min_per_identity, "data");
  io::read_optional<ConfigError>(j, "min_style_distance", c.min_style_distance, "data");
  if (auto it = j.find("domains"); it != j.end()) {
    if (!it->is_array()) throw ConfigError("data.domains: expected an array");
    c.domains.clear();
    for (const auto& d : *it) c.domains.push_back(style_from_json(d));
  }
  if (auto it = j.find("pretrain"); it != j.end()) {
    io::reject_unknown_keys<ConfigError>(*it, {"identities", "images_per_identity", "domains"}, "data.pretrain");
    io::read_optional<ConfigError>(*it, "identities", c.pretrain_identities, "data.pretrain");
    io::read_optional<ConfigError>(*it, "images_per_identity", c.pretrain_images_per_identity, "data.pretrain");
    io::read_optional<ConfigError>(*it, "domains", c.pretrain_domains, "data.pretrain");
  }
  if (auto it = j.find("finetune"); it != j.end()) {
    io::reject_unknown_keys<ConfigError>(*it, {"identities", "images_per_identity", "domain"}, "data.finetune");
    io::read_optional<ConfigError>(*it, "identities", c.finetune_identities, "data.finetune");
    io::read_optional<ConfigError>(*it, "images_per_identity", c.finetune_images_per_identity, "data.finetune");
    io::read_optional<ConfigError>(*it, "domain", c.finetune_domain, "data.finetune");
  }
  if (auto it = j.find("test"); it != j.end()) {
    io::reject_unknown_keys<ConfigError>(*it, {"identities", "images_per_camera", "domain"}, "data.test");
    io::read_optional<ConfigError>(*it, "identities", c.test_identities, "data.test");
    io::read_optional<ConfigError>(*it, "images_per_camera", c.test_images_per_camera, "data.test");
    io::read_optional<ConfigError>(*it, "domain", c.test_domain, "data.test");
  }
  return c;
}

const std::vector<ManifestRow>& DatasetManifest::split(const std::string& name) const {
  auto it = splits.find(name);
  if (it == splits.end()) throw DataError("manifest: missing split '" + name + "'");
  return it->second;
}

void DatasetManifest::validate() const {
  std::set<int> finetune_ids;
  for (const auto& r : split(kSplitFinetuneImages)) finetune_ids.insert(r.identity);
  for (const char* name : {kSplitQueryImages, kSplitGalleryImages})
    for (const auto& r : split(name))
      if (finetune_ids.count(r.identity))
        throw DataError("manifest: identity " + std::to_string(r.identity) + " appears in both fine-tuning and " +
                        name);
  const auto& gallery = split(kSplitGalleryImages);
  for (const auto& q : split(kSplitQueryImages)) {
    bool matched = false;
    for (const auto& g : gallery) matched = matched || (g.identity == q.identity && g.camera != q.camera);
    if (!matched) throw DataError("manifest: query '" + q.file + "' has no cross-camera gallery match");
  }
}

json to_json(const DatasetManifest& m) {
  json splits = json::object();
  for (const auto& [name, rows] : m.splits) {
    json arr = json::array();
    for (const auto& r : rows) arr.push_back(row_json(r));
    splits[name] = arr;
  }
  return {{"format_version", kManifestVersion},
          {"vocabulary", "vocabulary.json"},
          {"config", m.config},
          {"splits", splits}};
}

DatasetManifest manifest_from_json(const json& j) {
  try {
    if (j.at("format_version").get<int>() != kManifestVersion)
      throw DataError("manifest: unsupported format_version " + j.at("format_version").dump());
    DatasetManifest m;
    m.config = j.at("config");
    for (const auto& [name, rows] : j.at("splits").items()) {
      auto& out = m.splits[name];
      for (const auto& r : rows)
        out.push_back({r.at("file").get<std::string>(), r.at("identity").get<int>(), r.at("camera").get<int>(),
                       r.at("domain").get<int>()});
    }
    return m;
  } catch (const json::exception& e) {
    throw DataError(std::string("manifest: ") + e.what());
  }
}

json caption_to_json(const Caption& c) {
  return {{"identity", c.identity_id}, {"domain", c.domain_id}, {"tokens", c.tokens}};
}

Caption caption_from_json(const json& j) {
  try {
    Caption c;
    c.identity_id = j.at("identity").get<int>();
    c.domain_id = j.at("domain").get<int>();
    c.tokens = j.at("tokens").get<std::vector<std::string>>();
    return c;
  } catch (const json::exception& e) {
    throw DataError(std::string("caption: ") + e.what());
  }
}

Dataset generate_dataset(const GeneratorConfig& cfg) {
  cfg.validate();
  Dataset ds;
  ds.manifest.config = to_json(cfg);
  auto& splits = ds.manifest.splits;
  for (const char* name :
       {kSplitPretrainImages, kSplitPretrainCaptions, kSplitFinetuneImages, kSplitQueryImages, kSplitGalleryImages})
    splits[name];

  const int total = cfg.pretrain_identities + cfg.finetune_identities + cfg.test_identities;
  const auto profiles = gen_identities(total, cfg.seed);
  const auto render_seed = [&](std::uint64_t tag, int identity, int index) {
    return mix_seed(mix_seed(cfg.seed, tag), static_cast<std::uint64_t>(identity) * 1000 + index);
  };
  auto finish = [&](PersonImage img) {
    quantize(img);
    return img;
  };

  // Pre-training: images cycle over the synthetic domains and their cameras;
  // every image has a paired caption with the same background slots.
  const int nd = static_cast<int>(cfg.pretrain_domains.size());
  for (int id = 0; id < cfg.pretrain_identities; ++id) {
    const auto backgrounds =
        distinct_backgrounds(render_seed(kPretrainTag, id, 999), static_cast<std::size_t>(cfg.pretrain_images_per_identity));
    for (int i = 0; i < cfg.pretrain_images_per_identity; ++i) {
      const DomainStyle& style = cfg.domain(cfg.pretrain_domains[static_cast<std::size_t>(i % nd)]);
      const int camera = (i / nd) % style.camera_count;
      AttributeProfile p = profiles[static_cast<std::size_t>(id)];
      p.background = backgrounds[static_cast<std::size_t>(i)];
      ds.pretrain_images.push_back(finish(render_image(p, style, camera, render_seed(kPretrainTag, id, i), cfg.size)));
      splits[kSplitPretrainImages].push_back({"images/pretrain/" + image_name(id, camera, i), id, camera, style.domain_id});
      ds.pretrain_captions.push_back(caption_of(p, p.background, style.domain_id));
      splits[kSplitPretrainCaptions].push_back({"captions/" + caption_name(id, i), id, camera, style.domain_id});
    }
  }

  const DomainStyle& ft = cfg.domain(cfg.finetune_domain);
  for (int k = 0; k < cfg.finetune_identities; ++k) {
    const int id = cfg.pretrain_identities + k;
    const auto backgrounds =
        distinct_backgrounds(render_seed(kFinetuneTag, id, 999), static_cast<std::size_t>(cfg.finetune_images_per_identity));
    for (int i = 0; i < cfg.finetune_images_per_identity; ++i) {
      const int camera = i % ft.camera_count;
      AttributeProfile p = profiles[static_cast<std::size_t>(id)];
      p.background = backgrounds[static_cast<std::size_t>(i)];
      ds.finetune_images.push_back(finish(render_image(p, ft, camera, render_seed(kFinetuneTag, id, i), cfg.size)));
      splits[kSplitFinetuneImages].push_back({"images/finetune/" + image_name(id, camera, i), id, camera, ft.domain_id});
    }
  }

  // Test: the first image of every (identity, camera) is a query, the rest
  // form the gallery, so each query has matches under the other cameras.
  const DomainStyle& te = cfg.domain(cfg.test_domain);
  for (int k = 0; k < cfg.test_identities; ++k) {
    const int id = cfg.pretrain_identities + cfg.finetune_identities + k;
    const int per_id = te.camera_count * cfg.test_images_per_camera;
    const auto backgrounds = distinct_backgrounds(render_seed(kTestTag, id, 999), static_cast<std::size_t>(per_id));
    for (int i = 0; i < per_id; ++i) {
      const int camera = i / cfg.test_images_per_camera;
      const bool is_query = i % cfg.test_images_per_camera == 0;
      AttributeProfile p = profiles[static_cast<std::size_t>(id)];
      p.background = backgrounds[static_cast<std::size_t>(i)];
      auto img = finish(render_image(p, te, camera, render_seed(kTestTag, id, i), cfg.size));
      const std::string sub = is_query ? "query" : "gallery";
      ManifestRow row{"images/" + sub + "/" + image_name(id, camera, i), id, camera, te.domain_id};
      if (is_query) {
        ds.query_images.push_back(std::move(img));
        splits[kSplitQueryImages].push_back(row);
      } else {
        ds.gallery_images.push_back(std::move(img));
        splits[kSplitGalleryImages].push_back(row);
      }
    }
  }
  ds.manifest.validate();
  return ds;
}

void write_file_atomic(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write '" + tmp.string() + "'");
    out << text;
    if (!out) throw DataError("short write to '" + tmp.string() + "'");
  }
  fs::rename(tmp, path);
}

DatasetManifest build_dataset(const GeneratorConfig& cfg, const fs::path& out_dir) {
  Dataset ds = generate_dataset(cfg);
  for (const char* sub : {"images/pretrain", "images/finetune", "images/query", "images/gallery", "captions"})
    fs::create_directories(out_dir / sub);

  const auto write_images = [&](const char* split, const std::vector<PersonImage>& imgs) {
    const auto& rows = ds.manifest.split(split);
    for (std::size_t i = 0; i < rows.size(); ++i) io::write_png(out_dir / rows[i].file, imgs[i].pixels);
  };
  write_images(kSplitPretrainImages, ds.pretrain_images);
  write_images(kSplitFinetuneImages, ds.finetune_images);
  write_images(kSplitQueryImages, ds.query_images);
  write_images(kSplitGalleryImages, ds.gallery_images);
  const auto& cap_rows = ds.manifest.split(kSplitPretrainCaptions);
  for (std::size_t i = 0; i < cap_rows.size(); ++i)
    write_file_atomic(out_dir / cap_rows[i].file, caption_to_json(ds.pretrain_captions[i]).dump(2) + "\n");

  write_file_atomic(out_dir / "vocabulary.json", Vocabulary::standard().to_json().dump(2) + "\n");
  write_file_atomic(out_dir / "manifest.json", to_json(ds.manifest).dump(2) + "\n");
  return ds.manifest;
}

DatasetManifest load_manifest(const fs::path& root) {
  const fs::path path = root / "manifest.json";
  json j;
  try {
    j = json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    throw DataError("manifest '" + path.string() + "' is not valid JSON: " + e.what());
  }
  DatasetManifest m = manifest_from_json(j);
  m.validate();
  return m;
}

Dataset load_dataset(const fs::path& root) {
  Dataset ds;
  ds.manifest = load_manifest(root);
  const auto load_images = [&](const char* split, std::vector<PersonImage>& out) {
    for (const auto& r : ds.manifest.split(split)) {
      if (!fs::exists(root / r.file)) throw DataError("missing image '" + (root / r.file).string() + "'");
      PersonImage img;
      try {
        img.pixels = io::read_png(root / r.file);
      } catch (const io::ImageIoError& e) {
        throw DataError(e.what());
      }
      img.identity_id = r.identity;
      img.camera_id = r.camera;
      img.domain_id = r.domain;
      out.push_back(std::move(img));
    }
  };
  load_images(kSplitPretrainImages, ds.pretrain_images);
  load_images(kSplitFinetuneImages, ds.finetune_images);
  load_images(kSplitQueryImages, ds.query_images);
  load_images(kSplitGalleryImages, ds.gallery_images);
  const auto& vocab = Vocabulary::standard();
  for (const auto& r : ds.manifest.split(kSplitPretrainCaptions)) {
    json j;
    try {
      j = json::parse(read_text(root / r.file));
    } catch (const json::parse_error& e) {
      throw DataError("caption '" + (root / r.file).string() + "' is not valid JSON");
    }
    Caption c = caption_from_json(j);
    for (const auto& t : c.tokens)
      if (!vocab.contains(t)) throw DataError("caption '" + r.file + "' uses unknown word '" + t + "'");
    ds.pretrain_captions.push_back(std::move(c));
  }
  return ds;
}

}  // namespace dmf::synth
