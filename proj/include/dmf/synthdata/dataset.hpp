#pragma once

#include "dmf/synthdata/generator.hpp"

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace dmf::synth {

/// Invalid generator configuration (maps to the CLI's config exit code).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Missing or malformed dataset files (maps to the CLI's data exit code).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GeneratorConfig {
  std::uint64_t seed = 1;
  RenderSize size{};
  /// Minimum samples per identity in every training split (the trainer's K).
  int min_per_identity = 4;
  double min_style_distance = 0.1;
  std::vector<DomainStyle> domains;

  int pretrain_identities = 40;
  int pretrain_images_per_identity = 11;
  std::vector<int> pretrain_domains{0, 1};

  int finetune_identities = 30;
  int finetune_images_per_identity = 8;
  int finetune_domain = 2;

  int test_identities = 20;
  int test_images_per_camera = 3;
  int test_domain = 3;

  static GeneratorConfig defaults();
  /// Rejects infeasible or style-degenerate configurations with ConfigError.
  void validate() const;
  const DomainStyle& domain(int id) const;
};

nlohmann::json to_json(const GeneratorConfig& cfg);
/// Missing keys keep their defaults; unknown keys are rejected.
GeneratorConfig generator_config_from_json(const nlohmann::json& j);

struct ManifestRow {
  std::string file;  // relative to the dataset root
  int identity = 0;
  int camera = 0;
  int domain = 0;
};

inline constexpr const char* kSplitPretrainImages = "pretrain_images";
inline constexpr const char* kSplitPretrainCaptions = "pretrain_captions";
inline constexpr const char* kSplitFinetuneImages = "finetune_images";
inline constexpr const char* kSplitQueryImages = "query_images";
inline constexpr const char* kSplitGalleryImages = "gallery_images";
inline constexpr int kManifestVersion = 1;

struct DatasetManifest {
  nlohmann::json config;  // effective generator config echo
  std::map<std::string, std::vector<ManifestRow>> splits;

  const std::vector<ManifestRow>& split(const std::string& name) const;
  /// Checks identity disjointness and cross-camera coverage; throws DataError.
  void validate() const;
};

nlohmann::json to_json(const DatasetManifest& m);
DatasetManifest manifest_from_json(const nlohmann::json& j);

/// Samples in memory, aligned index-for-index with the manifest rows.
struct Dataset {
  DatasetManifest manifest;
  std::vector<PersonImage> pretrain_images;
  std::vector<Caption> pretrain_captions;
  std::vector<PersonImage> finetune_images;
  std::vector<PersonImage> query_images;
  std::vector<PersonImage> gallery_images;
};

/// Renders the whole dataset in memory. Pixels are quantized to 8 bits so
/// they equal what a PNG round trip returns.
Dataset generate_dataset(const GeneratorConfig& cfg);

/// generate_dataset + write images, captions, vocabulary and manifest to `out_dir`.
DatasetManifest build_dataset(const GeneratorConfig& cfg, const std::filesystem::path& out_dir);

/// Reads manifest.json and every referenced file.
Dataset load_dataset(const std::filesystem::path& root);
DatasetManifest load_manifest(const std::filesystem::path& root);

nlohmann::json caption_to_json(const Caption& c);
Caption caption_from_json(const nlohmann::json& j);

/// Writes `text` to `path` through a temporary file and rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& text);

}  // namespace dmf::synth
