#pragma once

#include "dmf/model/dmf_model.hpp"
#include "dmf/synthdata/generator.hpp"

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace dmf::eval {

/// One row per image: labels plus the retrieval feature.
struct FeatureSet {
  std::vector<int> identity;
  std::vector<int> camera;
  std::vector<int> domain;
  MatrixXd features;  // rows x D

  Index size() const { return features.rows(); }
};

/// Eval-mode, post-BN, L2-normalized features, extracted in chunks.
FeatureSet extract_features(const std::vector<synth::PersonImage>& images, const ParamStore& params,
                            const model::ModelConfig& cfg);

/// Gallery entries for one query, ascending by squared Euclidean distance
/// (ties by gallery index). valid[i] is false for same identity + same camera.
struct QueryRanking {
  std::vector<Index> order;
  std::vector<double> distance;
  std::vector<char> valid;
};

std::vector<QueryRanking> rank(const FeatureSet& query, const FeatureSet& gallery);

/// Same ranking from a precomputed (queries x gallery) distance matrix.
std::vector<QueryRanking> rank_from_distances(const MatrixXd& dist, const std::vector<int>& q_ids,
                                              const std::vector<int>& q_cams, const std::vector<int>& g_ids,
                                              const std::vector<int>& g_cams);

struct QueryResult {
  Index query = 0;
  int identity = 0;
  int camera = 0;
  double ap = 0.0;
  Index valid_gallery = 0;
  Index relevant = 0;
  /// "ok", "empty_valid_gallery" or "no_relevant"; only "ok" enters the averages.
  std::string status = "ok";
};

struct EvalReport {
  std::vector<double> cmc;  // cmc[k-1] = rank-k accuracy
  double map = 0.0;
  std::vector<QueryResult> per_query;
  Index evaluated = 0;
  Index dropped = 0;
  nlohmann::json config;
  std::string checkpoint_id;

  double rank_at(int k) const { return k >= 1 && k <= static_cast<int>(cmc.size()) ? cmc[k - 1] : 0.0; }
};

/// Relevant = same identity, different camera (hence valid).
EvalReport compute_cmc_map(const std::vector<QueryRanking>& ranked, const std::vector<int>& q_ids,
                           const std::vector<int>& q_cams, const std::vector<int>& g_ids,
                           const std::vector<int>& g_cams, int max_rank);

EvalReport evaluate(const FeatureSet& query, const FeatureSet& gallery, int max_rank);

nlohmann::json to_json(const EvalReport& r);
/// Rank-1 / Rank-5 / Rank-10 / mAP in percent, one aligned row.
std::string format_table_row(const std::string& method, const EvalReport& r);
std::string format_table_header();

/// Per query: a strip of the query then its top-k valid gallery images, each
/// framed green (match) or red (non-match); the query frame is blue.
struct GridEntry {
  Index gallery_index = 0;
  int identity = 0;
  int camera = 0;
  double distance = 0.0;
  bool match = false;
};

struct RankingStrip {
  Index query = 0;
  int requested_k = 0;
  int actual_k = 0;
  bool truncated = false;
  std::vector<GridEntry> entries;
  std::filesystem::path image_path;
  std::filesystem::path sidecar_path;
};

inline constexpr int kGridBorder = 2;

std::vector<RankingStrip> export_ranking_grid(const std::vector<synth::PersonImage>& queries,
                                              const std::vector<synth::PersonImage>& gallery,
                                              const std::vector<QueryRanking>& ranked,
                                              const std::vector<Index>& selected, int top_k,
                                              const std::filesystem::path& out_dir, const nlohmann::json& meta);

}  // namespace dmf::eval
