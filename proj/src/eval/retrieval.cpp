#include "dmf/eval/retrieval.hpp"

#include "dmf/io/png.hpp"
#include "dmf/synthdata/dataset.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>

namespace dmf::eval {

namespace {

constexpr Index kChunk = 32;

void check_labels(std::size_t n, const std::vector<int>& ids, const std::vector<int>& cams, const char* what) {
  if (ids.size() != n || cams.size() != n)
    throw ShapeError(std::string(what) + ": label count does not match the number of rows");
}

}  // namespace

FeatureSet extract_features(const std::vector<synth::PersonImage>& images, const ParamStore& params,
                            const model::ModelConfig& cfg) {
  FeatureSet fs;
  const Index n = static_cast<Index>(images.size());
  fs.features.resize(n, cfg.head.model_dim);
  const Index tokens = cfg.tokenizer.num_patches();
  for (Index start = 0; start < n; start += kChunk) {
    const Index b = std::min(kChunk, n - start);
    MatrixXd encoded(b * tokens, cfg.tokenizer.image_enc_dim);
    for (Index i = 0; i < b; ++i)
      encoded.middleRows(i * tokens, tokens) = fusion::encode_image(images[start + i], cfg.tokenizer, params);
    fs.features.middleRows(start, b) = model::embed(params, cfg, fusion::Modality::image, encoded, b);
  }
  for (const auto& img : images) {
    fs.identity.push_back(img.identity_id);
    fs.camera.push_back(img.camera_id);
    fs.domain.push_back(img.domain_id);
  }
  return fs;
}

std::vector<QueryRanking> rank_from_distances(const MatrixXd& dist, const std::vector<int>& q_ids,
                                              const std::vector<int>& q_cams, const std::vector<int>& g_ids,
                                              const std::vector<int>& g_cams) {
  check_labels(static_cast<std::size_t>(dist.rows()), q_ids, q_cams, "rank (query)");
  check_labels(static_cast<std::size_t>(dist.cols()), g_ids, g_cams, "rank (gallery)");
  std::vector<QueryRanking> out(static_cast<std::size_t>(dist.rows()));
  for (Index q = 0; q < dist.rows(); ++q) {
    QueryRanking& r = out[static_cast<std::size_t>(q)];
    r.order.resize(static_cast<std::size_t>(dist.cols()));
    std::iota(r.order.begin(), r.order.end(), Index{0});
    std::stable_sort(r.order.begin(), r.order.end(), [&](Index a, Index b) { return dist(q, a) < dist(q, b); });
    for (Index g : r.order) {
      r.distance.push_back(dist(q, g));
      r.valid.push_back(!(g_ids[g] == q_ids[q] && g_cams[g] == q_cams[q]));
    }
  }
  return out;
}

std::vector<QueryRanking> rank(const FeatureSet& query, const FeatureSet& gallery) {
  if (query.features.cols() != gallery.features.cols())
    throw ShapeError("rank: query dim " + std::to_string(query.features.cols()) + " != gallery dim " +
                     std::to_string(gallery.features.cols()));
  MatrixXd dist(query.size(), gallery.size());
  for (Index q = 0; q < query.size(); ++q)
    for (Index g = 0; g < gallery.size(); ++g)
      dist(q, g) = (query.features.row(q) - gallery.features.row(g)).squaredNorm();
  return rank_from_distances(dist, query.identity, query.camera, gallery.identity, gallery.camera);
}

EvalReport compute_cmc_map(const std::vector<QueryRanking>& ranked, const std::vector<int>& q_ids,
                           const std::vector<int>& q_cams, const std::vector<int>& g_ids,
                           const std::vector<int>& g_cams, int max_rank) {
  if (max_rank < 1) throw std::invalid_argument("compute_cmc_map: max_rank must be >= 1");
  check_labels(ranked.size(), q_ids, q_cams, "compute_cmc_map (query)");
  EvalReport rep;
  rep.cmc.assign(static_cast<std::size_t>(max_rank), 0.0);
  double ap_sum = 0.0;
  for (std::size_t q = 0; q < ranked.size(); ++q) {
    QueryResult res;
    res.query = static_cast<Index>(q);
    res.identity = q_ids[q];
    res.camera = q_cams[q];
    Index pos = 0, hits = 0, first = -1;
    double precision_sum = 0.0;
    const auto& r = ranked[q];
    for (std::size_t i = 0; i < r.order.size(); ++i) {
      if (!r.valid[i]) continue;
      ++pos;
      const Index g = r.order[i];
      if (g_ids[static_cast<std::size_t>(g)] == q_ids[q] && g_cams[static_cast<std::size_t>(g)] != q_cams[q]) {
        ++hits;
        if (first < 0) first = pos;
        precision_sum += static_cast<double>(hits) / static_cast<double>(pos);
      }
    }
    res.valid_gallery = pos;
    res.relevant = hits;
    if (pos == 0) {
      res.status = "empty_valid_gallery";
    } else if (hits == 0) {
      res.status = "no_relevant";
    } else {
      res.ap = precision_sum / static_cast<double>(hits);
      ap_sum += res.ap;
      for (Index k = first; k <= max_rank; ++k) rep.cmc[static_cast<std::size_t>(k - 1)] += 1.0;
      ++rep.evaluated;
    }
    if (res.status != "ok") ++rep.dropped;
    rep.per_query.push_back(res);
  }
  if (rep.evaluated > 0) {
    for (double& c : rep.cmc) c /= static_cast<double>(rep.evaluated);
    rep.map = ap_sum / static_cast<double>(rep.evaluated);
  }
  return rep;
}

EvalReport evaluate(const FeatureSet& query, const FeatureSet& gallery, int max_rank) {
  return compute_cmc_map(rank(query, gallery), query.identity, query.camera, gallery.identity, gallery.camera,
                         max_rank);
}

nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json per = nlohmann::json::array();
  for (const auto& q : r.per_query)
    per.push_back({{"query", q.query},
                   {"identity", q.identity},
                   {"camera", q.camera},
                   {"ap", q.ap},
                   {"valid_gallery", q.valid_gallery},
                   {"relevant", q.relevant},
                   {"status", q.status}});
  return {{"cmc", r.cmc},         {"map", r.map},
          {"rank1", r.rank_at(1)}, {"rank5", r.rank_at(5)},
          {"rank10", r.rank_at(10)}, {"queries_evaluated", r.evaluated},
          {"queries_dropped", r.dropped}, {"per_query", per},
          {"checkpoint", r.checkpoint_id}, {"config", r.config}};
}

std::string format_table_header() {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%-16s %7s %7s %7s %7s", "Method", "Rank-1", "Rank-5", "Rank-10", "mAP");
  return buf;
}

std::string format_table_row(const std::string& method, const EvalReport& r) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%-16s %7.1f %7.1f %7.1f %7.1f", method.c_str(), 100.0 * r.rank_at(1),
                100.0 * r.rank_at(5), 100.0 * r.rank_at(10), 100.0 * r.map);
  return buf;
}

namespace {

void paste_framed(MatrixXd& strip, const synth::PersonImage& img, Index slot, const double (&rgb)[3]) {
  const Index h = img.height(), w = img.width();
  strip.block(0, slot * w * 3, h, w * 3) = img.pixels;
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) {
      const bool edge = y < kGridBorder || y >= h - kGridBorder || x < kGridBorder || x >= w - kGridBorder;
      if (!edge) continue;
      for (int c = 0; c < 3; ++c) strip(y, (slot * w + x) * 3 + c) = rgb[c];
    }
}

constexpr double kGreen[3] = {0.0, 1.0, 0.0};
constexpr double kRed[3] = {1.0, 0.0, 0.0};
constexpr double kBlue[3] = {0.0, 0.0, 1.0};

}  // namespace

std::vector<RankingStrip> export_ranking_grid(const std::vector<synth::PersonImage>& queries,
                                              const std::vector<synth::PersonImage>& gallery,
                                              const std::vector<QueryRanking>& ranked,
                                              const std::vector<Index>& selected, int top_k,
                                              const std::filesystem::path& out_dir, const nlohmann::json& meta) {
  if (top_k < 1) throw std::invalid_argument("export_ranking_grid: top_k must be >= 1");
  std::filesystem::create_directories(out_dir);
  std::vector<RankingStrip> strips;
  for (Index q : selected) {
    if (q < 0 || q >= static_cast<Index>(queries.size()))
      throw std::out_of_range("export_ranking_grid: query index " + std::to_string(q) + " out of range");
    const auto& qi = queries[static_cast<std::size_t>(q)];
    const auto& r = ranked[static_cast<std::size_t>(q)];
    RankingStrip s;
    s.query = q;
    s.requested_k = top_k;
    for (std::size_t i = 0; i < r.order.size() && static_cast<int>(s.entries.size()) < top_k; ++i) {
      if (!r.valid[i]) continue;
      const auto& g = gallery[static_cast<std::size_t>(r.order[i])];
      s.entries.push_back({r.order[i], g.identity_id, g.camera_id, r.distance[i],
                           g.identity_id == qi.identity_id && g.camera_id != qi.camera_id});
    }
    s.actual_k = static_cast<int>(s.entries.size());
    s.truncated = s.actual_k < top_k;

    MatrixXd strip(qi.height(), (1 + s.actual_k) * qi.width() * 3);
    paste_framed(strip, qi, 0, kBlue);
    for (int k = 0; k < s.actual_k; ++k) {
      const auto& e = s.entries[static_cast<std::size_t>(k)];
      paste_framed(strip, gallery[static_cast<std::size_t>(e.gallery_index)], k + 1, e.match ? kGreen : kRed);
    }
    char stem[32];
    std::snprintf(stem, sizeof stem, "rank_q%04ld", static_cast<long>(q));
    s.image_path = out_dir / (std::string(stem) + ".png");
    s.sidecar_path = out_dir / (std::string(stem) + ".json");
    io::write_png(s.image_path, strip);

    nlohmann::json entries = nlohmann::json::array();
    for (const auto& e : s.entries)
      entries.push_back({{"gallery_index", e.gallery_index},
                         {"identity", e.identity},
                         {"camera", e.camera},
                         {"distance", e.distance},
                         {"match", e.match}});
    nlohmann::json side = {{"query", q},
                           {"query_identity", qi.identity_id},
                           {"query_camera", qi.camera_id},
                           {"requested_k", s.requested_k},
                           {"actual_k", s.actual_k},
                           {"truncated", s.truncated},
                           {"entries", entries},
                           {"image", s.image_path.filename().string()},
                           {"meta", meta}};
    synth::write_file_atomic(s.sidecar_path, side.dump(2) + "\n");
    strips.push_back(std::move(s));
  }
  return strips;
}

}  // namespace dmf::eval
