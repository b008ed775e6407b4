#include "dmf/eval/attention_export.hpp"
#include "dmf/eval/retrieval.hpp"
#include "dmf/io/png.hpp"
#include "retrieval_oracle.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

using namespace dmf;
using namespace dmf::eval;
using namespace dmf::fixture;

TEST(Rank, HandSetDistancesSortAscending) {
  MatrixXd dist(1, 3);
  dist << 0.5, 0.1, 0.9;
  const auto r = rank_from_distances(dist, {0}, {0}, {1, 2, 3}, {1, 1, 1});
  EXPECT_EQ(r[0].order, (std::vector<Index>{1, 0, 2}));
  EXPECT_EQ(r[0].distance, (std::vector<double>{0.1, 0.5, 0.9}));
}

TEST(Rank, TiesBreakByGalleryIndex) {
  MatrixXd dist(1, 4);
  dist << 0.3, 0.1, 0.3, 0.1;
  const auto r = rank_from_distances(dist, {0}, {0}, {1, 1, 1, 1}, {1, 1, 1, 1});
  EXPECT_EQ(r[0].order, (std::vector<Index>{1, 3, 0, 2}));
}

TEST(Rank, ExactFeatureFromAnotherCameraIsFirst) {
  Rng rng(1);
  FeatureSet g = oracle::random_set(rng, 12, 6, 5, 3);
  FeatureSet q;
  q.features = g.features.row(7);
  q.identity = {g.identity[7]};
  q.camera = {g.camera[7] + 1};
  const auto rep = evaluate(q, g, 5);
  EXPECT_EQ(rank(q, g)[0].order.front(), 7);
  EXPECT_EQ(rep.rank_at(1), 1.0);
}

TEST(Rank, SameIdentitySameCameraIsInvalid) {
  MatrixXd dist(1, 3);
  dist << 0.0, 0.2, 0.4;
  const auto r = rank_from_distances(dist, {5}, {1}, {5, 5, 6}, {1, 2, 1});
  EXPECT_EQ(r[0].valid, (std::vector<char>{0, 1, 1}));
}

TEST(Metrics, AllInvalidGalleryDropsTheQuery) {
  MatrixXd dist(2, 2);
  dist << 0.1, 0.2, 0.2, 0.1;
  const std::vector<int> q_ids{3, 4}, q_cams{0, 0}, g_ids{3, 4}, g_cams{0, 1};
  const auto rep = compute_cmc_map(rank_from_distances(dist, q_ids, q_cams, g_ids, g_cams), q_ids, q_cams, g_ids,
                                   g_cams, 2);
  // Query 0 only sees an entry of its own identity and camera besides a distractor: no relevant item.
  EXPECT_EQ(rep.per_query[0].status, "no_relevant");
  EXPECT_EQ(rep.per_query[1].status, "ok");
  EXPECT_EQ(rep.evaluated, 1);
  EXPECT_EQ(rep.dropped, 1);

  MatrixXd one(1, 2);
  one << 0.1, 0.2;
  const auto empty = compute_cmc_map(rank_from_distances(one, {3}, {0}, {3, 3}, {0, 0}), {3}, {0}, {3, 3}, {0, 0}, 2);
  EXPECT_EQ(empty.per_query[0].status, "empty_valid_gallery");
  EXPECT_EQ(empty.per_query[0].valid_gallery, 0);
  EXPECT_EQ(empty.evaluated, 0);
  EXPECT_EQ(empty.map, 0.0);
}

TEST(Metrics, ApOfHitsAtRanksOneAndThree) {
  MatrixXd dist(1, 4);
  dist << 0.1, 0.2, 0.3, 0.4;
  const std::vector<int> g_ids{1, 2, 1, 3}, g_cams{1, 1, 1, 1};
  const auto rep = compute_cmc_map(rank_from_distances(dist, {1}, {0}, g_ids, g_cams), {1}, {0}, g_ids, g_cams, 4);
  EXPECT_NEAR(rep.map, 5.0 / 6.0, 1e-15);
  EXPECT_EQ(rep.cmc, (std::vector<double>{1, 1, 1, 1}));
}

TEST(Metrics, PerfectRankingAndLastRank) {
  MatrixXd dist(1, 5);
  dist << 0.1, 0.2, 0.3, 0.4, 0.5;
  std::vector<int> g_ids{1, 1, 2, 3, 4}, g_cams(5, 1);
  auto rep = compute_cmc_map(rank_from_distances(dist, {1}, {0}, g_ids, g_cams), {1}, {0}, g_ids, g_cams, 5);
  EXPECT_EQ(rep.map, 1.0);
  EXPECT_EQ(rep.rank_at(1), 1.0);

  g_ids = {2, 3, 4, 5, 1};
  rep = compute_cmc_map(rank_from_distances(dist, {1}, {0}, g_ids, g_cams), {1}, {0}, g_ids, g_cams, 6);
  EXPECT_EQ(rep.cmc, (std::vector<double>{0, 0, 0, 0, 1, 1}));
  EXPECT_NEAR(rep.map, 0.2, 1e-15);
}

TEST(Metrics, MatchesBruteForceOnRandomSets) {
  Rng rng(2);
  for (int t = 0; t < 100; ++t) {
    const Index nq = 1 + static_cast<Index>(rng.index(20)), ng = 1 + static_cast<Index>(rng.index(200));
    const int ids = 1 + static_cast<int>(rng.index(12)), cams = 1 + static_cast<int>(rng.index(4));
    const int max_rank = 1 + static_cast<int>(rng.index(25));
    const auto q = oracle::random_set(rng, nq, 5, ids, cams);
    const auto g = oracle::random_set(rng, ng, 5, ids, cams);
    const auto rep = evaluate(q, g, max_rank);
    const auto ref = oracle::brute_force(q, g, max_rank);
    ASSERT_EQ(rep.evaluated, ref.evaluated) << t;
    EXPECT_EQ(rep.dropped, ref.dropped) << t;
    EXPECT_NEAR(rep.map, ref.map, 1e-12) << t;
    for (int k = 0; k < max_rank; ++k) EXPECT_NEAR(rep.cmc[k], ref.cmc[k], 1e-12) << t << " k=" << k + 1;
    for (Index i = 0; i < nq; ++i) EXPECT_NEAR(rep.per_query[i].ap, ref.ap[i], 1e-12) << t;
    for (int k = 1; k < max_rank; ++k) EXPECT_LE(rep.cmc[k - 1], rep.cmc[k]);
    EXPECT_GE(rep.map, 0.0);
    EXPECT_LE(rep.map, 1.0);
  }
}

TEST(Metrics, InvariantToGalleryOrderAndFeatureScale) {
  Rng rng(3);
  const auto q = oracle::random_set(rng, 15, 6, 6, 3);
  const auto g = oracle::random_set(rng, 120, 6, 6, 3);
  const auto base = evaluate(q, g, 20);

  std::vector<Index> perm(120);
  std::iota(perm.begin(), perm.end(), 0);
  for (Index i = 119; i > 0; --i) std::swap(perm[i], perm[rng.index(static_cast<std::size_t>(i + 1))]);
  FeatureSet gp = g;
  for (Index i = 0; i < 120; ++i) {
    gp.features.row(i) = g.features.row(perm[i]);
    gp.identity[i] = g.identity[perm[i]];
    gp.camera[i] = g.camera[perm[i]];
  }
  const auto permuted = evaluate(q, gp, 20);
  EXPECT_NEAR(permuted.map, base.map, 1e-12);
  EXPECT_EQ(permuted.cmc, base.cmc);

  FeatureSet qs = q, gs = g;
  qs.features *= 3.7;
  gs.features *= 3.7;
  const auto scaled = evaluate(qs, gs, 20);
  EXPECT_EQ(scaled.map, base.map);
  EXPECT_EQ(scaled.cmc, base.cmc);
  for (Index i = 0; i < 15; ++i) EXPECT_EQ(rank(qs, gs)[i].order, rank(q, g)[i].order);
}

TEST(Features, UnitNormDeterministicOnePerImage) {
  const auto cfg = micro_model();
  Rng rng(4);
  auto p = model::init_model(cfg, 3, rng);
  scramble(p, rng, 0.05);
  std::vector<int> ids(70);
  std::iota(ids.begin(), ids.end(), 0);
  const auto imgs = random_images(ids, 24, 12, rng);
  const auto a = extract_features(imgs, p, cfg);
  const auto b = extract_features(imgs, p, cfg);
  ASSERT_EQ(a.size(), 70);
  EXPECT_EQ(a.features, b.features);
  EXPECT_EQ(a.identity, ids);
  for (Index r = 0; r < a.size(); ++r) EXPECT_NEAR(a.features.row(r).norm(), 1.0, 1e-12);
  // Chunking does not change a row.
  const auto single = extract_features({imgs[40]}, p, cfg);
  EXPECT_LT((single.features.row(0) - a.features.row(40)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(RankingGrid, LayoutAndBordersAgreeWithRelevance) {
  Rng rng(5);
  const std::vector<int> g_ids{0, 1, 0, 2, 0, 1};
  auto gallery = random_images(g_ids, 24, 12, rng);
  for (std::size_t i = 0; i < gallery.size(); ++i) gallery[i].camera_id = static_cast<int>(i % 3);
  auto queries = random_images({0, 1}, 24, 12, rng);
  queries[0].camera_id = 0;
  queries[1].camera_id = 1;
  FeatureSet qf, gf;
  qf.features = rng.truncated_normal_matrix(2, 4, 1.0);
  gf.features = rng.truncated_normal_matrix(6, 4, 1.0);
  for (const auto& i : queries) qf.identity.push_back(i.identity_id), qf.camera.push_back(i.camera_id);
  for (const auto& i : gallery) gf.identity.push_back(i.identity_id), gf.camera.push_back(i.camera_id);
  const auto ranked = rank(qf, gf);
  const auto dir = scratch_dir("grid");
  const auto strips = export_ranking_grid(queries, gallery, ranked, {0, 1}, 15, dir, {{"checkpoint", "x"}});
  ASSERT_EQ(strips.size(), 2u);
  for (const auto& s : strips) {
    const auto& q = queries[static_cast<std::size_t>(s.query)];
    // Six gallery images cannot fill 15 slots.
    EXPECT_TRUE(s.truncated);
    const MatrixXd png = io::read_png(s.image_path);
    EXPECT_EQ(png.rows(), 24);
    EXPECT_EQ(png.cols() / 3, (1 + s.actual_k) * 12);
    EXPECT_EQ(png(0, 2), 1.0);  // blue query frame
    EXPECT_EQ(png(0, 0), 0.0);
    Index slot = 1;
    for (std::size_t i = 0; i < ranked[s.query].order.size(); ++i) {
      const Index g = ranked[s.query].order[i];
      const auto& gi = gallery[static_cast<std::size_t>(g)];
      if (gi.identity_id == q.identity_id && gi.camera_id == q.camera_id) continue;
      const bool match = gi.identity_id == q.identity_id;
      const Index x0 = slot * 12 * 3;
      EXPECT_EQ(png(0, x0 + 0), match ? 0.0 : 1.0) << "slot " << slot;
      EXPECT_EQ(png(0, x0 + 1), match ? 1.0 : 0.0) << "slot " << slot;
      EXPECT_EQ(s.entries[static_cast<std::size_t>(slot - 1)].gallery_index, g);
      // Interior pixels are the gallery image itself.
      EXPECT_NEAR(png(10, x0 + 3 * 5), gi.pixels(10, 3 * 5), 0.5 / 255 + 1e-12);
      ++slot;
    }
    EXPECT_EQ(slot - 1, s.actual_k);
    const auto side = nlohmann::json::parse(slurp(s.sidecar_path));
    EXPECT_EQ(side.at("actual_k"), s.actual_k);
    EXPECT_EQ(side.at("requested_k"), 15);
    EXPECT_EQ(side.at("truncated"), true);
    EXPECT_EQ(side.at("meta").at("checkpoint"), "x");
  }
  EXPECT_THROW(export_ranking_grid(queries, gallery, ranked, {2}, 15, dir, {}), std::out_of_range);
  EXPECT_THROW(export_ranking_grid(queries, gallery, ranked, {0}, 0, dir, {}), std::invalid_argument);
}

TEST(Report, JsonAndTable) {
  Rng rng(6);
  const auto rep = evaluate(oracle::random_set(rng, 10, 4, 4, 2), oracle::random_set(rng, 50, 4, 4, 2), 20);
  const auto j = to_json(rep);
  EXPECT_EQ(j.at("cmc").size(), 20u);
  EXPECT_EQ(j.at("rank1"), rep.rank_at(1));
  EXPECT_EQ(j.at("queries_evaluated"), rep.evaluated);
  EXPECT_EQ(j.at("per_query").size(), 10u);
  const std::string row = format_table_row("Base.", rep);
  EXPECT_EQ(row.rfind("Base.", 0), 0u);
  EXPECT_EQ(row.size(), format_table_header().size());
}

TEST(Attention, DumpRoundTripAndClsMap) {
  Rng rng(7);
  AttentionDump d;
  d.layer = 1;
  d.sample = "query_0003";
  for (int h = 0; h < 3; ++h) d.heads.push_back(rng.truncated_normal_matrix(19, 19, 1.0).cast<float>().cast<double>());
  const auto dir = scratch_dir("attn");
  write_attention(d, dir / "a.attn");
  const std::string bytes = slurp(dir / "a.attn");
  EXPECT_EQ(bytes.rfind("DMFATTN 1\n", 0), 0u);
  std::size_t lines = 0, at = 0;
  while (lines < 8) at = bytes.find('\n', at) + 1, ++lines;
  EXPECT_EQ(bytes.size() - at, 3u * 19 * 19 * 4);
  const auto back = read_attention(dir / "a.attn");
  EXPECT_EQ(back.layer, 1);
  EXPECT_EQ(back.sample, "query_0003");
  ASSERT_EQ(back.heads.size(), 3u);
  for (int h = 0; h < 3; ++h) EXPECT_EQ(back.heads[h], d.heads[h]);

  MatrixXd a = MatrixXd::Zero(7, 7);
  for (int j = 0; j < 7; ++j) a(0, j) = j;
  const MatrixXd m = cls_patch_map(a, 3, 2);
  ASSERT_EQ(m.rows(), 3);
  ASSERT_EQ(m.cols(), 2);
  EXPECT_EQ(m(0, 0), 1);
  EXPECT_EQ(m(0, 1), 2);
  EXPECT_EQ(m(2, 1), 6);
  EXPECT_THROW(cls_patch_map(a, 2, 2), std::exception);

  write_pgm(m, dir / "m.pgm");
  const std::string pgm = slurp(dir / "m.pgm");
  EXPECT_EQ(pgm.rfind("P5\n2 3\n255\n", 0), 0u);
  EXPECT_EQ(static_cast<unsigned char>(pgm.back()), 255);
}
