// Acceptance checks, one PASS/FAIL line per criterion. With arguments, runs
// only the listed criteria (e.g. `acceptance 3 5`).
#include "dmf/eval/retrieval.hpp"
#include "dmf/numerics/grad_check.hpp"
#include "dmf/trainer/ablation.hpp"
#include "retrieval_oracle.hpp"
#include "test_support.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <sys/wait.h>

using namespace dmf;
using namespace dmf::fixture;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "] ";
    }
  }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Gradient check of the full loss on a 2-identity batch through one modality.
void gradients(Outcome& o) {
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<int> labels{0, 0, 1, 1};
  double worst = 0.0;
  int coords = 0;
  for (auto [dim, depth] : {std::pair{8, 1}, std::pair{16, 2}})
    for (auto m : {fusion::Modality::image, fusion::Modality::text}) {
      const auto cfg = micro_model(dim, depth, 2);
      Rng rng(static_cast<std::uint64_t>(dim * 10 + depth));
      auto p = model::init_model(cfg, 2, rng);
      scramble(p, rng, 0.1);
      model::Batch b;
      if (m == fusion::Modality::image) {
        b = image_batch(cfg, p, random_images(labels, 24, 12, rng), labels);
      } else {
        b = text_batch(cfg, p, captions_for(labels, 3), labels);
      }
      auto fg = [&](ParamStore& s) { return model::loss_and_grad(s, cfg, b, 0.0, false).l_total; };
      auto f = [&](ParamStore& s) { return model::loss_only(s, cfg, b, 0.0).l_total; };
      const auto r = grad_check(fg, f, p, 1e-5, 400, 7);
      coords += r.coordinates;
      worst = std::max(worst, r.max_rel_error);
      o.require(r.coordinates >= 200, "fewer than 200 coordinates");
      o.require(r.max_rel_error < 1e-4, std::string(fusion::modality_name(m)) + " D=" + std::to_string(dim) + " " +
                                            r.worst_path + " rel " + std::to_string(r.max_rel_error));
    }
  const double t = seconds_since(t0);
  o.require(t < 60.0, "runtime over one minute");
  o.detail << "max rel error " << worst << " over " << coords << " coordinates, " << t << " s";
}

void loss_identities(Outcome& o) {
  MatrixXd g(4, 2);
  g << 0, 0, 1, 0, 0, 1, 1, 1;
  const double tri = losses::triplet_loss_batch_hard(g, {0, 0, 1, 1}).loss;
  o.require(std::abs(tri - std::log(2.0)) <= 1e-9, "triplet ln 2");
  double id_err = 0.0;
  for (int m : {2, 4, 7, 30}) {
    const double id = losses::id_loss(MatrixXd::Constant(5, m, 1.3), {0, 1, 0, 1, 1}).loss;
    id_err = std::max(id_err, std::abs(id - std::log(static_cast<double>(m))));
  }
  o.require(id_err <= 1e-9, "ID ln M");
  Rng rng(11);
  double sum_err = 0.0;
  for (int t = 0; t < 200; ++t) {
    const int p = 2 + static_cast<int>(rng.index(5)), k = 2 + static_cast<int>(rng.index(4));
    std::vector<int> labels;
    for (int i = 0; i < p; ++i)
      for (int j = 0; j < k; ++j) labels.push_back(i);
    const MatrixXd f = rng.truncated_normal_matrix(p * k, 8, 1.0), z = rng.truncated_normal_matrix(p * k, p, 3.0);
    const auto r = losses::total_loss({f, labels}, z, 0.0).report;
    const double recomputed =
        losses::id_loss(z, labels).loss + losses::triplet_loss_batch_hard(f, labels).loss;
    sum_err = std::max(sum_err, std::abs(r.l_total - recomputed));
  }
  o.require(sum_err <= 1e-12, "l_total recomputation");
  o.detail << "|triplet-ln2|=" << std::abs(tri - std::log(2.0)) << " max|id-lnM|=" << id_err
           << " max|total-sum|=" << sum_err;
}

void metric_oracle(Outcome& o) {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(12);
  double worst = 0.0;
  Index dropped = 0, with_exclusions = 0;
  for (int t = 0; t < 100; ++t) {
    const Index nq = 1 + static_cast<Index>(rng.index(20)), ng = 1 + static_cast<Index>(rng.index(200));
    const int ids = 1 + static_cast<int>(rng.index(10)), cams = 1 + static_cast<int>(rng.index(4));
    const auto q = oracle::random_set(rng, nq, 6, ids, cams);
    const auto g = oracle::random_set(rng, ng, 6, ids, cams);
    const auto rep = eval::evaluate(q, g, 20);
    const auto ref = oracle::brute_force(q, g, 20);
    if (rep.evaluated != ref.evaluated || rep.dropped != ref.dropped) {
      o.require(false, "evaluated/dropped counts differ in set " + std::to_string(t));
      continue;
    }
    worst = std::max(worst, std::abs(rep.map - ref.map));
    for (int k = 0; k < 20; ++k) worst = std::max(worst, std::abs(rep.cmc[k] - ref.cmc[k]));
    dropped += rep.dropped;
    for (const auto& r : eval::rank(q, g))
      with_exclusions += std::count(r.valid.begin(), r.valid.end(), 0) > 0;
  }
  o.require(worst <= 1e-12, "metric mismatch");
  o.require(with_exclusions > 0, "no same-id/same-cam exclusions exercised");
  const double t = seconds_since(t0);
  o.require(t < 60.0, "runtime over one minute");
  o.detail << "max |diff| " << worst << ", " << with_exclusions << " queries with exclusions, " << dropped
           << " dropped, " << t << " s";
}

void shared_space(Outcome& o) {
  trainer::RunConfig cfg;
  cfg.train.unit = trainer::IterationUnit::steps;
  cfg.train.pretrain_iters = 1000;
  cfg.finalize();
  const auto data = synth::generate_dataset(cfg.data);
  Rng rng(0);
  const auto params = model::init_model(cfg.model, 40, rng);
  const auto img = fusion::image_translate(data.pretrain_images.front(), cfg.model.tokenizer, params);
  const auto txt = fusion::text_translate(data.pretrain_captions.front(), cfg.model.tokenizer, params);
  const Index n1 = cfg.model.tokenizer.tokens(), d = cfg.model.tokenizer.model_dim;
  o.require(img.tokens.rows() == n1 && img.tokens.cols() == d, "image sequence shape");
  o.require(txt.tokens.rows() == n1 && txt.tokens.cols() == d, "text sequence shape");
  for (const char* name : {"/cls", "/pos"}) {
    const std::string a = std::string("image") + name, b = std::string("text") + name;
    o.require(params.contains(a) && params.contains(b) && &params.at(a) != &params.at(b), "distinct " + a + " / " + b);
  }

  std::map<std::string, MatrixXd> frozen;
  long steps = 0, changed = 0;
  trainer::StageOptions opt;
  opt.before_step = [&](long it, const ParamStore& p) {
    for (const auto& [path, e] : p) {
      if (path.rfind("frozen/", 0) != 0) continue;
      if (it == 0) frozen[path] = e.value;
      else changed += frozen.at(path) != e.value;
    }
    steps = it + 1;
  };
  const auto ck = trainer::pretrain(data, cfg, opt);
  // The final state after step 999 is the returned checkpoint, rounded for persistence.
  for (auto& [path, v] : frozen) {
    const MatrixXd rounded = v.cast<float>().cast<double>();
    changed += ck.params.at(path).value != rounded;
  }
  o.require(frozen.size() == 2, "expected two frozen encoders");
  o.require(steps == 1000 && changed == 0, "frozen encoders changed");
  o.detail << "sequences " << n1 << "x" << d << " for both modalities; " << frozen.size()
           << " frozen encoders unchanged over " << steps << " steps";
}

void tiny_overfit(Outcome& o) {
  const auto t0 = std::chrono::steady_clock::now();
  trainer::RunConfig cfg;
  cfg.data.finetune_identities = 8;
  cfg.data.finetune_images_per_identity = 8;
  cfg.train.unit = trainer::IterationUnit::steps;
  cfg.train.finetune_iters = 2000;
  cfg.train.batch_p = 8;
  cfg.finalize();
  auto data = synth::generate_dataset(cfg.data);
  // Held-in split of the same identities: three cameras by position within
  // each identity; the first image of each (identity, camera) is a query.
  std::map<int, int> seen;
  std::map<std::pair<int, int>, bool> has_query;
  std::vector<synth::PersonImage> queries, gallery;
  for (auto img : data.finetune_images) {
    img.camera_id = seen[img.identity_id]++ % 3;
    auto& q = has_query[{img.identity_id, img.camera_id}];
    (q ? gallery : queries).push_back(img);
    q = true;
  }
  const auto ck = trainer::finetune(data, nullptr, cfg);
  const auto rep = eval::evaluate(eval::extract_features(queries, ck.params, cfg.model),
                                  eval::extract_features(gallery, ck.params, cfg.model), 20);
  const double t = seconds_since(t0);
  o.require(rep.rank_at(1) == 1.0, "Rank-1 below 1");
  o.require(rep.map >= 0.95, "mAP below 0.95");
  o.require(t < 600.0, "runtime over ten minutes");
  o.detail << ck.meta.at("iteration").get<long>() << " steps, " << queries.size() << " queries / " << gallery.size()
           << " gallery, Rank-1 " << rep.rank_at(1) << ", mAP " << rep.map << ", " << t << " s";
}

void ablation_trend(Outcome& o) {
  const auto t0 = std::chrono::steady_clock::now();
  trainer::RunConfig cfg;
  cfg.finalize();
  const auto data = synth::generate_dataset(cfg.data);
  const auto result = trainer::run_ablation(data, cfg, 3, [&](const std::string& line) {
    std::cerr << "  [" << static_cast<long>(seconds_since(t0)) << " s] " << line << std::endl;
  });
  std::cerr << trainer::format_table(result);
  std::map<std::string, double> m;
  for (const auto& row : result.rows) m[row.method] = row.median_map();
  const double base = m.at("Base."), text = m.at("w/ Text"), image = m.at("w/ Image"), both = m.at("w/ Text&Image");
  o.require(base <= text, "Base. > w/ Text");
  o.require(base <= image, "Base. > w/ Image");
  o.require(both >= std::max(text, image) - 0.01, "w/ Text&Image below max(Text, Image) - 0.01");
  const double t = seconds_since(t0);
  o.require(t < 3600.0, "runtime over 60 minutes");
  char buf[200];
  std::snprintf(buf, sizeof buf, "median mAP Base. %.4f, w/ Text %.4f, w/ Image %.4f, w/ Text&Image %.4f, %.0f s",
                base, text, image, both, t);
  o.detail << buf;
}

void weight_sharing(Outcome& o) {
  trainer::RunConfig cfg;
  cfg.train.unit = trainer::IterationUnit::steps;
  cfg.train.pretrain_iters = 20;
  cfg.train.finetune_iters = 1;
  cfg.finalize();
  const auto data = synth::generate_dataset(cfg.data);
  const auto pre = trainer::pretrain(data, cfg);
  ParamStore at_zero;
  trainer::StageOptions opt;
  opt.before_step = [&](long it, const ParamStore& p) {
    if (it == 0) at_zero = p;
  };
  trainer::finetune(data, &pre, cfg, opt);
  long compared = 0, differing = 0;
  for (const auto& [path, e] : pre.params) {
    if (path == backbone::kClassifier) continue;
    ++compared;
    differing += !at_zero.contains(path) || at_zero.at(path).value != e.value;
  }
  const Index m = pre.params.at(backbone::kClassifier).value.cols();
  const Index m2 = at_zero.at(backbone::kClassifier).value.cols();
  o.require(differing == 0, std::to_string(differing) + " parameters differ");
  o.require(m == 40 && m2 == 30, "classifier dimensions");
  o.detail << compared << " non-classifier parameters bitwise equal at step 0; classifier " << m << " -> " << m2;
}

struct Run {
  int code;
  std::string out;
};

Run cli(const std::string& args, const fs::path& dir) {
  const auto o = dir / "out.txt";
  const std::string cmd = std::string(DMF_CLI_PATH) + " " + args + " >" + o.string() + " 2>/dev/null";
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(o)};
}

std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file() && e.path().filename() != "out.txt")
      files[fs::relative(e.path(), root).string()] = slurp(e.path());
  return files;
}

void determinism(Outcome& o) {
  const char* config = R"({
    "data": {"image_height": 24, "image_width": 12,
             "pretrain": {"identities": 6, "images_per_identity": 5},
             "finetune": {"identities": 5, "images_per_identity": 4},
             "test": {"identities": 4, "images_per_camera": 2}},
    "model": {"patch_h": 4, "patch_w": 4, "model_dim": 16, "image_enc_dim": 16, "text_enc_dim": 8, "depth": 2,
              "heads": 2},
    "train": {"pretrain_iters": 8, "finetune_iters": 6, "iteration_unit": "steps", "P": 3, "K": 2,
              "checkpoint_every": 3},
    "eval": {"max_rank": 5, "top_k": 4}})";
  std::map<std::string, std::string> runs[2];
  std::vector<std::string> commands;
  for (int r = 0; r < 2; ++r) {
    const auto dir = scratch_dir("acceptance_det" + std::to_string(r));
    std::ofstream(dir / "cfg.json") << config;
    auto p = [&](const std::string& n) { return (dir / n).string(); };
    commands = {
        "gen-data --config " + p("cfg.json") + " --out " + p("data"),
        "pretrain --config " + p("cfg.json") + " --data " + p("data") + " --out " + p("pre.ckpt"),
        "pretrain --config " + p("cfg.json") + " --data " + p("data") + " --no-text --out " + p("pre_img.ckpt"),
        "pretrain --config " + p("cfg.json") + " --data " + p("data") + " --no-image --out " + p("pre_txt.ckpt"),
        "finetune --config " + p("cfg.json") + " --data " + p("data") + " --init " + p("pre.ckpt") + " --out " +
            p("fine.ckpt"),
        "finetune --config " + p("cfg.json") + " --data " + p("data") + " --from-scratch --out " + p("scratch.ckpt"),
        "eval --data " + p("data") + " --ckpt " + p("fine.ckpt") + " --report " + p("report.json"),
        "rank --ckpt " + p("fine.ckpt") + " --data " + p("data") + " --queries all --out " + p("rank"),
        "attn-dump",  // needs a query image path, filled in once gen-data has run
        "ablation --config " + p("cfg.json") + " --data " + p("data") + " --seeds 2 --out " + p("ablation"),
    };
    for (const auto& c : commands) {
      std::string cmd = c;
      if (c == "attn-dump") {
        const auto manifest = synth::load_manifest(p("data"));
        const auto& rows = manifest.split(synth::kSplitQueryImages);
        cmd = "attn-dump --ckpt " + p("fine.ckpt") + " --image " + (dir / "data" / rows.front().file).string() +
              " --layer 1 --pgm --out " + p("attn");
      }
      const auto res = cli(cmd, dir);
      o.require(res.code == 0, "exit " + std::to_string(res.code) + " for " + cmd.substr(0, cmd.find(' ')));
      runs[r]["stdout/" + std::to_string(&c - commands.data())] = res.out;
    }
    for (auto& [k, v] : tree(dir)) runs[r][k] = v;
  }
  long differing = 0;
  for (const auto& [k, v] : runs[0]) {
    const auto it = runs[1].find(k);
    // Paths printed to stdout name the run directory; compare them with it stripped.
    std::string a = v, b = it == runs[1].end() ? "" : it->second;
    if (k.rfind("stdout/", 0) == 0) {
      for (auto* s : {&a, &b})
        for (const char* d : {"acceptance_det0", "acceptance_det1"})
          for (auto pos = s->find(d); pos != std::string::npos; pos = s->find(d)) s->replace(pos, std::strlen(d), "X");
    }
    if (it == runs[1].end() || a != b) {
      ++differing;
      o.detail << " differs: " << k;
    }
  }
  o.require(runs[0].size() == runs[1].size() && differing == 0, "artifacts differ between runs");
  o.detail << commands.size() << " subcommands run twice, " << runs[0].size() << " artifacts byte-identical";
}

void checkpoint_round_trip(Outcome& o) {
  trainer::RunConfig cfg;
  cfg.finalize();
  Rng rng(0);
  trainer::Checkpoint ck;
  ck.params = model::init_model(cfg.model, 40, rng);
  scramble(ck.params, rng, 0.01);
  ck.meta = {{"stage", "pretrain"}, {"config", trainer::to_json(cfg)}};
  const auto dir = scratch_dir("acceptance_ckpt");
  trainer::save_checkpoint(ck, dir / "a.ckpt");
  const auto loaded = trainer::load_checkpoint(dir / "a.ckpt");
  trainer::save_checkpoint(loaded, dir / "b.ckpt");
  const std::string a = slurp(dir / "a.ckpt"), b = slurp(dir / "b.ckpt");
  o.require(a == b, "save-load-save bytes differ");

  auto other = cfg;
  other.model.tokenizer.model_dim = 32;
  other.model.transformer.heads = 4;
  other.finalize();
  Rng rng2(0);
  std::string message;
  try {
    trainer::validate_against(loaded.params, model::init_model(other.model, 40, rng2));
  } catch (const trainer::CheckpointError& e) {
    if (e.kind() == trainer::CheckpointError::Kind::shape) message = e.what();
  }
  o.require(message.find("'backbone/") != std::string::npos || message.find("'head/") != std::string::npos ||
                message.find("'image/") != std::string::npos || message.find("'text/") != std::string::npos,
            "shape mismatch not reported with a parameter path");
  o.detail << a.size() << " bytes identical after save-load-save; mismatch: " << message;
}

struct Criterion {
  int id;
  const char* name;
  std::function<void(Outcome&)> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all = {
      {1, "gradient correctness", gradients},
      {2, "loss unit identities", loss_identities},
      {3, "metric oracle equivalence", metric_oracle},
      {4, "shared-space invariant", shared_space},
      {5, "tiny-overfit sanity", tiny_overfit},
      {6, "ablation trend", ablation_trend},
      {7, "weight-sharing contract", weight_sharing},
      {8, "determinism", determinism},
      {9, "checkpoint round-trip", checkpoint_round_trip},
  };
  std::vector<int> selected;
  for (int i = 1; i < argc; ++i) selected.push_back(std::atoi(argv[i]));
  bool all_pass = true;
  for (const auto& c : all) {
    if (!selected.empty() && std::find(selected.begin(), selected.end(), c.id) == selected.end()) continue;
    Outcome o;
    try {
      c.run(o);
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << " [exception: " << e.what() << "]";
    }
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << c.id << " (" << c.name << "): " << o.detail.str()
              << std::endl;
    all_pass = all_pass && o.pass;
  }
  return all_pass ? 0 : 1;
}
