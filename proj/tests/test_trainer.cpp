#include "dmf/trainer/trainer.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>
#include <sstream>

using namespace dmf;
using namespace dmf::trainer;
using namespace dmf::fixture;
using nlohmann::json;

namespace {

std::vector<json> parse_log(const std::string& text) {
  std::vector<json> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) out.push_back(json::parse(line));
  return out;
}

bool same_values(const ParamStore& a, const ParamStore& b, const std::string& prefix) {
  for (const auto& [path, e] : a) {
    if (path.rfind(prefix, 0) != 0) continue;
    if (!b.contains(path) || b.at(path).value != e.value) return false;
  }
  return true;
}

// Loss of the whole fine-tuning split as one batch, no parameter updates.
double split_loss(const Checkpoint& ck, const synth::Dataset& data, const RunConfig& cfg) {
  const auto ids = label_space(data.finetune_images);
  std::vector<int> labels;
  for (const auto& img : data.finetune_images)
    labels.push_back(static_cast<int>(std::lower_bound(ids.begin(), ids.end(), img.identity_id) - ids.begin()));
  const auto b = image_batch(cfg.model, ck.params, data.finetune_images, labels);
  return model::loss_only(ck.params, cfg.model, b, cfg.train.label_smoothing).l_total;
}

}  // namespace

TEST(PkSampler, DrawsPDistinctIdentitiesWithKDistinctSamples) {
  // Label 3 has a single sample and can never be drawn.
  const std::vector<int> labels{0, 0, 0, 1, 1, 2, 2, 2, 2, 3};
  const PkSampler s(labels, 3, 2);
  EXPECT_EQ(s.eligible_identities(), 3u);
  Rng rng(1);
  for (int t = 0; t < 200; ++t) {
    const auto picks = s.sample(rng);
    ASSERT_EQ(picks.size(), 6u);
    std::set<std::size_t> uniq(picks.begin(), picks.end());
    EXPECT_EQ(uniq.size(), 6u);
    std::map<int, int> per;
    for (auto i : picks) ++per[labels[i]];
    EXPECT_EQ(per.size(), 3u);
    for (auto [id, n] : per) {
      EXPECT_EQ(n, 2);
      EXPECT_NE(id, 3);
    }
  }
}

TEST(PkSampler, InfeasibleRequestsAreRejected) {
  EXPECT_THROW(PkSampler({0, 0, 1, 1}, 3, 2), ConfigError);
  EXPECT_THROW(PkSampler({0, 0, 1, 2}, 2, 2), ConfigError);
  EXPECT_NO_THROW(PkSampler({0, 0, 1, 1}, 2, 2));
}

TEST(Routing, DrawFrequencyMatchesSplitSizes) {
  const auto data = synth::generate_dataset(synth::GeneratorConfig::defaults());
  const double p = image_probability(data.pretrain_images.size(), data.pretrain_captions.size());
  EXPECT_DOUBLE_EQ(p, static_cast<double>(data.pretrain_images.size()) /
                          static_cast<double>(data.pretrain_images.size() + data.pretrain_captions.size()));
  Rng rng(synth::mix_seed(0, 101));
  int images = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) images += draw_modality(rng, p) == fusion::Modality::image;
  EXPECT_NEAR(static_cast<double>(images) / n, p, 0.02);
}

TEST(Pretrain, LogIsOneSingleModalityRecordPerStepWithCosineLr) {
  auto cfg = small_run(0);
  cfg.train.pretrain_iters = 12;
  const auto data = synth::generate_dataset(cfg.data);
  std::ostringstream log;
  StageOptions opt;
  opt.log = &log;
  pretrain(data, cfg, opt);
  const auto recs = parse_log(log.str());
  ASSERT_EQ(recs.size(), 12u);
  std::set<std::string> seen;
  for (std::size_t t = 0; t < recs.size(); ++t) {
    EXPECT_EQ(recs[t].at("iteration"), t);
    EXPECT_EQ(recs[t].at("stage"), "pretrain");
    EXPECT_FALSE(recs[t].contains("wall_time"));
    seen.insert(recs[t].at("modality").get<std::string>());
    const double expect = cfg.train.lr * (1.0 + std::cos(std::numbers::pi * static_cast<double>(t) / 12.0)) / 2.0;
    EXPECT_NEAR(recs[t].at("lr").get<double>(), expect, 1e-15) << t;
    for (const char* k : {"l_id", "l_triplet", "l_total", "active_triplets"})
      EXPECT_TRUE(recs[t].at("loss").contains(k)) << k;
  }
  EXPECT_EQ(seen, (std::set<std::string>{"image", "text"}));
}

TEST(Pretrain, EqualSeedsGiveIdenticalLogsAndCheckpoints) {
  const auto cfg = small_run(4);
  const auto data = synth::generate_dataset(cfg.data);
  std::string logs[2], ckpts[2];
  for (int r = 0; r < 2; ++r) {
    std::ostringstream log;
    StageOptions opt;
    opt.log = &log;
    ckpts[r] = serialize_checkpoint(pretrain(data, cfg, opt));
    logs[r] = log.str();
  }
  EXPECT_EQ(logs[0], logs[1]);
  EXPECT_EQ(ckpts[0], ckpts[1]);
  auto other = cfg;
  other.train.seed = 5;
  EXPECT_NE(serialize_checkpoint(pretrain(data, other)), ckpts[0]);
}

TEST(Pretrain, SingleModalityRunsLeaveTheOtherTranslationUntouched) {
  const auto cfg = small_run(1);
  const auto data = synth::generate_dataset(cfg.data);
  Rng init(cfg.train.seed);
  auto fresh = model::init_model(cfg.model, 6, init);
  round_to_persisted_precision(fresh);  // every stage ends at checkpoint precision
  StageOptions text_only;
  text_only.use_image = false;
  const auto t = pretrain(data, cfg, text_only);
  EXPECT_TRUE(same_values(fresh, t.params, "image/"));
  EXPECT_FALSE(same_values(fresh, t.params, "text/"));
  StageOptions image_only;
  image_only.use_text = false;
  const auto i = pretrain(data, cfg, image_only);
  EXPECT_TRUE(same_values(fresh, i.params, "text/"));
  EXPECT_FALSE(same_values(fresh, i.params, "image/"));
  StageOptions none;
  none.use_image = none.use_text = false;
  EXPECT_THROW(pretrain(data, cfg, none), ConfigError);
}

TEST(Pretrain, LossDescends) {
  auto cfg = small_run(2);
  cfg.train.pretrain_iters = 60;
  const auto data = synth::generate_dataset(cfg.data);
  double first = 0.0;
  StageOptions opt;
  Checkpoint start;
  opt.before_step = [&](long it, const ParamStore& p) {
    if (it == 0) start.params = p;
  };
  const auto end = pretrain(data, cfg, opt);
  // Same fixed batch (the whole pretrain image split) before and after.
  const auto ids = label_space(data.pretrain_images);
  std::vector<int> labels;
  for (const auto& img : data.pretrain_images)
    labels.push_back(static_cast<int>(std::lower_bound(ids.begin(), ids.end(), img.identity_id) - ids.begin()));
  const auto b0 = image_batch(cfg.model, start.params, data.pretrain_images, labels);
  first = model::loss_only(start.params, cfg.model, b0, 0.0).l_total;
  const auto b1 = image_batch(cfg.model, end.params, data.pretrain_images, labels);
  EXPECT_LT(model::loss_only(end.params, cfg.model, b1, 0.0).l_total, first);
}

TEST(Finetune, StepZeroSharesEveryNonClassifierWeight) {
  const auto cfg = small_run(3);
  const auto data = synth::generate_dataset(cfg.data);
  const auto pre = pretrain(data, cfg);
  ParamStore at_zero;
  StageOptions opt;
  opt.before_step = [&](long it, const ParamStore& p) {
    if (it == 0) at_zero = p;
  };
  const auto fine = finetune(data, &pre, cfg, opt);
  ASSERT_EQ(at_zero.size(), pre.params.size());
  for (const auto& [path, e] : pre.params) {
    if (path == backbone::kClassifier) continue;
    EXPECT_EQ(at_zero.at(path).value, e.value) << path;
  }
  EXPECT_EQ(prepare_finetune(&pre, cfg, 5).at(backbone::kClassifier).value,
            at_zero.at(backbone::kClassifier).value);
  // Pretrain M = 6 identities, fine-tune M' = 5.
  EXPECT_EQ(pre.params.at(backbone::kClassifier).value.cols(), 6);
  EXPECT_EQ(fine.params.at(backbone::kClassifier).value.cols(), 5);
  EXPECT_EQ(fine.meta.at("init"), "pretrain");
  for (const auto& [path, e] : at_zero) EXPECT_TRUE(e.velocity.isZero(0.0)) << path;
}

TEST(Finetune, FrozenEncodersAndTextTranslationStayConstant) {
  const auto cfg = small_run(6);
  const auto data = synth::generate_dataset(cfg.data);
  const auto pre = pretrain(data, cfg);
  EXPECT_TRUE(same_values(pre.params, pre.params, "frozen/"));
  Rng init(cfg.train.seed);
  auto fresh = model::init_model(cfg.model, 6, init);
  round_to_persisted_precision(fresh);
  EXPECT_TRUE(same_values(fresh, pre.params, "frozen/"));
  const auto fine = finetune(data, &pre, cfg);
  EXPECT_TRUE(same_values(pre.params, fine.params, "frozen/"));
  EXPECT_TRUE(same_values(pre.params, fine.params, "text/"));
  EXPECT_FALSE(same_values(pre.params, fine.params, "image/"));
  EXPECT_FALSE(same_values(pre.params, fine.params, "backbone/"));
  for (const auto& [path, e] : fine.params) {
    if (path.rfind("text/", 0) == 0) {
      EXPECT_FALSE(e.trainable) << path;
    }
  }
}

TEST(Finetune, RejectsMismatchedInit) {
  const auto cfg = small_run(0);
  const auto data = synth::generate_dataset(cfg.data);
  const auto pre = pretrain(data, cfg);
  auto wider = cfg;
  wider.model = micro_model(16, 3, 2);  // block1 is no longer last and gains output biases
  try {
    finetune(data, &pre, wider);
    FAIL() << "expected a shape error";
  } catch (const CheckpointError& e) {
    EXPECT_EQ(e.kind(), CheckpointError::Kind::shape);
    EXPECT_NE(std::string(e.what()).find("backbone/block1/attn/out/bias"), std::string::npos) << e.what();
  }
}

TEST(Resume, MatchesAnUninterruptedRun) {
  auto cfg = small_run(7);
  cfg.train.pretrain_iters = 8;
  cfg.train.finetune_iters = 6;
  cfg.train.checkpoint_every = 3;
  const auto data = synth::generate_dataset(cfg.data);
  const auto dir = scratch_dir("resume");

  StageOptions full;
  std::ostringstream full_log;
  full.log = &full_log;
  full.checkpoint_path = dir / "pre.ckpt";
  const auto pre = pretrain(data, cfg, full);
  // The last interval checkpoint is at step 6 of 8.
  const auto mid = load_checkpoint(dir / "pre.ckpt");
  EXPECT_EQ(mid.meta.at("iteration"), 6);
  StageOptions resumed;
  std::ostringstream tail_log;
  resumed.log = &tail_log;
  resumed.resume = &mid;
  const auto again = pretrain(data, cfg, resumed);
  EXPECT_EQ(serialize_checkpoint(again), serialize_checkpoint(pre));
  const auto lines = parse_log(full_log.str());
  const auto tail = parse_log(tail_log.str());
  ASSERT_EQ(tail.size(), 2u);
  EXPECT_EQ(tail[0], lines[6]);
  EXPECT_EQ(tail[1], lines[7]);

  full.checkpoint_path = dir / "fine.ckpt";
  const auto fine = finetune(data, &pre, cfg, full);
  const auto fmid = load_checkpoint(dir / "fine.ckpt");
  EXPECT_EQ(fmid.meta.at("iteration"), 3);
  StageOptions fres;
  fres.resume = &fmid;
  EXPECT_EQ(serialize_checkpoint(finetune(data, &pre, cfg, fres)), serialize_checkpoint(fine));

  StageOptions wrong;
  wrong.resume = &fmid;
  EXPECT_THROW(pretrain(data, cfg, wrong), CheckpointError);
}

TEST(Abort, NonFiniteLossStopsAndKeepsLastCheckpoint) {
  auto cfg = small_run(8);
  cfg.train.finetune_iters = 40;
  cfg.train.checkpoint_every = 1;
  auto data = synth::generate_dataset(cfg.data);
  // Poison one identity; the first step that samples it must abort.
  const int bad = data.finetune_images.front().identity_id;
  for (auto& img : data.finetune_images)
    if (img.identity_id == bad) img.pixels(0, 0) = std::nan("");
  const auto path = scratch_dir("abort") / "fine.ckpt";
  StageOptions opt;
  opt.checkpoint_path = path;
  long last_step = -1;
  opt.before_step = [&](long it, const ParamStore&) { last_step = it; };
  try {
    finetune(data, nullptr, cfg, opt);
    FAIL() << "expected an abort";
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("finetune aborted at step " + std::to_string(last_step)), std::string::npos) << msg;
  }
  ASSERT_GE(last_step, 1) << "fixture should fail after at least one good step";
  const auto kept = load_checkpoint(path);
  EXPECT_EQ(kept.meta.at("iteration"), last_step);
  for (const auto& [p, e] : kept.params) EXPECT_TRUE(e.value.allFinite()) << p;
}

TEST(Finetune, PretrainingLowersFinalLossAgainstScratch) {
  std::vector<double> pretrained, scratch;
  for (std::uint64_t seed : {0, 1, 2}) {
    auto cfg = small_run(seed);
    cfg.train.pretrain_iters = 80;
    cfg.train.finetune_iters = 20;
    const auto data = synth::generate_dataset(cfg.data);
    const auto pre = pretrain(data, cfg);
    pretrained.push_back(split_loss(finetune(data, &pre, cfg), data, cfg));
    scratch.push_back(split_loss(finetune(data, nullptr, cfg), data, cfg));
  }
  std::sort(pretrained.begin(), pretrained.end());
  std::sort(scratch.begin(), scratch.end());
  EXPECT_LT(pretrained[1], scratch[1]);
}

TEST(RunConfig, UnknownKeysAndBadValuesAreRejected) {
  EXPECT_THROW(RunConfig::from_json(json::parse(R"({"train": {"lrr": 0.1}})")), ConfigError);
  EXPECT_THROW(RunConfig::from_json(json::parse(R"({"bogus": {}})")), ConfigError);
  EXPECT_THROW(RunConfig::from_json(json::parse(R"({"train": {"iteration_unit": "days"}})")), ConfigError);
  EXPECT_THROW(RunConfig::from_json(json::parse(R"({"train": {"P": 1}})")), ConfigError);
  EXPECT_THROW(RunConfig::from_json(json::parse(R"({"train": {"momentum": 1.0}})")), ConfigError);
  const auto c = RunConfig::from_json(json::parse(R"({"train": {"P": 4, "K": 3, "seed": 9}})"));
  EXPECT_EQ(c.train.batch_size(), 12);
  EXPECT_EQ(c.train.seed, 9u);
  // Round trip through the echo written into checkpoints.
  EXPECT_EQ(to_json(RunConfig::from_json(to_json(c))), to_json(c));
}

TEST(RunConfig, DefaultsMatchTheDocumentedHyperparameters) {
  const RunConfig c;
  EXPECT_EQ(c.train.batch_p * c.train.batch_k, 64);
  EXPECT_EQ(c.train.batch_p, 16);
  EXPECT_EQ(c.train.pretrain_iters, 120);
  EXPECT_EQ(c.train.finetune_iters, 120);
  EXPECT_EQ(c.train.lr, 0.01);
  EXPECT_EQ(c.train.momentum, 0.9);
  EXPECT_EQ(c.train.weight_decay, 1e-4);
  EXPECT_EQ(c.train.steps_for(120, 440), 120 * 7);
  auto s = c.train;
  s.unit = IterationUnit::steps;
  EXPECT_EQ(s.steps_for(120, 440), 120);
}
