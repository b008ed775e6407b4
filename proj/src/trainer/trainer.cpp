#include "dmf/trainer/trainer.hpp"

#include "dmf/numerics/optimizer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>

namespace dmf::trainer {

namespace {

using fusion::Modality;
using nlohmann::json;

constexpr std::uint64_t kPretrainStream = 101, kFinetuneStream = 202;
constexpr const char* kStagePretrain = "pretrain";
constexpr const char* kStageFinetune = "finetune";

std::map<int, int> label_map(const std::vector<int>& ids) {
  std::map<int, int> m;
  for (std::size_t i = 0; i < ids.size(); ++i) m[ids[i]] = static_cast<int>(i);
  return m;
}

SampleSource image_source(const std::vector<synth::PersonImage>& images, const std::map<int, int>& labels,
                          const model::ModelConfig& mc, const ParamStore& params) {
  SampleSource s;
  s.modality = Modality::image;
  for (const auto& img : images) {
    s.encoded.push_back(fusion::encode_image(img, mc.tokenizer, params));
    s.labels.push_back(labels.at(img.identity_id));
  }
  return s;
}

SampleSource text_source(const std::vector<synth::Caption>& caps, const std::map<int, int>& labels,
                         const model::ModelConfig& mc, const ParamStore& params) {
  SampleSource s;
  s.modality = Modality::text;
  for (const auto& c : caps) {
    s.encoded.push_back(fusion::encode_caption(c, mc.tokenizer, params));
    s.labels.push_back(labels.at(c.identity_id));
  }
  return s;
}

json base_meta(const RunConfig& cfg, const char* stage, const std::vector<int>& label_ids) {
  return {{"stage", stage},
          {"seed", cfg.train.seed},
          {"config", to_json(cfg)},
          {"label_ids", label_ids},
          {"iteration", 0},
          {"total_steps", 0},
          {"rng_state", ""}};
}

struct StageRun {
  const char* stage;
  std::vector<const SampleSource*> sources;
  double p_image = 1.0;
  long total_steps = 0;
};

// Shared optimizer loop of both stages. `ckpt` carries params and meta in
// and out; meta.iteration counts completed steps.
void run_stage(Checkpoint& ckpt, const StageRun& run, const RunConfig& cfg, Rng& rng, const StageOptions& opt) {
  const auto& tc = cfg.train;
  std::vector<PkSampler> samplers;
  for (const auto* s : run.sources) samplers.emplace_back(s->labels, tc.batch_p, tc.batch_k);
  const CosineSchedule schedule(tc.lr, run.total_steps);
  const auto t0 = std::chrono::steady_clock::now();
  long iter = ckpt.meta.at("iteration").get<long>();
  ckpt.meta["total_steps"] = run.total_steps;

  for (; iter < run.total_steps; ++iter) {
    std::size_t which = 0;
    if (run.sources.size() == 2) which = draw_modality(rng, run.p_image) == Modality::image ? 0 : 1;
    const SampleSource& src = *run.sources[which];
    const model::Batch batch = make_batch(src, samplers[which].sample(rng));
    if (opt.before_step) opt.before_step(iter, ckpt.params);

    const double lr = schedule(iter);
    losses::LossReport report;
    try {
      report = model::loss_and_grad(ckpt.params, cfg.model, batch, tc.label_smoothing, true,
                                    cfg.model.transformer.dropout > 0.0 ? &rng : nullptr);
      sgd_step(ckpt.params, lr, tc.momentum, tc.weight_decay);
    } catch (const NumericError& e) {
      throw NumericError(std::string(run.stage) + " aborted at step " + std::to_string(iter) + ": " + e.what());
    }

    if (opt.log) {
      json rec = {{"iteration", iter},
                  {"stage", run.stage},
                  {"modality", fusion::modality_name(src.modality)},
                  {"lr", lr},
                  {"loss", losses::to_json(report)}};
      if (tc.log_wall_time)
        rec["wall_time"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      *opt.log << rec.dump() << "\n";
    }

    const long done = iter + 1;
    if (tc.checkpoint_every > 0 && opt.checkpoint_path && done % tc.checkpoint_every == 0 && done < run.total_steps) {
      ckpt.meta["iteration"] = done;
      ckpt.meta["rng_state"] = rng.state();
      round_to_persisted_precision(ckpt.params);
      save_checkpoint(ckpt, *opt.checkpoint_path);
    }
  }
  ckpt.meta["iteration"] = run.total_steps;
  ckpt.meta["rng_state"] = rng.state();
  round_to_persisted_precision(ckpt.params);
  if (opt.log) opt.log->flush();
}

void restore_resume(Checkpoint& ckpt, Rng& rng, const StageOptions& opt, const char* stage) {
  if (!opt.resume) return;
  if (opt.resume->meta.value("stage", "") != stage)
    throw CheckpointError(CheckpointError::Kind::format,
                          std::string("cannot resume ") + stage + " from a '" + opt.resume->meta.value("stage", "") +
                              "' checkpoint");
  validate_against(opt.resume->params, ckpt.params);
  ckpt.params = opt.resume->params;
  ckpt.meta["iteration"] = opt.resume->meta.at("iteration");
  rng.set_state(opt.resume->meta.at("rng_state").get<std::string>());
}

}  // namespace

PkSampler::PkSampler(const std::vector<int>& labels, int p, int k) : p_(p), k_(k) {
  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < labels.size(); ++i) groups[labels[i]].push_back(i);
  for (auto& [_, idx] : groups)
    if (static_cast<int>(idx.size()) >= k) eligible_.push_back(std::move(idx));
  if (static_cast<int>(eligible_.size()) < p)
    throw ConfigError("infeasible P x K sampling: only " + std::to_string(eligible_.size()) +
                      " identities have at least K=" + std::to_string(k) + " samples, P=" + std::to_string(p));
}

std::vector<std::size_t> PkSampler::sample(Rng& rng) const {
  std::vector<std::size_t> out;
  out.reserve(static_cast<std::size_t>(p_ * k_));
  for (std::size_t id : rng.sample_without_replacement(eligible_.size(), static_cast<std::size_t>(p_))) {
    const auto& group = eligible_[id];
    for (std::size_t j : rng.sample_without_replacement(group.size(), static_cast<std::size_t>(k_)))
      out.push_back(group[j]);
  }
  return out;
}

model::Batch make_batch(const SampleSource& src, const std::vector<std::size_t>& picks) {
  model::Batch b;
  b.modality = src.modality;
  const Index n = src.encoded.front().rows(), d = src.encoded.front().cols();
  b.encoded.resize(static_cast<Index>(picks.size()) * n, d);
  for (std::size_t i = 0; i < picks.size(); ++i) {
    b.encoded.middleRows(static_cast<Index>(i) * n, n) = src.encoded[picks[i]];
    b.labels.push_back(src.labels[picks[i]]);
  }
  return b;
}

double image_probability(std::size_t images, std::size_t texts) {
  return static_cast<double>(images) / static_cast<double>(images + texts);
}

fusion::Modality draw_modality(Rng& rng, double p_image) {
  return rng.uniform() < p_image ? Modality::image : Modality::text;
}

std::vector<int> label_space(const std::vector<synth::PersonImage>& images) {
  std::vector<int> ids;
  for (const auto& img : images) ids.push_back(img.identity_id);
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  return ids;
}

Checkpoint pretrain(const synth::Dataset& data, const RunConfig& cfg, const StageOptions& opt) {
  if (!opt.use_image && !opt.use_text) throw ConfigError("pretrain: both modalities disabled, nothing to train on");
  if (opt.use_text && data.pretrain_captions.empty()) throw ConfigError("pretrain: dataset has no captions");
  if (opt.use_image && data.pretrain_images.empty()) throw ConfigError("pretrain: dataset has no images");

  const std::vector<int> ids = label_space(data.pretrain_images);
  const auto labels = label_map(ids);
  Rng init_rng(cfg.train.seed);
  Checkpoint ckpt;
  ckpt.params = model::init_model(cfg.model, static_cast<int>(ids.size()), init_rng);
  ckpt.meta = base_meta(cfg, kStagePretrain, ids);
  ckpt.meta["modalities"] = {{"image", opt.use_image}, {"text", opt.use_text}};
  // An unused modality must not drift under weight decay.
  if (!opt.use_image) ckpt.params.set_trainable_prefix("image/", false);
  if (!opt.use_text) ckpt.params.set_trainable_prefix("text/", false);

  Rng rng(synth::mix_seed(cfg.train.seed, kPretrainStream));
  restore_resume(ckpt, rng, opt, kStagePretrain);

  std::optional<SampleSource> images, texts;
  StageRun run{kStagePretrain, {}, 1.0, 0};
  std::size_t n_img = 0, n_txt = 0;
  if (opt.use_image) {
    images = image_source(data.pretrain_images, labels, cfg.model, ckpt.params);
    run.sources.push_back(&*images);
    n_img = images->encoded.size();
  }
  if (opt.use_text) {
    texts = text_source(data.pretrain_captions, labels, cfg.model, ckpt.params);
    run.sources.push_back(&*texts);
    n_txt = texts->encoded.size();
  }
  run.p_image = opt.use_image ? image_probability(n_img, n_txt) : 0.0;
  run.total_steps = cfg.train.steps_for(cfg.train.pretrain_iters, n_img + n_txt);
  run_stage(ckpt, run, cfg, rng, opt);
  return ckpt;
}

namespace {

ParamStore prepare_finetune_with(const Checkpoint* init, const RunConfig& cfg, int num_classes, Rng& rng) {
  Rng init_rng(cfg.train.seed);
  ParamStore params = model::init_model(cfg.model, num_classes, init_rng);
  if (init) {
    validate_against(init->params, params, {backbone::kClassifier});
    ParamStore carried = init->params;
    for (auto& [path, e] : carried) {
      e.trainable = params.at(path).trainable;  // stage I may have disabled a modality
      e.grad.setZero();
    }
    params = std::move(carried);
  }
  backbone::reset_classifier(params, cfg.model.head, num_classes, rng);
  params.set_trainable_prefix("text/", false);
  for (auto& [_, e] : params) e.velocity.setZero();
  return params;
}

}  // namespace

ParamStore prepare_finetune(const Checkpoint* init, const RunConfig& cfg, int num_classes) {
  Rng rng(synth::mix_seed(cfg.train.seed, kFinetuneStream));
  return prepare_finetune_with(init, cfg, num_classes, rng);
}

Checkpoint finetune(const synth::Dataset& data, const Checkpoint* init, const RunConfig& cfg, const StageOptions& opt) {
  if (data.finetune_images.empty()) throw ConfigError("finetune: dataset has no fine-tuning images");
  const std::vector<int> ids = label_space(data.finetune_images);
  Rng rng(synth::mix_seed(cfg.train.seed, kFinetuneStream));
  Checkpoint ckpt;
  ckpt.params = prepare_finetune_with(init, cfg, static_cast<int>(ids.size()), rng);
  ckpt.meta = base_meta(cfg, kStageFinetune, ids);
  ckpt.meta["init"] = init ? json(init->meta.value("stage", "unknown")) : json("scratch");
  if (init && init->meta.contains("modalities")) ckpt.meta["pretrain_modalities"] = init->meta["modalities"];

  restore_resume(ckpt, rng, opt, kStageFinetune);

  const SampleSource images = image_source(data.finetune_images, label_map(ids), cfg.model, ckpt.params);
  StageRun run{kStageFinetune, {&images}, 1.0, cfg.train.steps_for(cfg.train.finetune_iters, images.encoded.size())};
  run_stage(ckpt, run, cfg, rng, opt);
  return ckpt;
}

}  // namespace dmf::trainer
