// dmf: command-line front end for data generation, training, evaluation and exports.
#include "dmf/eval/attention_export.hpp"
#include "dmf/eval/retrieval.hpp"
#include "dmf/io/png.hpp"
#include "dmf/trainer/ablation.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

namespace {

using namespace dmf;
using nlohmann::json;
namespace fs = std::filesystem;

enum Exit { kOk = 0, kOther = 1, kConfig = 2, kData = 3, kCheckpoint = 4, kNumeric = 5 };

trainer::RunConfig load_config(const std::string& path) {
  trainer::RunConfig cfg = path.empty() ? trainer::RunConfig{} : trainer::RunConfig::load(path);
  cfg.finalize();
  return cfg;
}

// The model section always comes from the checkpoint; a config file may
// override everything else.
trainer::RunConfig config_for_checkpoint(const trainer::Checkpoint& ckpt, const std::string& path) {
  trainer::RunConfig cfg = trainer::RunConfig::from_json(ckpt.meta.at("config"));
  if (!path.empty()) {
    trainer::RunConfig over = trainer::RunConfig::load(path);
    over.model = cfg.model;
    cfg = over;
  }
  cfg.finalize();
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  synth::write_file_atomic(path, text);
}

std::ofstream open_log(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw synth::DataError("cannot open log file " + path.string());
  return out;
}

std::vector<Index> parse_queries(const std::string& spec, std::size_t count) {
  std::vector<Index> out;
  if (spec == "all") {
    for (std::size_t i = 0; i < count; ++i) out.push_back(static_cast<Index>(i));
    return out;
  }
  std::stringstream ss(spec);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      out.push_back(std::stol(tok));
    } catch (const std::exception&) {
      throw trainer::ConfigError("--queries: '" + tok + "' is not an index");
    }
  }
  return out;
}

void save_stage(const trainer::Checkpoint& ckpt, const fs::path& out) {
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  trainer::save_checkpoint(ckpt, out);
}

std::optional<trainer::Checkpoint> maybe_resume(const std::string& path) {
  if (path.empty()) return std::nullopt;
  return trainer::load_checkpoint(path);
}

int run(int argc, char** argv) {
  CLI::App app{"Deep multimodal fusion person re-identification pipeline"};
  app.require_subcommand(1);

  std::string config, data, out, log, resume, init, ckpt_path, report, queries = "0", image, seeds_opt;
  bool no_text = false, no_image = false, from_scratch = false, pgm = false;
  int top_k = -1, layer = 0, seeds = 3;

  auto* gen = app.add_subcommand("gen-data", "Render the synthetic dataset to a directory");
  gen->add_option("--config", config, "Run config JSON (data section used; defaults if omitted)");
  gen->add_option("--out", out, "Output dataset directory")->required();

  auto add_training = [&](CLI::App* sub) {
    sub->add_option("--config", config, "Run config JSON (defaults if omitted)");
    sub->add_option("--data", data, "Dataset directory written by gen-data")->required();
    sub->add_option("--out", out, "Output checkpoint file")->required();
    sub->add_option("--log", log, "JSON-lines training log (default: <out>.log.jsonl)");
    sub->add_option("--resume", resume, "Continue this stage from one of its interval checkpoints");
  };
  auto* pre = app.add_subcommand("pretrain", "Stage I: multimodal pre-training");
  add_training(pre);
  pre->add_flag("--no-text", no_text, "Pre-train on images only");
  pre->add_flag("--no-image", no_image, "Pre-train on captions only");

  auto* fine = app.add_subcommand("finetune", "Stage II: image-only fine-tuning");
  add_training(fine);
  auto* init_opt = fine->add_option("--init", init, "Pre-trained checkpoint to start from");
  auto* scratch_opt = fine->add_flag("--from-scratch", from_scratch, "Start from a fresh model (no pre-training)");
  init_opt->excludes(scratch_opt);

  auto* ev = app.add_subcommand("eval", "CMC / mAP on the unseen-domain query and gallery splits");
  ev->add_option("--config", config, "Run config JSON overriding the eval section (model comes from the checkpoint)");
  ev->add_option("--data", data, "Dataset directory")->required();
  ev->add_option("--ckpt", ckpt_path, "Checkpoint to evaluate")->required();
  ev->add_option("--report", report, "Output EvalReport JSON")->required();

  auto* rk = app.add_subcommand("rank", "Export ranking strips for selected queries");
  rk->add_option("--config", config, "Run config JSON overriding the eval section");
  rk->add_option("--ckpt", ckpt_path, "Checkpoint")->required();
  rk->add_option("--data", data, "Dataset directory")->required();
  rk->add_option("--queries", queries, "Comma-separated query indices, or 'all' (default 0)");
  rk->add_option("--top-k", top_k, "Gallery entries per strip (default from config, 15)");
  rk->add_option("--out", out, "Output directory for PNG strips and sidecar JSON")->required();

  auto* at = app.add_subcommand("attn-dump", "Export one layer's attention for an image");
  at->add_option("--config", config, "Run config JSON (unused beyond validation; model comes from the checkpoint)");
  at->add_option("--ckpt", ckpt_path, "Checkpoint")->required();
  at->add_option("--image", image, "Input PNG at the model's image size")->required();
  at->add_option("--layer", layer, "Block index, starting at 0 (default 0)");
  at->add_option("--out", out, "Output directory")->required();
  at->add_flag("--pgm", pgm, "Also write one PGM per head of the CLS-to-patch attention");

  auto* ab = app.add_subcommand("ablation", "Run the four pre-training variants per seed and tabulate");
  ab->add_option("--config", config, "Run config JSON (defaults if omitted)");
  ab->add_option("--data", data, "Dataset directory")->required();
  ab->add_option("--seeds", seeds, "Number of seeds, starting at train.seed (default 3)");
  ab->add_option("--out", out, "Output directory for ablation.json and ablation.txt")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: usage: " << e.what() << "\n";
    return kConfig;
  }

  if (gen->parsed()) {
    const auto cfg = load_config(config);
    const auto manifest = synth::build_dataset(cfg.data, out);
    std::cout << "wrote " << manifest.split(synth::kSplitPretrainImages).size() << " pre-training images to " << out
              << "\n";
    return kOk;
  }

  if (pre->parsed() || fine->parsed()) {
    const auto cfg = load_config(config);
    if (pre->parsed() && no_text && no_image)
      throw trainer::ConfigError("pretrain: --no-text and --no-image leave nothing to train on");
    if (fine->parsed() && init.empty() && !from_scratch)
      throw trainer::ConfigError("finetune: pass --init <ckpt> or --from-scratch");
    const auto dataset = synth::load_dataset(data);
    std::ofstream log_stream = open_log(log.empty() ? fs::path(out + ".log.jsonl") : fs::path(log));
    const auto resumed = maybe_resume(resume);
    trainer::StageOptions opt;
    opt.log = &log_stream;
    opt.checkpoint_path = fs::path(out);
    opt.resume = resumed ? &*resumed : nullptr;
    trainer::Checkpoint result;
    if (pre->parsed()) {
      opt.use_image = !no_image;
      opt.use_text = !no_text;
      result = trainer::pretrain(dataset, cfg, opt);
    } else {
      std::optional<trainer::Checkpoint> start;
      if (!init.empty()) start = trainer::load_checkpoint(init);
      result = trainer::finetune(dataset, start ? &*start : nullptr, cfg, opt);
    }
    save_stage(result, out);
    std::cout << result.meta.at("stage").get<std::string>() << ": " << result.meta.at("iteration").get<long>()
              << " steps, checkpoint " << out << "\n";
    return kOk;
  }

  if (ev->parsed() || rk->parsed()) {
    const auto ckpt = trainer::load_checkpoint(ckpt_path);
    const auto cfg = config_for_checkpoint(ckpt, config);
    const auto dataset = synth::load_dataset(data);
    const auto q = eval::extract_features(dataset.query_images, ckpt.params, cfg.model);
    const auto g = eval::extract_features(dataset.gallery_images, ckpt.params, cfg.model);
    const std::string id = trainer::checkpoint_id(ckpt);
    if (ev->parsed()) {
      eval::EvalReport rep = eval::evaluate(q, g, cfg.eval.max_rank);
      rep.config = trainer::to_json(cfg);
      rep.checkpoint_id = id;
      write_text(report, eval::to_json(rep).dump(2) + "\n");
      std::cout << eval::format_table_header() << "\n" << eval::format_table_row("checkpoint " + id, rep) << "\n";
    } else {
      const auto ranked = eval::rank(q, g);
      const int k = top_k > 0 ? top_k : cfg.eval.top_k;
      const json meta = {{"config", trainer::to_json(cfg)}, {"checkpoint", id}, {"seed", cfg.train.seed}};
      const auto strips = eval::export_ranking_grid(dataset.query_images, dataset.gallery_images, ranked,
                                                    parse_queries(queries, dataset.query_images.size()), k, out, meta);
      for (const auto& s : strips)
        std::cout << s.image_path.string() << (s.truncated ? " (truncated)" : "") << "\n";
    }
    return kOk;
  }

  if (at->parsed()) {
    const auto ckpt = trainer::load_checkpoint(ckpt_path);
    const auto cfg = config_for_checkpoint(ckpt, config);
    synth::PersonImage img;
    try {
      img.pixels = io::read_png(image);
    } catch (const io::ImageIoError& e) {
      throw synth::DataError(e.what());
    }
    img.identity_id = -1;
    const auto seq = fusion::image_translate(img, cfg.model.tokenizer, ckpt.params);
    eval::AttentionDump dump;
    dump.layer = layer;
    dump.sample = fs::path(image).filename().string();
    try {
      dump.heads = backbone::extract_attention(seq.tokens, cfg.model.transformer, ckpt.params, layer);
    } catch (const std::out_of_range& e) {
      throw trainer::ConfigError(std::string("--layer: ") + e.what());
    }
    fs::create_directories(out);
    const std::string stem = "attn_layer" + std::to_string(layer);
    eval::write_attention(dump, fs::path(out) / (stem + ".bin"));
    if (pgm) {
      const int gh = cfg.model.tokenizer.image_height / cfg.model.tokenizer.patch_h;
      const int gw = cfg.model.tokenizer.image_width / cfg.model.tokenizer.patch_w;
      for (std::size_t h = 0; h < dump.heads.size(); ++h)
        eval::write_pgm(eval::cls_patch_map(dump.heads[h], gh, gw),
                        fs::path(out) / (stem + "_head" + std::to_string(h) + ".pgm"));
    }
    const json meta = {{"config", trainer::to_json(cfg)},
                       {"checkpoint", trainer::checkpoint_id(ckpt)},
                       {"image", dump.sample},
                       {"layer", layer},
                       {"heads", dump.heads.size()}};
    write_text(fs::path(out) / (stem + ".json"), meta.dump(2) + "\n");
    std::cout << (fs::path(out) / (stem + ".bin")).string() << "\n";
    return kOk;
  }

  if (ab->parsed()) {
    const auto cfg = load_config(config);
    const auto dataset = synth::load_dataset(data);
    const auto result =
        trainer::run_ablation(dataset, cfg, seeds, [](const std::string& line) { std::cerr << line << std::endl; });
    const std::string table = trainer::format_table(result);
    write_text(fs::path(out) / "ablation.json", trainer::to_json(result).dump(2) + "\n");
    write_text(fs::path(out) / "ablation.txt", table);
    std::cout << table;
    return kOk;
  }
  return kOther;
}

std::string one_line(std::string s) {
  for (char& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  auto fail = [](const char* category, const std::exception& e, int code) {
    std::cerr << "error: " << category << ": " << one_line(e.what()) << "\n";
    return code;
  };
  try {
    return run(argc, argv);
  } catch (const synth::ConfigError& e) {
    return fail("config", e, kConfig);
  } catch (const nlohmann::json::exception& e) {
    return fail("config", e, kConfig);
  } catch (const dmf::ShapeError& e) {
    return fail("config", e, kConfig);
  } catch (const synth::DataError& e) {
    return fail("data", e, kData);
  } catch (const dmf::io::ImageIoError& e) {
    return fail("data", e, kData);
  } catch (const trainer::CheckpointError& e) {
    return fail("checkpoint", e, kCheckpoint);
  } catch (const dmf::NumericError& e) {
    return fail("numeric", e, kNumeric);
  } catch (const std::exception& e) {
    return fail("internal", e, kOther);
  }
}
