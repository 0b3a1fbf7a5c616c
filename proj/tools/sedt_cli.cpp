// Command-line pipeline: synth -> pretrain-backbone -> pretrain -> finetune
// -> infer -> evaluate. Every command writes its resolved config next to its
// outputs so runs are reproducible from the artifacts alone.

#include "sedt/finetune.hpp"
#include "sedt/manifest.hpp"
#include "sedt/metrics.hpp"
#include "sedt/pretrain.hpp"
#include "sedt/runconfig.hpp"
#include "sedt/trainer.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace sedt;

namespace {

struct CommonArgs {
  std::string config_path;
  long long seed = -1;         // -1 = keep config value
  std::string out;
  std::string init = "scratch";
  int epochs = -1;
  bool force_transfer = false;
};

RunConfig resolve_config(const CommonArgs& args) {
  RunConfig cfg = args.config_path.empty() ? RunConfig::defaults()
                                           : RunConfig::from_json_file(args.config_path);
  if (args.seed >= 0) cfg.seed = args.seed;
  if (!args.out.empty()) cfg.out_dir = args.out;
  return cfg;
}

void write_resolved_config(const RunConfig& cfg) {
  fs::create_directories(cfg.out_dir);
  std::ofstream out(fs::path(cfg.out_dir) / "resolved_config.json");
  out << cfg.to_json() << '\n';
}

std::vector<ClipRecord> load_records(const std::string& path) {
  return unwrap_records(load_manifest(path));
}

std::vector<ClipRecord> filter_kind(std::vector<ClipRecord> records,
                                    AnnotationKind kind) {
  std::erase_if(records, [&](const ClipRecord& r) { return r.annotation_kind != kind; });
  return records;
}

std::vector<ClipEvents> refs_from_records(const std::vector<ClipRecord>& records) {
  std::vector<ClipEvents> refs;
  for (const auto& r : records) {
    ClipEvents ce;
    ce.clip_id = r.clip_id;
    ce.duration_sec = r.duration_sec;
    for (const auto& e : r.events)
      ce.events.push_back({e.label, e.onset_sec(r.duration_sec),
                           e.offset_sec(r.duration_sec), 1.0});
    refs.push_back(std::move(ce));
  }
  return refs;
}

void write_finetune_log(const std::vector<FinetuneLogEntry>& log,
                        const std::string& path) {
  std::ofstream out(path);
  for (const auto& e : log) {
    out << nlohmann::json({{"epoch", e.epoch},
                           {"loss_total", e.loss_total},
                           {"loss_loc", e.loss_loc},
                           {"loss_c", e.loss_c},
                           {"loss_at", e.loss_at},
                           {"heldout_eb_f1", e.heldout_eb_f1}})
               .dump()
        << '\n';
  }
}

int cmd_synth(const CommonArgs& args, const std::string& manifest_out,
              int n_strong, int n_weak, int n_unlabeled) {
  RunConfig cfg = resolve_config(args);
  write_resolved_config(cfg);

  std::vector<ClipRecord> records;
  auto make = [&](const std::string& kind, AnnotationKind ann, int count,
                  long long block) {
    for (int i = 0; i < count; ++i) {
      char id[64];
      std::snprintf(id, sizeof(id), "%s_%05d", kind.c_str(), i);
      const long long seed = cfg.seed * 1000000 + block * 100000 + i;
      auto [rec, wave] = synth_clip(cfg.synth, seed, id);
      rec.annotation_kind = ann;
      records.push_back(std::move(rec));
    }
  };
  make("strong", AnnotationKind::kStrong, n_strong, 0);
  make("weak", AnnotationKind::kWeak, n_weak, 1);
  make("unlabeled", AnnotationKind::kUnlabeled, n_unlabeled, 2);

  const std::string path =
      manifest_out.empty() ? (fs::path(cfg.out_dir) / "manifest.jsonl").string()
                           : manifest_out;
  save_manifest(wrap_records(records), path);
  std::cout << "wrote " << records.size() << " records to " << path << "\n";
  return 0;
}

int cmd_pretrain_backbone(const CommonArgs& args, const std::string& manifest) {
  RunConfig cfg = resolve_config(args);
  if (args.epochs >= 0) cfg.pretrain.backbone_epochs = args.epochs;
  write_resolved_config(cfg);

  RealModel model(cfg.model);
  model.init(static_cast<unsigned long long>(cfg.seed));
  NormStats stats;
  const auto result = pretrain_backbone(cfg, load_records(manifest), model, stats);

  const std::string ckpt_path = (fs::path(cfg.out_dir) / "backbone.ckpt").string();
  save_checkpoint(to_checkpoint(cfg, model, stats), ckpt_path);
  std::ofstream log(fs::path(cfg.out_dir) / "backbone_log.jsonl");
  for (size_t i = 0; i < result.heldout_macro_f1.size(); ++i) {
    log << nlohmann::json({{"epoch", i}, {"heldout_tag_f1", result.heldout_macro_f1[i]}})
               .dump()
        << '\n';
  }
  std::cout << "backbone checkpoint: " << ckpt_path << " (final held-out tag F1 "
            << (result.heldout_macro_f1.empty() ? 0.0 : result.heldout_macro_f1.back())
            << ")\n";
  return 0;
}

int cmd_pretrain(const CommonArgs& args, const std::string& manifest) {
  RunConfig cfg = resolve_config(args);
  if (args.epochs >= 0) cfg.pretrain.epochs = args.epochs;
  write_resolved_config(cfg);

  // The pretext task needs no labels; prefer the unlabeled subset when the
  // manifest has one, otherwise treat every clip as unlabeled.
  auto records = filter_kind(load_records(manifest), AnnotationKind::kUnlabeled);
  if (records.empty()) records = load_records(manifest);
  RealModel model(cfg.model);
  NormStats stats;
  if (args.init == "scratch") {
    model.init(static_cast<unsigned long long>(cfg.seed));
    auto [train, heldout] = split_heldout(records, cfg.pretrain.heldout_fraction);
    stats = training_stats(cfg, train);
  } else {
    const auto ckpt =
        load_checkpoint(args.init, cfg.model_hash(), args.force_transfer);
    model.init(static_cast<unsigned long long>(cfg.seed));
    from_checkpoint(ckpt, model, stats);
  }

  const auto result = run_pretraining(cfg, records, model, stats);
  const std::string ckpt_path = (fs::path(cfg.out_dir) / "spsedt.ckpt").string();
  save_checkpoint(to_checkpoint(cfg, model, stats), ckpt_path);
  write_train_log(result.log, (fs::path(cfg.out_dir) / "pretrain_log.jsonl").string());
  std::cout << "pretrained checkpoint: " << ckpt_path << " (held-out patch IOU "
            << result.initial_heldout_iou << " -> "
            << (result.log.empty() ? result.initial_heldout_iou
                                   : result.log.back().heldout_patch_iou)
            << ")\n";
  return 0;
}

int cmd_finetune(const CommonArgs& args, const std::string& strong_manifest,
                 const std::string& weak_manifest) {
  RunConfig cfg = resolve_config(args);
  if (args.epochs >= 0) cfg.finetune.epochs = args.epochs;
  write_resolved_config(cfg);

  const auto strong = filter_kind(load_records(strong_manifest), AnnotationKind::kStrong);
  std::vector<ClipRecord> weak;
  if (!weak_manifest.empty())
    weak = filter_kind(load_records(weak_manifest), AnnotationKind::kWeak);

  RealModel model(cfg.model);
  if (args.init == "scratch") {
    model.init(static_cast<unsigned long long>(cfg.seed));
  } else {
    const auto ckpt =
        load_checkpoint(args.init, cfg.model_hash(), args.force_transfer);
    transfer_weights(ckpt, model, TransferPolicy{},
                     static_cast<unsigned long long>(cfg.seed));
  }

  auto [train, heldout] = split_heldout(strong, cfg.finetune.heldout_fraction);
  std::vector<ClipRecord> stats_clips = train;
  stats_clips.insert(stats_clips.end(), weak.begin(), weak.end());
  const NormStats stats = training_stats(cfg, stats_clips);

  const auto result = finetune(cfg, strong, weak, model, stats);
  const std::string ckpt_path = (fs::path(cfg.out_dir) / "sedt.ckpt").string();
  save_checkpoint(to_checkpoint(cfg, model, stats), ckpt_path);
  write_finetune_log(result.log, (fs::path(cfg.out_dir) / "finetune_log.jsonl").string());
  std::cout << "finetuned checkpoint: " << ckpt_path << " (held-out Eb F1 "
            << (result.log.empty() ? 0.0 : result.log.back().heldout_eb_f1) << ")\n";
  return 0;
}

int cmd_infer(const CommonArgs& args, const std::string& model_path,
              const std::string& manifest, const std::string& out_path) {
  RunConfig cfg = resolve_config(args);
  write_resolved_config(cfg);
  if (fs::path(out_path).has_parent_path())
    fs::create_directories(fs::path(out_path).parent_path());
  const auto ckpt = load_checkpoint(model_path, cfg.model_hash(), args.force_transfer);
  RealModel model(cfg.model);
  NormStats stats;
  from_checkpoint(ckpt, model, stats);

  std::vector<std::pair<std::string, InferenceOutput>> outputs;
  for (const auto& rec : load_records(manifest)) {
    outputs.emplace_back(rec.clip_id,
                         infer_clip(cfg, model, model_input(cfg, rec, stats),
                                    rec.duration_sec));
  }
  save_inference(outputs, out_path);
  std::cout << "wrote predictions for " << outputs.size() << " clips to "
            << out_path << "\n";
  return 0;
}

int cmd_evaluate(const CommonArgs& args, const std::string& refs_manifest,
                 const std::string& preds_path, const std::string& report_path) {
  RunConfig cfg = resolve_config(args);
  write_resolved_config(cfg);
  if (!report_path.empty() && fs::path(report_path).has_parent_path())
    fs::create_directories(fs::path(report_path).parent_path());
  const auto records = load_records(refs_manifest);
  const auto refs = refs_from_records(records);
  const double duration = records.empty() ? cfg.synth.clip_duration_sec
                                          : records[0].duration_sec;
  const auto preds = load_inference_events(preds_path, duration);
  const auto pred_tags = load_inference_tags(preds_path, cfg.eval.tau_tag);

  std::vector<std::set<std::string>> ref_tag_sets, pred_tag_sets;
  for (const auto& r : records) {
    ref_tag_sets.push_back(r.tags);
    std::set<std::string> pt;
    for (const auto& [clip_id, tags] : pred_tags) {
      if (clip_id == r.clip_id) { pt = tags; break; }
    }
    pred_tag_sets.push_back(std::move(pt));
  }

  const auto eb = event_based_f1(refs, preds, cfg.eval.collar_sec);
  const auto sb = segment_based_f1(refs, preds, cfg.eval.segment_sec);
  const auto at = tagging_f1(ref_tag_sets, pred_tag_sets);

  nlohmann::json report;
  report["event_based"] = nlohmann::json::parse(eb.to_json());
  report["segment_based"] = nlohmann::json::parse(sb.to_json());
  report["tagging"] = nlohmann::json::parse(at.to_json());
  if (!report_path.empty()) {
    std::ofstream out(report_path);
    out << report.dump(2) << '\n';
  }
  std::cout << "Eb macro F1: " << eb.macro_f1 << "\n"
            << "Sb macro F1: " << sb.macro_f1 << "\n"
            << "At macro F1: " << at.macro_f1 << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sound event detection transformer pipeline"};
  app.require_subcommand(1);

  CommonArgs args;
  std::string manifest, weak_manifest, model_path, preds_path, report_path,
      manifest_out;
  int n_strong = 0, n_weak = 0, n_unlabeled = 0;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", args.config_path, "Run config JSON");
    cmd->add_option("--seed", args.seed, "Override the config seed");
    cmd->add_option("--out", args.out, "Output directory");
    cmd->add_option("--epochs", args.epochs, "Override the epoch count");
    cmd->add_flag("--force-transfer", args.force_transfer,
                  "Allow loading checkpoints with mismatched config hashes");
  };

  auto* synth = app.add_subcommand("synth", "Generate a synthetic corpus manifest");
  add_common(synth);
  synth->add_option("--manifest-out", manifest_out,
                    "Manifest path (default <out>/manifest.jsonl)");
  synth->add_option("--n-strong", n_strong, "Strongly labeled clips");
  synth->add_option("--n-weak", n_weak, "Weakly labeled clips");
  synth->add_option("--n-unlabeled", n_unlabeled, "Unlabeled clips");

  auto* preb = app.add_subcommand("pretrain-backbone",
                                  "Audio-tagging pretraining of the backbone");
  add_common(preb);
  preb->add_option("--manifest", manifest, "Weak-clip manifest")->required();

  auto* pre = app.add_subcommand("pretrain", "Random-patch detection pretraining");
  add_common(pre);
  pre->add_option("--manifest", manifest, "Unlabeled-clip manifest")->required();
  pre->add_option("--init", args.init, "scratch or a backbone checkpoint path");

  auto* fin = app.add_subcommand("finetune", "Supervised fine-tuning");
  add_common(fin);
  fin->add_option("--strong", manifest, "Strong-clip manifest")->required();
  fin->add_option("--weak", weak_manifest, "Weak-clip manifest (optional)");
  fin->add_option("--init", args.init, "scratch or a pretrained checkpoint path");

  auto* inf = app.add_subcommand("infer", "Event-level inference");
  add_common(inf);
  inf->add_option("--model", model_path, "Model checkpoint")->required();
  inf->add_option("--manifest", manifest, "Clips to run on")->required();
  inf->add_option("--preds-out", preds_path, "Prediction JSONL path")->required();

  auto* ev = app.add_subcommand("evaluate", "Score predictions against references");
  add_common(ev);
  ev->add_option("--refs", manifest, "Reference manifest")->required();
  ev->add_option("--preds", preds_path, "Prediction JSONL from infer")->required();
  ev->add_option("--report-out", report_path, "Report JSON path");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed())
      return cmd_synth(args, manifest_out, n_strong, n_weak, n_unlabeled);
    if (preb->parsed()) return cmd_pretrain_backbone(args, manifest);
    if (pre->parsed()) return cmd_pretrain(args, manifest);
    if (fin->parsed()) return cmd_finetune(args, manifest, weak_manifest);
    if (inf->parsed()) return cmd_infer(args, model_path, manifest, preds_path);
    if (ev->parsed()) return cmd_evaluate(args, manifest, preds_path, report_path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
