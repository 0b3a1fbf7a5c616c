#include "sedt/pretrain.hpp"

#include "sedt/metrics.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>

namespace sedt {

std::vector<PatchTarget> crop_patches(int total_frames, int n_patches,
                                      std::pair<double, double> length_range,
                                      int min_frames, long long seed) {
  if (n_patches < 1) throw std::invalid_argument("need at least one patch");
  if (length_range.first <= 0.0 || length_range.second > 1.0 ||
      length_range.second < length_range.first)
    throw std::invalid_argument("patch length range must lie within (0,1]");
  const int lo = std::max(
      min_frames, static_cast<int>(std::lround(length_range.first * total_frames)));
  const int hi = std::max(
      lo, static_cast<int>(std::lround(length_range.second * total_frames)));
  if (lo > total_frames)
    throw std::invalid_argument("clip too short for the minimum patch length");

  std::mt19937_64 rng(static_cast<unsigned long long>(seed) * 0x2545f4914f6cdd1dULL + 7);
  std::vector<PatchTarget> patches;
  for (int i = 0; i < n_patches; ++i) {
    std::uniform_int_distribution<int> len_dist(lo, hi);
    const int len = std::min(len_dist(rng), total_frames);
    std::uniform_int_distribution<int> start_dist(0, total_frames - len);
    const int start = start_dist(rng);
    PatchTarget p;
    p.start_frame = start;
    p.end_frame = start + len;
    p.center_m = (start + len / 2.0) / total_frames;
    p.length_l = static_cast<double>(len) / total_frames;
    patches.push_back(p);
  }
  return patches;
}

namespace {

/// Matches each patch against its own query group (or globally) and returns
/// slot -> patch assignments.
std::vector<std::pair<int, int>> match_patches(
    const RealModel& model, const ad::Tape<Real>& tape,
    const RealModel::Predictions& preds, const std::vector<PatchTarget>& patches,
    const LossWeights& weights, bool global_match) {
  const int n = model.config.n_queries;
  const auto m = static_cast<int>(patches.size());
  const int group = n / m;
  const auto& probs = tape.value(preds.class_probs);
  const auto& bounds = tape.value(preds.boundaries);
  const MatchWeights mw{weights.lambda_l1, weights.lambda_iou, weights.lambda_c};

  auto cost_of = [&](int patch, int slot) {
    // Class 0 is "patch" in the two-way pretraining head.
    return pair_cost({patches[static_cast<size_t>(patch)].center_m,
                      patches[static_cast<size_t>(patch)].length_l},
                     static_cast<double>(probs(slot, 0)),
                     {static_cast<double>(bounds(slot, 0)),
                      static_cast<double>(bounds(slot, 1))},
                     mw);
  };

  std::vector<std::pair<int, int>> pairs;  // (patch, slot)
  if (global_match) {
    MatrixXd cost(m, n);
    for (int p = 0; p < m; ++p)
      for (int s = 0; s < n; ++s) cost(p, s) = cost_of(p, s);
    for (const auto& [p, s] : hungarian(cost).pairs) pairs.emplace_back(p, s);
  } else {
    for (int p = 0; p < m; ++p) {
      MatrixXd cost(1, group);
      for (int s = 0; s < group; ++s) cost(0, s) = cost_of(p, p * group + s);
      const auto a = hungarian(cost);
      pairs.emplace_back(p, p * group + a.pairs[0].second);
    }
  }
  return pairs;
}

}  // namespace

PretrainStepStats pretrain_step(const RealModel& model, const RealMat& spec,
                                const LossWeights& weights,
                                std::pair<double, double> patch_len_range,
                                bool global_match, long long seed,
                                GradMap* grads, double grad_scale) {
  const int m = model.config.n_patches;
  const int min_frames = model.config.time_downsample();
  auto patches = crop_patches(static_cast<int>(spec.rows()), m, patch_len_range,
                              min_frames, seed);

  RealMat patch_features(m, model.config.backbone_out_channels());
  for (int i = 0; i < m; ++i) {
    const auto& p = patches[static_cast<size_t>(i)];
    const RealMat slice = spec.middleRows(p.start_frame, p.end_frame - p.start_frame);
    patch_features.row(i) = model.gap_patch_feature(slice).transpose();
  }

  ad::Tape<Real> tape;
  const ParamNodes nodes = model.bind(tape);
  const auto preds = model.forward(tape, nodes, spec, Mode::kPretrain,
                                   &patch_features, /*freeze_backbone=*/true);

  const auto matched = match_patches(model, tape, preds, patches, weights, global_match);

  const int n = model.config.n_queries;
  std::vector<int> slot_class(static_cast<size_t>(n), 1);  // 1 = background
  std::vector<int> matched_slots;
  Eigen::MatrixXd matched_targets(static_cast<Eigen::Index>(matched.size()), 2);
  RealMat matched_features(static_cast<Eigen::Index>(matched.size()),
                           model.config.backbone_out_channels());
  PretrainStepStats stats;
  const auto& bounds = tape.value(preds.boundaries);
  for (size_t i = 0; i < matched.size(); ++i) {
    const auto [p, s] = matched[i];
    slot_class[static_cast<size_t>(s)] = 0;
    matched_slots.push_back(s);
    matched_targets(static_cast<Eigen::Index>(i), 0) = patches[static_cast<size_t>(p)].center_m;
    matched_targets(static_cast<Eigen::Index>(i), 1) = patches[static_cast<size_t>(p)].length_l;
    matched_features.row(static_cast<Eigen::Index>(i)) = patch_features.row(p);
    stats.mean_matched_iou +=
        iou_1d(to_interval(patches[static_cast<size_t>(p)].center_m,
                           patches[static_cast<size_t>(p)].length_l),
               to_interval(static_cast<double>(bounds(s, 0)),
                           static_cast<double>(bounds(s, 1))));
  }
  stats.mean_matched_iou /= static_cast<double>(matched.size());

  const int cls_node =
      losses::classification_loss(tape, preds.class_probs, slot_class, 1, weights);
  const int pred_ml = ad::gather_rows(tape, preds.boundaries, matched_slots);
  const int target_ml =
      ad::constant(tape, RealMat(matched_targets.cast<Real>()));
  const int loc_node = losses::location_loss(tape, pred_ml, target_ml, weights);
  const int rec_rows = ad::gather_rows(tape, preds.recon, matched_slots);
  const int rec_node = losses::reconstruction_loss(tape, rec_rows, matched_features);
  const int total = losses::pretrain_loss(tape, cls_node, loc_node, rec_node, weights);

  stats.loss_c = static_cast<double>(tape.scalar(cls_node));
  stats.loss_loc = static_cast<double>(tape.scalar(loc_node));
  stats.loss_rec = static_cast<double>(tape.scalar(rec_node));
  stats.loss_total = static_cast<double>(tape.scalar(total));

  if (grads != nullptr) {
    tape.backward(total);
    accumulate_grads(tape, nodes, *grads, grad_scale);
  }
  return stats;
}

// ---------------------------------------------------------------------------
// Backbone audio-tagging pretraining
// ---------------------------------------------------------------------------

BackbonePretrainResult pretrain_backbone(const RunConfig& cfg,
                                         const std::vector<ClipRecord>& records,
                                         RealModel& model, NormStats& stats_out) {
  std::vector<ClipRecord> weak;
  for (const auto& r : records) {
    if (r.annotation_kind == AnnotationKind::kWeak) weak.push_back(r);
  }
  if (weak.empty())
    throw std::invalid_argument("backbone pretraining needs weak clips");

  auto [train, heldout] = split_heldout(weak, cfg.pretrain.heldout_fraction);
  stats_out = training_stats(cfg, train);
  std::vector<RealMat> train_in, held_in;
  for (const auto& r : train) train_in.push_back(model_input(cfg, r, stats_out));
  for (const auto& r : heldout) held_in.push_back(model_input(cfg, r, stats_out));

  AdamW::Options opts;
  opts.lr = cfg.pretrain.backbone_lr;
  opts.backbone_lr = cfg.pretrain.backbone_lr;
  opts.weight_decay = cfg.pretrain.weight_decay;
  opts.grad_clip = 0.0;  // plain tagging probe trains fine unclipped
  opts.trainable_groups = {"backbone", "bb_tag_head"};
  AdamW optimizer(opts);

  auto tag_forward = [&](ad::Tape<Real>& tape, const ParamNodes& nodes,
                         const RealMat& input) {
    const auto fm = model.backbone_forward(tape, nodes, input);
    const int pooled = model.gap(tape, fm);  // C x 1
    const int logits =
        ad::add_rowvec(tape, ad::matmul(tape, RealModel::transpose_node(tape, pooled),
                                        nodes.at("bb_tag_head.w")),
                       nodes.at("bb_tag_head.b"));
    return ad::sigmoid(tape, logits);
  };

  BackbonePretrainResult result;
  std::mt19937_64 shuffle_rng(static_cast<unsigned long long>(cfg.seed) + 91);
  std::vector<size_t> order(train.size());
  std::iota(order.begin(), order.end(), size_t{0});

  for (int epoch = 0; epoch < cfg.pretrain.backbone_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    GradMap grads;
    int in_batch = 0;
    for (size_t idx : order) {
      ad::Tape<Real> tape;
      const ParamNodes nodes = model.bind(tape);
      const int probs = tag_forward(tape, nodes, train_in[idx]);
      const auto targets = targets_from_record(cfg, train[idx]);
      const int loss = losses::tagging_loss(tape, probs, targets.tag_labels);
      tape.backward(loss);
      accumulate_grads(tape, nodes, grads, 1.0 / cfg.pretrain.batch_size);
      if (++in_batch == cfg.pretrain.batch_size) {
        optimizer.step(model, grads);
        grads.clear();
        in_batch = 0;
      }
    }
    if (in_batch > 0) optimizer.step(model, grads);

    // Held-out clip-level macro F1 at threshold 0.5.
    std::vector<std::set<std::string>> ref_tags, pred_tags;
    for (size_t i = 0; i < heldout.size(); ++i) {
      ad::Tape<Real> tape;
      const ParamNodes nodes = model.bind(tape);
      const int probs = tag_forward(tape, nodes, held_in[i]);
      std::set<std::string> predicted;
      for (int c = 0; c < cfg.model.n_classes; ++c) {
        if (tape.value(probs)(0, c) >= 0.5f)
          predicted.insert(cfg.synth.classes[static_cast<size_t>(c)].label);
      }
      ref_tags.push_back(heldout[i].tags);
      pred_tags.push_back(predicted);
    }
    result.heldout_macro_f1.push_back(tagging_f1(ref_tags, pred_tags).macro_f1);
  }
  return result;
}

// ---------------------------------------------------------------------------
// SP-SEDT pretraining
// ---------------------------------------------------------------------------

PretrainResult run_pretraining(const RunConfig& cfg,
                               const std::vector<ClipRecord>& records,
                               RealModel& model, const NormStats& stats,
                               int epochs_override) {
  if (records.empty()) throw std::invalid_argument("empty pretraining manifest");
  const int epochs = epochs_override >= 0 ? epochs_override : cfg.pretrain.epochs;

  auto [train, heldout] = split_heldout(records, cfg.pretrain.heldout_fraction);

  std::vector<RealMat> train_in, held_in;
  for (const auto& r : train) train_in.push_back(model_input(cfg, r, stats));
  for (const auto& r : heldout) held_in.push_back(model_input(cfg, r, stats));

  const LossWeights& weights = cfg.finetune.loss;
  const std::pair<double, double> patch_range{cfg.pretrain.patch_len_lo,
                                              cfg.pretrain.patch_len_hi};

  auto heldout_iou = [&]() {
    double sum = 0.0;
    for (size_t i = 0; i < held_in.size(); ++i) {
      sum += pretrain_step(model, held_in[i], weights, patch_range,
                           cfg.pretrain.global_match,
                           static_cast<long long>(i) + 5000, nullptr)
                 .mean_matched_iou;
    }
    return sum / static_cast<double>(held_in.size());
  };

  AdamW::Options opts;
  opts.lr = cfg.pretrain.lr;
  opts.weight_decay = cfg.pretrain.weight_decay;
  opts.grad_clip = cfg.pretrain.grad_clip;
  // Everything the pretext task touches; backbone and the finetune-only
  // branches stay fixed.
  opts.trainable_groups = {"encoder", "decoder", "event_queries",
                           "boundary_head", "patch_class_head", "recon_head",
                           "patch_proj"};
  AdamW optimizer(opts);

  PretrainResult result;
  result.initial_heldout_iou = heldout_iou();

  std::mt19937_64 shuffle_rng(static_cast<unsigned long long>(cfg.seed) + 17);
  std::vector<size_t> order(train.size());
  std::iota(order.begin(), order.end(), size_t{0});

  long long crop_counter = 0;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    TrainLogEntry entry;
    entry.epoch = epoch;
    GradMap grads;
    int in_batch = 0;
    for (size_t idx : order) {
      const auto stats_step =
          pretrain_step(model, train_in[idx], weights, patch_range,
                        cfg.pretrain.global_match, cfg.seed * 131071 + crop_counter++,
                        &grads, 1.0 / cfg.pretrain.batch_size);
      entry.loss_total += stats_step.loss_total;
      entry.loss_c += stats_step.loss_c;
      entry.loss_loc += stats_step.loss_loc;
      entry.loss_rec += stats_step.loss_rec;
      if (++in_batch == cfg.pretrain.batch_size) {
        optimizer.step(model, grads);
        grads.clear();
        in_batch = 0;
      }
    }
    if (in_batch > 0) optimizer.step(model, grads);
    const auto n_train = static_cast<double>(train.size());
    entry.loss_total /= n_train;
    entry.loss_c /= n_train;
    entry.loss_loc /= n_train;
    entry.loss_rec /= n_train;
    entry.heldout_patch_iou = heldout_iou();
    result.log.push_back(entry);
  }
  return result;
}

Checkpoint to_checkpoint(const RunConfig& cfg, const RealModel& model,
                         const NormStats& stats) {
  Checkpoint ckpt;
  ckpt.config_json = cfg.to_json();
  ckpt.config_hash = cfg.model_hash();
  for (Eigen::Index i = 0; i < stats.mean.size(); ++i) {
    ckpt.norm_mean.push_back(stats.mean[i]);
    ckpt.norm_std.push_back(stats.std[i]);
  }
  for (const auto& name : model.params.order) {
    ckpt.tensor_order.push_back(name);
    ckpt.tensors[name] = model.params.at(name);
  }
  return ckpt;
}

void from_checkpoint(const Checkpoint& ckpt, RealModel& model, NormStats& stats) {
  for (const auto& name : model.params.order) {
    auto it = ckpt.tensors.find(name);
    if (it == ckpt.tensors.end())
      throw std::runtime_error("checkpoint is missing tensor " + name);
    auto& dst = model.params.at(name);
    if (it->second.rows() != dst.rows() || it->second.cols() != dst.cols())
      throw std::runtime_error("checkpoint tensor shape mismatch for " + name);
    dst = it->second;
  }
  stats.mean.resize(static_cast<Eigen::Index>(ckpt.norm_mean.size()));
  stats.std.resize(static_cast<Eigen::Index>(ckpt.norm_std.size()));
  for (size_t i = 0; i < ckpt.norm_mean.size(); ++i) {
    stats.mean[static_cast<Eigen::Index>(i)] = ckpt.norm_mean[i];
    stats.std[static_cast<Eigen::Index>(i)] = ckpt.norm_std[i];
  }
}

void write_train_log(const std::vector<TrainLogEntry>& log,
                     const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open training log: " + path);
  for (const auto& e : log) {
    out << nlohmann::json({{"epoch", e.epoch},
                           {"loss_total", e.loss_total},
                           {"loss_c", e.loss_c},
                           {"loss_loc", e.loss_loc},
                           {"loss_rec", e.loss_rec},
                           {"heldout_patch_iou", e.heldout_patch_iou}})
               .dump()
        << '\n';
  }
}

}  // namespace sedt
