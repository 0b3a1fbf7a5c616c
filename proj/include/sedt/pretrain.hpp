#pragma once

#include "sedt/checkpoint.hpp"
#include "sedt/trainer.hpp"

#include <optional>
#include <string>
#include <vector>

namespace sedt {

/// One random time-axis crop: normalized boundary, frame span, and (once
/// extracted) the frozen-backbone GAP feature.
struct PatchTarget {
  double center_m = 0.0;
  double length_l = 0.0;
  int start_frame = 0;
  int end_frame = 0;  // exclusive
  Eigen::VectorXf feature;
};

/// M random spans along the time axis, full frequency extent, lengths drawn
/// uniformly from length_range (fractions of the clip) and positions uniform
/// over valid starts. Deterministic under seed; features left unfilled.
std::vector<PatchTarget> crop_patches(int total_frames, int n_patches,
                                      std::pair<double, double> length_range,
                                      int min_frames, long long seed);

struct PretrainStepStats {
  double loss_total = 0.0;
  double loss_c = 0.0;
  double loss_loc = 0.0;
  double loss_rec = 0.0;
  double mean_matched_iou = 0.0;
};

/// Random-patch detection on one clip: crop -> frozen-backbone GAP features
/// -> query injection -> per-group (or global) matching -> combined loss.
/// When `grads` is non-null the tape is backpropagated into it; a null
/// `grads` gives a pure diagnostic pass.
PretrainStepStats pretrain_step(const RealModel& model, const RealMat& spec,
                                const LossWeights& weights,
                                std::pair<double, double> patch_len_range,
                                bool global_match, long long seed,
                                GradMap* grads, double grad_scale = 1.0);

struct TrainLogEntry {
  int epoch = 0;
  double loss_total = 0.0;
  double loss_c = 0.0;
  double loss_loc = 0.0;
  double loss_rec = 0.0;
  double heldout_patch_iou = 0.0;
};

/// Backbone audio-tagging pretraining on weak clips; returns the trained
/// model (backbone + tagging linear probe) plus held-out clip macro F1 per
/// epoch. Throws if the manifest has no weak clips.
struct BackbonePretrainResult {
  std::vector<double> heldout_macro_f1;  // per epoch
};

BackbonePretrainResult pretrain_backbone(const RunConfig& cfg,
                                         const std::vector<ClipRecord>& records,
                                         RealModel& model, NormStats& stats_out);

/// SP-SEDT pretraining over unlabeled clips: epoch loop with per-epoch loss
/// components and held-out patch-localization IOU. Backbone stays frozen.
struct PretrainResult {
  std::vector<TrainLogEntry> log;
  double initial_heldout_iou = 0.0;
};

PretrainResult run_pretraining(const RunConfig& cfg,
                               const std::vector<ClipRecord>& records,
                               RealModel& model, const NormStats& stats,
                               int epochs_override = -1);

Checkpoint to_checkpoint(const RunConfig& cfg, const RealModel& model,
                         const NormStats& stats);
void from_checkpoint(const Checkpoint& ckpt, RealModel& model, NormStats& stats);

void write_train_log(const std::vector<TrainLogEntry>& log,
                     const std::string& path);

}  // namespace sedt
