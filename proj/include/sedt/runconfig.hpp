#pragma once

#include "sedt/losses.hpp"
#include "sedt/mel.hpp"
#include "sedt/model.hpp"
#include "sedt/synth.hpp"

#include <string>

namespace sedt {

struct PretrainConfig {
  int epochs = 3;
  int backbone_epochs = 8;
  int batch_size = 16;
  double lr = 1e-4;
  double backbone_lr = 1e-3;
  double weight_decay = 1e-4;
  double grad_clip = 0.1;
  double patch_len_lo = 0.1;   // fraction of the clip
  double patch_len_hi = 0.5;
  double heldout_fraction = 0.1;
  bool global_match = false;   // per-group matching by default
};

struct FinetuneConfig {
  int epochs = 30;
  int batch_size = 16;
  double lr = 1e-4;
  double backbone_lr = 1e-5;
  double weight_decay = 1e-4;
  double grad_clip = 0.1;
  int k_multiplicity = 1;
  double heldout_fraction = 0.1;
  LossWeights loss;
};

struct EvalConfig {
  double collar_sec = 0.2;
  double segment_sec = 1.0;
  double tau_event = 0.5;
  double tau_tag = 0.5;
  double iou_suppress = 0.5;
  bool tag_rescale = false;  // hard-filter by default
};

/// Resolved run configuration: every key validated against the schema,
/// defaults applied, unknown keys rejected. The resolved form (defaults
/// included) is what gets written next to every run for reproducibility.
struct RunConfig {
  long long seed = 0;
  std::string out_dir = "runs/default";
  SynthSpec synth;
  MelParams mel;
  ModelConfig model;
  PretrainConfig pretrain;
  FinetuneConfig finetune;
  EvalConfig eval;
  std::string cache_dir;  // optional spectrogram cache, "" = off

  static RunConfig defaults();
  static RunConfig from_json_file(const std::string& path);
  static RunConfig from_json(const std::string& json_text);
  std::string to_json() const;

  /// Hash over the model-relevant part of the config (model + mel + classes);
  /// embedded in checkpoints and verified on load.
  std::string model_hash() const;

  std::vector<std::string> class_labels() const {
    std::vector<std::string> labels;
    for (const auto& c : synth.classes) labels.push_back(c.label);
    return labels;
  }
  int class_index(const std::string& label) const;
};

/// Regenerates the (unnormalized) log-mel spectrogram of a manifest record
/// from its synthesis seed, via the cache when one is configured.
SpectrogramTensor featurize(const RunConfig& cfg, const ClipRecord& rec);

}  // namespace sedt
