#pragma once

#include "sedt/checkpoint.hpp"
#include "sedt/metrics.hpp"
#include "sedt/pretrain.hpp"
#include "sedt/trainer.hpp"

#include <set>
#include <string>
#include <vector>

namespace sedt {

/// Which parameter groups a fine-tuning run copies from a pretrained
/// checkpoint versus reinitializes from the run seed.
struct TransferPolicy {
  std::set<std::string> copy = {"backbone", "encoder", "decoder",
                                "event_queries", "boundary_head"};
  std::set<std::string> reinitialize = {"class_head", "audio_query",
                                        "tagging_head"};

  void validate() const;
};

/// Initializes `model` from the run seed, then overwrites every tensor of a
/// copied group with the checkpoint values. Shape mismatches throw with the
/// offending group named. Groups outside both sets (pretrain-only heads)
/// also keep their fresh initialization.
void transfer_weights(const Checkpoint& ckpt, RealModel& model,
                      const TransferPolicy& policy, unsigned long long seed);

struct FinetuneLogEntry {
  int epoch = 0;
  double loss_total = 0.0;
  double loss_loc = 0.0;
  double loss_c = 0.0;
  double loss_at = 0.0;
  double heldout_eb_f1 = 0.0;
};

struct FinetuneResult {
  std::vector<FinetuneLogEntry> log;
  double best_heldout_eb_f1 = 0.0;
};

/// Supervised fine-tuning: strong clips contribute the full detection loss,
/// weak clips the tagging loss only. Held-out strong clips are scored with
/// event-based F1 each epoch.
FinetuneResult finetune(const RunConfig& cfg,
                        const std::vector<ClipRecord>& strong,
                        const std::vector<ClipRecord>& weak, RealModel& model,
                        const NormStats& stats, int epochs_override = -1);

struct InferenceOutput {
  std::vector<ScoredEvent> events;                   // in seconds
  std::vector<std::pair<std::string, double>> tags;  // (label, probability)
};

/// Event-level inference with tag fusion and same-class de-overlapping.
InferenceOutput infer_clip(const RunConfig& cfg, const RealModel& model,
                           const RealMat& normalized_spec, double duration_sec);

void save_inference(const std::vector<std::pair<std::string, InferenceOutput>>& outputs,
                    const std::string& path);
std::vector<ClipEvents> load_inference_events(const std::string& path,
                                              double duration_sec);
std::vector<std::pair<std::string, std::set<std::string>>> load_inference_tags(
    const std::string& path, double tau_tag);

}  // namespace sedt
