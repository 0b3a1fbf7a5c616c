#pragma once

#include "sedt/assignment.hpp"
#include "sedt/losses.hpp"
#include "sedt/model.hpp"
#include "sedt/normalize.hpp"
#include "sedt/runconfig.hpp"

#include <map>
#include <set>
#include <string>
#include <vector>

namespace sedt {

using Real = float;
using RealModel = SEDTModel<Real>;
using RealMat = ad::Mat<Real>;

/// Accumulated per-tensor gradients for one optimizer step.
using GradMap = std::map<std::string, RealMat>;

/// AdamW with decoupled weight decay, per-group learning rates, and global
/// gradient-norm clipping. Tensors whose gradient is identically zero and
/// whose moments are still empty are left untouched, so heads detached by a
/// zero loss weight really do stay at their initialization.
class AdamW {
 public:
  struct Options {
    double lr = 1e-4;
    double backbone_lr = 1e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;
    double grad_clip = 0.1;
    std::set<std::string> trainable_groups;  // empty = everything
  };

  explicit AdamW(Options opts) : opts_(std::move(opts)) {}

  bool trainable(const std::string& name) const {
    return opts_.trainable_groups.empty() ||
           opts_.trainable_groups.count(ParamStore<Real>::group_of(name)) > 0;
  }

  void step(RealModel& model, GradMap& grads);

  const Options& options() const { return opts_; }

 private:
  Options opts_;
  std::map<std::string, std::pair<RealMat, RealMat>> moments_;
  long long t_ = 0;
};

/// Accumulates tape gradients of every bound parameter into `grads`,
/// scaled by 1/batch_size.
void accumulate_grads(ad::Tape<Real>& tape, const ParamNodes& nodes,
                      GradMap& grads, double scale);

/// Normalized model input for one manifest record.
RealMat model_input(const RunConfig& cfg, const ClipRecord& rec,
                    const NormStats& stats);

NormStats training_stats(const RunConfig& cfg,
                         const std::vector<ClipRecord>& records);

/// Deterministic train/held-out split: the trailing `fraction` of the list
/// (at least one clip) is held out. Degenerates to identical sets for
/// single-clip inputs.
std::pair<std::vector<ClipRecord>, std::vector<ClipRecord>> split_heldout(
    const std::vector<ClipRecord>& records, double fraction);

struct ClipTargets {
  std::vector<int> class_idx;          // per event
  Eigen::MatrixXd boundaries;          // n_events x 2 (m, l)
  std::vector<double> tag_labels;      // multi-hot over classes
};

ClipTargets targets_from_record(const RunConfig& cfg, const ClipRecord& rec);

/// One supervised detection loss for a strong clip: matching + Eq-style
/// composition. Returns the scalar node; fills per-component values.
struct DetectionLossParts {
  int total_node = -1;
  double loc = 0.0, cls = 0.0, tag = 0.0, total = 0.0;
  MatchAssignment assignment;
};

DetectionLossParts strong_clip_loss(ad::Tape<Real>& tape, const RealModel& model,
                                    const ParamNodes& nodes,
                                    const RealModel::Predictions& preds,
                                    const ClipTargets& targets,
                                    const LossWeights& weights,
                                    int k_multiplicity);

}  // namespace sedt
