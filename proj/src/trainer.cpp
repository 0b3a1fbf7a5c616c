#include "sedt/trainer.hpp"

#include <cmath>
#include <stdexcept>

namespace sedt {

void AdamW::step(RealModel& model, GradMap& grads) {
  ++t_;
  // Global norm over trainable gradients, then a single clip factor.
  double sq_norm = 0.0;
  for (auto& [name, g] : grads) {
    if (!trainable(name)) continue;
    sq_norm += static_cast<double>(g.squaredNorm());
  }
  const double norm = std::sqrt(sq_norm);
  const double clip =
      (opts_.grad_clip > 0.0 && norm > opts_.grad_clip) ? opts_.grad_clip / norm : 1.0;

  const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));

  for (const auto& name : model.params.order) {
    if (!trainable(name)) continue;
    auto it = grads.find(name);
    if (it == grads.end()) continue;
    RealMat& g = it->second;
    const bool fresh = moments_.find(name) == moments_.end();
    if (fresh && g.squaredNorm() == 0.0f) continue;  // detached tensor

    auto& [m, v] = moments_[name];
    if (m.size() == 0) {
      m = RealMat::Zero(g.rows(), g.cols());
      v = RealMat::Zero(g.rows(), g.cols());
    }
    if (clip != 1.0) g *= static_cast<Real>(clip);
    m = static_cast<Real>(opts_.beta1) * m + static_cast<Real>(1.0 - opts_.beta1) * g;
    v = (static_cast<Real>(opts_.beta2) * v.array() +
         static_cast<Real>(1.0 - opts_.beta2) * g.array().square())
            .matrix();

    const bool is_backbone = name.starts_with("backbone.");
    const double lr = is_backbone ? opts_.backbone_lr : opts_.lr;
    RealMat& w = model.params.at(name);
    // Decay weights only, not norms/biases/embeddings.
    if (opts_.weight_decay > 0.0 && name.find(".w") != std::string::npos) {
      w *= static_cast<Real>(1.0 - lr * opts_.weight_decay);
    }
    w.array() -= static_cast<Real>(lr) * (m.array() / static_cast<Real>(bc1)) /
                 ((v.array() / static_cast<Real>(bc2)).sqrt() +
                  static_cast<Real>(opts_.eps));
  }
}

void accumulate_grads(ad::Tape<Real>& tape, const ParamNodes& nodes,
                      GradMap& grads, double scale) {
  for (const auto& [name, node] : nodes) {
    auto it = grads.find(name);
    if (it == grads.end()) {
      grads[name] = tape.grad(node) * static_cast<Real>(scale);
    } else {
      it->second += tape.grad(node) * static_cast<Real>(scale);
    }
  }
}

RealMat model_input(const RunConfig& cfg, const ClipRecord& rec,
                    const NormStats& stats) {
  const SpectrogramTensor spec = normalize(featurize(cfg, rec), stats);
  return spec.values.cast<Real>();
}

NormStats training_stats(const RunConfig& cfg,
                         const std::vector<ClipRecord>& records) {
  std::vector<SpectrogramTensor> specs;
  specs.reserve(records.size());
  for (const auto& rec : records) specs.push_back(featurize(cfg, rec));
  return compute_norm_stats(specs);
}

std::pair<std::vector<ClipRecord>, std::vector<ClipRecord>> split_heldout(
    const std::vector<ClipRecord>& records, double fraction) {
  if (records.empty()) throw std::invalid_argument("cannot split an empty manifest");
  const auto n_heldout = std::max<size_t>(
      1, static_cast<size_t>(fraction * static_cast<double>(records.size())));
  std::vector<ClipRecord> train(records.begin(),
                                records.end() - static_cast<long>(n_heldout));
  std::vector<ClipRecord> heldout(records.end() - static_cast<long>(n_heldout),
                                  records.end());
  if (train.empty()) { train = records; heldout = records; }
  return {train, heldout};
}

ClipTargets targets_from_record(const RunConfig& cfg, const ClipRecord& rec) {
  ClipTargets t;
  t.boundaries.resize(static_cast<Eigen::Index>(rec.events.size()), 2);
  for (size_t i = 0; i < rec.events.size(); ++i) {
    t.class_idx.push_back(cfg.class_index(rec.events[i].label));
    t.boundaries(static_cast<Eigen::Index>(i), 0) = rec.events[i].center_m;
    t.boundaries(static_cast<Eigen::Index>(i), 1) = rec.events[i].length_l;
  }
  t.tag_labels.assign(cfg.synth.classes.size(), 0.0);
  for (const auto& tag : rec.tags) {
    t.tag_labels[static_cast<size_t>(cfg.class_index(tag))] = 1.0;
  }
  return t;
}

DetectionLossParts strong_clip_loss(ad::Tape<Real>& tape, const RealModel& model,
                                    const ParamNodes& nodes,
                                    const RealModel::Predictions& preds,
                                    const ClipTargets& targets,
                                    const LossWeights& weights,
                                    int k_multiplicity) {
  (void)nodes;
  const int n_slots = model.config.n_queries;
  const int bg_index = model.config.n_classes;
  const auto n_events = static_cast<int>(targets.class_idx.size());

  DetectionLossParts parts;
  std::vector<int> slot_class(static_cast<size_t>(n_slots), bg_index);
  std::vector<int> matched_slots;
  Eigen::MatrixXd matched_targets(0, 2);

  if (n_events > 0) {
    const std::vector<int> expanded =
        one_to_many_expand(n_events, k_multiplicity, n_slots);
    const auto& probs = tape.value(preds.class_probs);
    const auto& bounds = tape.value(preds.boundaries);
    MatrixXd cost(static_cast<Eigen::Index>(expanded.size()), n_slots);
    MatchWeights mw{weights.lambda_l1, weights.lambda_iou, weights.lambda_c};
    for (size_t r = 0; r < expanded.size(); ++r) {
      const int tgt = expanded[r];
      for (int s = 0; s < n_slots; ++s) {
        cost(static_cast<Eigen::Index>(r), s) = pair_cost(
            {targets.boundaries(tgt, 0), targets.boundaries(tgt, 1)},
            static_cast<double>(probs(s, targets.class_idx[static_cast<size_t>(tgt)])),
            {static_cast<double>(bounds(s, 0)), static_cast<double>(bounds(s, 1))},
            mw);
      }
    }
    const MatchAssignment raw = hungarian(cost);
    parts.assignment.unmatched_predictions = raw.unmatched_predictions;
    matched_targets.resize(static_cast<Eigen::Index>(raw.pairs.size()), 2);
    for (size_t i = 0; i < raw.pairs.size(); ++i) {
      const int orig = expanded[static_cast<size_t>(raw.pairs[i].first)];
      const int slot = raw.pairs[i].second;
      parts.assignment.pairs.emplace_back(orig, slot);
      slot_class[static_cast<size_t>(slot)] = targets.class_idx[static_cast<size_t>(orig)];
      matched_slots.push_back(slot);
      matched_targets.row(static_cast<Eigen::Index>(i)) = targets.boundaries.row(orig);
    }
  }

  const int cls_node = losses::classification_loss(tape, preds.class_probs,
                                                   slot_class, bg_index, weights);
  parts.cls = static_cast<double>(tape.scalar(cls_node));

  int loc_node = -1;
  if (!matched_slots.empty()) {
    const int pred_ml = ad::gather_rows(tape, preds.boundaries, matched_slots);
    const int target_ml =
        ad::constant(tape, RealMat(matched_targets.cast<Real>()));
    loc_node = losses::location_loss(tape, pred_ml, target_ml, weights);
    parts.loc = static_cast<double>(tape.scalar(loc_node));
  } else {
    loc_node = ad::scalar_constant(tape, Real(0));
  }

  int tag_node = -1;
  if (preds.tag_probs >= 0) {
    tag_node = losses::tagging_loss(tape, preds.tag_probs, targets.tag_labels);
    parts.tag = static_cast<double>(tape.scalar(tag_node));
  }

  parts.total_node = losses::detection_loss(tape, loc_node, cls_node, weights, tag_node);
  parts.total = static_cast<double>(tape.scalar(parts.total_node));
  return parts;
}

}  // namespace sedt
