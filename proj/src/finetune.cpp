#include "sedt/finetune.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>

namespace sedt {

void TransferPolicy::validate() const {
  for (const auto& g : copy) {
    if (reinitialize.count(g) > 0)
      throw std::invalid_argument("transfer policy lists " + g +
                                  " as both copied and reinitialized");
  }
  const std::set<std::string> required = {
      "backbone", "encoder", "decoder", "event_queries", "boundary_head",
      "class_head", "audio_query", "tagging_head"};
  for (const auto& g : required) {
    if (copy.count(g) == 0 && reinitialize.count(g) == 0)
      throw std::invalid_argument("transfer policy does not cover group " + g);
  }
}

void transfer_weights(const Checkpoint& ckpt, RealModel& model,
                      const TransferPolicy& policy, unsigned long long seed) {
  policy.validate();
  model.init(seed);
  for (const auto& name : model.params.order) {
    const std::string group = ParamStore<Real>::group_of(name);
    if (policy.copy.count(group) == 0) continue;
    auto it = ckpt.tensors.find(name);
    if (it == ckpt.tensors.end())
      throw std::runtime_error("checkpoint is missing tensor " + name +
                               " of copied group " + group);
    auto& dst = model.params.at(name);
    if (it->second.rows() != dst.rows() || it->second.cols() != dst.cols())
      throw std::runtime_error("shape mismatch in copied group " + group +
                               " (tensor " + name + ")");
    dst = it->second;
  }
}

namespace {

std::vector<ClipEvents> reference_events(const RunConfig& cfg,
                                         const std::vector<ClipRecord>& records) {
  std::vector<ClipEvents> refs;
  for (const auto& r : records) {
    ClipEvents ce;
    ce.clip_id = r.clip_id;
    ce.duration_sec = r.duration_sec;
    for (const auto& e : r.events) {
      ce.events.push_back({e.label, e.onset_sec(r.duration_sec),
                           e.offset_sec(r.duration_sec), 1.0});
    }
    refs.push_back(std::move(ce));
  }
  return refs;
}

}  // namespace

FinetuneResult finetune(const RunConfig& cfg,
                        const std::vector<ClipRecord>& strong,
                        const std::vector<ClipRecord>& weak, RealModel& model,
                        const NormStats& stats, int epochs_override) {
  if (strong.empty()) throw std::invalid_argument("fine-tuning needs strong clips");
  const int epochs = epochs_override >= 0 ? epochs_override : cfg.finetune.epochs;

  auto [train, heldout] = split_heldout(strong, cfg.finetune.heldout_fraction);

  std::vector<RealMat> train_in, held_in;
  for (const auto& r : train) train_in.push_back(model_input(cfg, r, stats));
  for (const auto& r : heldout) held_in.push_back(model_input(cfg, r, stats));
  std::vector<RealMat> weak_in;
  for (const auto& r : weak) weak_in.push_back(model_input(cfg, r, stats));

  std::vector<ClipTargets> train_targets, weak_targets;
  for (const auto& r : train) train_targets.push_back(targets_from_record(cfg, r));
  for (const auto& r : weak) {
    ClipRecord tags_only = r;  // weak clips: events withheld from training
    tags_only.events.clear();
    weak_targets.push_back(targets_from_record(cfg, tags_only));
  }

  AdamW::Options opts;
  opts.lr = cfg.finetune.lr;
  opts.backbone_lr = cfg.finetune.backbone_lr;
  opts.weight_decay = cfg.finetune.weight_decay;
  opts.grad_clip = cfg.finetune.grad_clip;
  opts.trainable_groups = {"backbone", "encoder", "decoder", "event_queries",
                           "boundary_head", "class_head", "audio_query",
                           "tagging_head"};
  AdamW optimizer(opts);
  const LossWeights& weights = cfg.finetune.loss;

  const std::vector<ClipEvents> heldout_refs = reference_events(cfg, heldout);

  auto heldout_f1 = [&]() {
    std::vector<ClipEvents> preds;
    for (size_t i = 0; i < heldout.size(); ++i) {
      const auto out = infer_clip(cfg, model, held_in[i], heldout[i].duration_sec);
      ClipEvents ce;
      ce.clip_id = heldout[i].clip_id;
      ce.duration_sec = heldout[i].duration_sec;
      ce.events = out.events;
      preds.push_back(std::move(ce));
    }
    return event_based_f1(heldout_refs, preds, cfg.eval.collar_sec).macro_f1;
  };

  FinetuneResult result;
  std::mt19937_64 shuffle_rng(static_cast<unsigned long long>(cfg.seed) + 29);
  // Interleave strong and weak examples into one epoch-long order.
  std::vector<std::pair<bool, size_t>> order;
  for (size_t i = 0; i < train.size(); ++i) order.emplace_back(true, i);
  for (size_t i = 0; i < weak.size(); ++i) order.emplace_back(false, i);

  for (int epoch = 0; epoch < epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    FinetuneLogEntry entry;
    entry.epoch = epoch;
    GradMap grads;
    int in_batch = 0;
    for (const auto& [is_strong, idx] : order) {
      ad::Tape<Real> tape;
      const ParamNodes nodes = model.bind(tape);
      if (is_strong) {
        const auto preds =
            model.forward(tape, nodes, train_in[idx], Mode::kFinetune);
        const auto parts = strong_clip_loss(tape, model, nodes, preds,
                                            train_targets[idx], weights,
                                            cfg.finetune.k_multiplicity);
        tape.backward(parts.total_node);
        entry.loss_total += parts.total;
        entry.loss_loc += parts.loc;
        entry.loss_c += parts.cls;
        entry.loss_at += parts.tag;
      } else {
        // Weak clips skip matching entirely: tagging loss only.
        const auto preds =
            model.forward(tape, nodes, weak_in[idx], Mode::kFinetune);
        const int tag_node = losses::tagging_loss(tape, preds.tag_probs,
                                                  weak_targets[idx].tag_labels);
        const int total =
            ad::scale(tape, tag_node, static_cast<Real>(weights.lambda_at));
        tape.backward(total);
        entry.loss_total += static_cast<double>(tape.scalar(total));
        entry.loss_at += static_cast<double>(tape.scalar(tag_node));
      }
      accumulate_grads(tape, nodes, grads, 1.0 / cfg.finetune.batch_size);
      if (++in_batch == cfg.finetune.batch_size) {
        optimizer.step(model, grads);
        grads.clear();
        in_batch = 0;
      }
    }
    if (in_batch > 0) optimizer.step(model, grads);

    const auto n = static_cast<double>(order.size());
    entry.loss_total /= n;
    entry.loss_loc /= n;
    entry.loss_c /= n;
    entry.loss_at /= n;
    entry.heldout_eb_f1 = heldout_f1();
    result.best_heldout_eb_f1 = std::max(result.best_heldout_eb_f1,
                                         entry.heldout_eb_f1);
    result.log.push_back(entry);
  }
  return result;
}

InferenceOutput infer_clip(const RunConfig& cfg, const RealModel& model,
                           const RealMat& normalized_spec, double duration_sec) {
  ad::Tape<Real> tape;
  const ParamNodes nodes = model.bind(tape);
  const auto preds = model.forward(tape, nodes, normalized_spec, Mode::kFinetune);

  const auto& probs = tape.value(preds.class_probs);
  const auto& bounds = tape.value(preds.boundaries);
  const auto& tag_probs = tape.value(preds.tag_probs);
  const int bg = model.config.n_classes;

  InferenceOutput out;
  for (int c = 0; c < model.config.n_classes; ++c) {
    out.tags.emplace_back(cfg.synth.classes[static_cast<size_t>(c)].label,
                          static_cast<double>(tag_probs(0, c)));
  }

  struct Candidate {
    int cls;
    double score;
    Interval iv;
    int slot;
  };
  std::vector<Candidate> kept;
  for (int s = 0; s < model.config.n_queries; ++s) {
    int best = 0;
    for (int c = 1; c <= bg; ++c) {
      if (probs(s, c) > probs(s, best)) best = c;
    }
    if (best == bg) continue;
    const double score = static_cast<double>(probs(s, best));
    if (score < cfg.eval.tau_event) continue;
    // Fusion with the clip-level tags: hard filter (or score rescale).
    const double tag_p = static_cast<double>(tag_probs(0, best));
    double fused_score = score;
    if (cfg.eval.tag_rescale) {
      fused_score = score * tag_p;
      if (fused_score < cfg.eval.tau_event) continue;
    } else if (tag_p < cfg.eval.tau_tag) {
      continue;
    }
    kept.push_back({best, fused_score,
                    to_interval(static_cast<double>(bounds(s, 0)),
                                static_cast<double>(bounds(s, 1))),
                    s});
  }

  // Per-class de-overlap: greedy by confidence, index tie-break.
  std::stable_sort(kept.begin(), kept.end(), [](const Candidate& a, const Candidate& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.slot < b.slot;
  });
  std::vector<Candidate> final_events;
  for (const auto& cand : kept) {
    bool suppressed = false;
    for (const auto& prev : final_events) {
      if (prev.cls == cand.cls && iou_1d(prev.iv, cand.iv) > cfg.eval.iou_suppress) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) final_events.push_back(cand);
  }
  std::stable_sort(final_events.begin(), final_events.end(),
                   [](const Candidate& a, const Candidate& b) {
                     return a.iv.onset < b.iv.onset;
                   });
  for (const auto& e : final_events) {
    out.events.push_back({cfg.synth.classes[static_cast<size_t>(e.cls)].label,
                          e.iv.onset * duration_sec, e.iv.offset * duration_sec,
                          e.score});
  }
  return out;
}

void save_inference(const std::vector<std::pair<std::string, InferenceOutput>>& outputs,
                    const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open inference output: " + path);
  for (const auto& [clip_id, result] : outputs) {
    nlohmann::json j;
    j["clip_id"] = clip_id;
    j["events"] = nlohmann::json::array();
    for (const auto& e : result.events) {
      j["events"].push_back({{"label", e.label},
                             {"onset_sec", e.onset_sec},
                             {"offset_sec", e.offset_sec},
                             {"score", e.score}});
    }
    j["tags"] = nlohmann::json::array();
    for (const auto& [label, score] : result.tags) {
      j["tags"].push_back({{"label", label}, {"score", score}});
    }
    out << j.dump() << '\n';
  }
}

std::vector<ClipEvents> load_inference_events(const std::string& path,
                                              double duration_sec) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open inference output: " + path);
  std::vector<ClipEvents> clips;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    ClipEvents ce;
    ce.clip_id = j.at("clip_id").get<std::string>();
    ce.duration_sec = duration_sec;
    for (const auto& je : j.at("events")) {
      ce.events.push_back({je.at("label").get<std::string>(),
                           je.at("onset_sec").get<double>(),
                           je.at("offset_sec").get<double>(),
                           je.at("score").get<double>()});
    }
    clips.push_back(std::move(ce));
  }
  return clips;
}

std::vector<std::pair<std::string, std::set<std::string>>> load_inference_tags(
    const std::string& path, double tau_tag) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open inference output: " + path);
  std::vector<std::pair<std::string, std::set<std::string>>> result;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    std::set<std::string> tags;
    for (const auto& jt : j.at("tags")) {
      if (jt.at("score").get<double>() >= tau_tag)
        tags.insert(jt.at("label").get<std::string>());
    }
    result.emplace_back(j.at("clip_id").get<std::string>(), std::move(tags));
  }
  return result;
}

}  // namespace sedt
