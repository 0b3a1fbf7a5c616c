#include "sedt/metrics.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace sedt {

namespace {

double macro_over(const std::map<std::string, ClassCounts>& per_class) {
  if (per_class.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& [cls, counts] : per_class) sum += counts.f1();
  return sum / static_cast<double>(per_class.size());
}

std::vector<ScoredEvent> sorted_by_onset(std::vector<ScoredEvent> events) {
  std::stable_sort(events.begin(), events.end(),
                   [](const ScoredEvent& a, const ScoredEvent& b) {
                     return a.onset_sec < b.onset_sec;
                   });
  return events;
}

const ClipEvents* find_clip(const std::vector<ClipEvents>& clips,
                            const std::string& id) {
  for (const auto& c : clips) {
    if (c.clip_id == id) return &c;
  }
  return nullptr;
}

std::set<std::string> all_labels(const std::vector<ClipEvents>& refs,
                                 const std::vector<ClipEvents>& preds) {
  std::set<std::string> labels;
  for (const auto& c : refs)
    for (const auto& e : c.events) labels.insert(e.label);
  for (const auto& c : preds)
    for (const auto& e : c.events) labels.insert(e.label);
  return labels;
}

}  // namespace

std::string ScoreReport::to_json() const {
  nlohmann::json j;
  j["protocol"] = protocol;
  j["macro_f1"] = macro_f1;
  j["per_class"] = nlohmann::json::object();
  for (const auto& [cls, c] : per_class) {
    j["per_class"][cls] = {{"precision", c.precision()}, {"recall", c.recall()},
                           {"f1", c.f1()},               {"tp", c.tp},
                           {"fp", c.fp},                 {"fn", c.fn}};
  }
  return j.dump(2);
}

ScoreReport event_based_f1(const std::vector<ClipEvents>& refs,
                           const std::vector<ClipEvents>& preds,
                           double collar_sec) {
  ScoreReport report;
  report.protocol = "event_based collar_sec=" + std::to_string(collar_sec);
  for (const auto& label : all_labels(refs, preds)) report.per_class[label] = {};

  for (const auto& ref_clip : refs) {
    const ClipEvents* pred_clip = find_clip(preds, ref_clip.clip_id);
    for (auto& [label, counts] : report.per_class) {
      std::vector<ScoredEvent> r, p;
      for (const auto& e : ref_clip.events)
        if (e.label == label) r.push_back(e);
      if (pred_clip != nullptr) {
        for (const auto& e : pred_clip->events)
          if (e.label == label) p.push_back(e);
      }
      r = sorted_by_onset(std::move(r));
      p = sorted_by_onset(std::move(p));
      std::vector<bool> used(p.size(), false);
      long long tp = 0;
      for (const auto& re : r) {
        for (size_t i = 0; i < p.size(); ++i) {
          if (used[i]) continue;
          if (std::abs(p[i].onset_sec - re.onset_sec) <= collar_sec &&
              std::abs(p[i].offset_sec - re.offset_sec) <= collar_sec) {
            used[i] = true;
            ++tp;
            break;
          }
        }
      }
      counts.tp += tp;
      counts.fn += static_cast<long long>(r.size()) - tp;
      counts.fp += static_cast<long long>(p.size()) - tp;
    }
  }
  // Predictions for clips absent from the reference list are all FPs.
  for (const auto& pred_clip : preds) {
    if (find_clip(refs, pred_clip.clip_id) != nullptr) continue;
    for (const auto& e : pred_clip.events) report.per_class[e.label].fp += 1;
  }
  report.macro_f1 = macro_over(report.per_class);
  return report;
}

ScoreReport segment_based_f1(const std::vector<ClipEvents>& refs,
                             const std::vector<ClipEvents>& preds,
                             double segment_sec) {
  if (segment_sec <= 0.0) throw std::invalid_argument("segment_sec must be positive");
  ScoreReport report;
  report.protocol = "segment_based segment_sec=" + std::to_string(segment_sec);
  for (const auto& label : all_labels(refs, preds)) report.per_class[label] = {};

  for (const auto& ref_clip : refs) {
    const ClipEvents* pred_clip = find_clip(preds, ref_clip.clip_id);
    const auto n_segments = static_cast<long long>(
        std::ceil(ref_clip.duration_sec / segment_sec - 1e-12));
    auto active = [&](const std::vector<ScoredEvent>& events,
                      const std::string& label, long long seg) {
      const double s0 = static_cast<double>(seg) * segment_sec;
      const double s1 = s0 + segment_sec;
      for (const auto& e : events) {
        if (e.label == label && e.onset_sec < s1 && e.offset_sec > s0) return true;
      }
      return false;
    };
    for (auto& [label, counts] : report.per_class) {
      for (long long seg = 0; seg < n_segments; ++seg) {
        const bool r = active(ref_clip.events, label, seg);
        const bool p = pred_clip != nullptr && active(pred_clip->events, label, seg);
        if (r && p) ++counts.tp;
        else if (p) ++counts.fp;
        else if (r) ++counts.fn;
      }
    }
  }
  report.macro_f1 = macro_over(report.per_class);
  return report;
}

ScoreReport tagging_f1(const std::vector<std::set<std::string>>& ref_tags,
                       const std::vector<std::set<std::string>>& pred_tags) {
  if (ref_tags.size() != pred_tags.size())
    throw std::invalid_argument("tagging_f1: clip count mismatch");
  ScoreReport report;
  report.protocol = "tagging";
  for (const auto& tags : ref_tags)
    for (const auto& t : tags) report.per_class[t] = {};
  for (const auto& tags : pred_tags)
    for (const auto& t : tags) report.per_class[t] = {};

  for (size_t i = 0; i < ref_tags.size(); ++i) {
    for (auto& [label, counts] : report.per_class) {
      const bool r = ref_tags[i].count(label) > 0;
      const bool p = pred_tags[i].count(label) > 0;
      if (r && p) ++counts.tp;
      else if (p) ++counts.fp;
      else if (r) ++counts.fn;
    }
  }
  report.macro_f1 = macro_over(report.per_class);
  return report;
}

}  // namespace sedt
