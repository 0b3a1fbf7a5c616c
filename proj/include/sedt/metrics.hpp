#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

namespace sedt {

struct ScoredEvent {
  std::string label;
  double onset_sec = 0.0;
  double offset_sec = 0.0;
  double score = 1.0;
};

struct ClipEvents {
  std::string clip_id;
  double duration_sec = 0.0;
  std::vector<ScoredEvent> events;
};

struct ClassCounts {
  long long tp = 0, fp = 0, fn = 0;
  double precision() const { return tp + fp == 0 ? 0.0 : double(tp) / double(tp + fp); }
  double recall() const { return tp + fn == 0 ? 0.0 : double(tp) / double(tp + fn); }
  double f1() const {
    const double p = precision(), r = recall();
    return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
  }
};

struct ScoreReport {
  std::string protocol;
  std::map<std::string, ClassCounts> per_class;
  double macro_f1 = 0.0;

  std::string to_json() const;
};

/// Event-based scoring with onset/offset collars: a prediction is a TP iff
/// it has the reference's class and both boundary differences are within
/// the collar. Matching is greedy, refs and preds in onset order, one match
/// per reference.
ScoreReport event_based_f1(const std::vector<ClipEvents>& refs,
                           const std::vector<ClipEvents>& preds,
                           double collar_sec = 0.2);

/// Fixed-length segment scoring: a class is active in a segment when any of
/// its events overlaps the segment; TP/FP/FN are counted over activations.
ScoreReport segment_based_f1(const std::vector<ClipEvents>& refs,
                             const std::vector<ClipEvents>& preds,
                             double segment_sec = 1.0);

/// Clip-level multi-label tagging over already-thresholded tag sets.
ScoreReport tagging_f1(const std::vector<std::set<std::string>>& ref_tags,
                       const std::vector<std::set<std::string>>& pred_tags);

}  // namespace sedt
