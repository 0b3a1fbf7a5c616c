#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <set>
#include <string>
#include <vector>

namespace sedt {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// One sound event, stored as (label, center m, length l) in normalized
/// clip coordinates. Onset/offset are derived views.
struct Event {
  std::string label;
  double center_m = 0.0;  // fraction of clip duration, in [0,1]
  double length_l = 0.0;  // fraction of clip duration, in (0,1]

  double onset() const { return center_m - length_l / 2.0; }
  double offset() const { return center_m + length_l / 2.0; }

  double onset_sec(double duration_sec) const { return onset() * duration_sec; }
  double offset_sec(double duration_sec) const { return offset() * duration_sec; }

  static Event from_onset_offset(const std::string& label, double onset,
                                 double offset) {
    Event e;
    e.label = label;
    e.center_m = (onset + offset) / 2.0;
    e.length_l = offset - onset;
    return e;
  }

  /// In-clip invariant: 0 <= m - l/2, m + l/2 <= 1, l > 0.
  bool valid() const {
    return length_l > 0.0 && onset() >= -1e-12 && offset() <= 1.0 + 1e-12;
  }

  bool operator==(const Event& other) const {
    return label == other.label && center_m == other.center_m &&
           length_l == other.length_l;
  }
};

enum class AnnotationKind { kStrong, kWeak, kUnlabeled };

std::string to_string(AnnotationKind kind);
AnnotationKind annotation_kind_from_string(const std::string& s);

/// One audio clip's identity, synthesis parameters, labels, and role.
/// For weak clips the events are retained in the manifest (they back the
/// evaluation ground truth) but training code must only read `tags`;
/// for unlabeled clips training code must read neither.
struct ClipRecord {
  std::string clip_id;
  double duration_sec = 0.0;
  long long synth_seed = 0;
  std::vector<Event> events;  // sorted by onset
  std::set<std::string> tags;
  AnnotationKind annotation_kind = AnnotationKind::kStrong;
};

/// Log-mel spectrogram: frames (rows) x mel bins (cols).
struct SpectrogramTensor {
  MatrixXd values;  // T_s x n_mels
  double frames_per_sec = 0.0;

  Eigen::Index frames() const { return values.rows(); }
  Eigen::Index n_mels() const { return values.cols(); }
};

}  // namespace sedt
