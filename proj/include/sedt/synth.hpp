#pragma once

#include "sedt/types.hpp"

#include <string>
#include <utility>
#include <vector>

namespace sedt {

enum class CarrierKind { kTone, kChirp, kNoiseBurst };

struct ClassDef {
  std::string label;
  CarrierKind carrier = CarrierKind::kTone;
  std::pair<double, double> freq_range_hz = {400.0, 800.0};
  std::pair<double, double> duration_range_sec = {0.5, 2.0};
};

/// Parametric scene description: everything needed to synthesize a corpus
/// deterministically from per-clip seeds.
struct SynthSpec {
  std::vector<ClassDef> classes;
  double clip_duration_sec = 10.0;
  std::pair<int, int> events_per_clip = {1, 4};
  std::pair<double, double> snr_db_range = {10.0, 20.0};
  double sample_rate_hz = 16000.0;
  double min_same_class_gap_sec = 0.02;  // one hop at the default feature rate

  void validate() const;  // throws std::invalid_argument

  static SynthSpec default_three_class();
};

/// Deterministic scene synthesis: (spec, seed) fully determines the waveform
/// and the event list. Events of different classes may overlap; events of the
/// same class keep at least min_same_class_gap_sec between them.
/// The returned ClipRecord has annotation_kind = kStrong and events sorted by
/// onset; callers degrade it to weak/unlabeled as needed.
std::pair<ClipRecord, VectorXd> synth_clip(const SynthSpec& spec,
                                           long long seed,
                                           const std::string& clip_id = "");

}  // namespace sedt
