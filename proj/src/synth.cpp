#include "sedt/synth.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace sedt {

std::string to_string(AnnotationKind kind) {
  switch (kind) {
    case AnnotationKind::kStrong: return "strong";
    case AnnotationKind::kWeak: return "weak";
    case AnnotationKind::kUnlabeled: return "unlabeled";
  }
  throw std::logic_error("unreachable annotation kind");
}

AnnotationKind annotation_kind_from_string(const std::string& s) {
  if (s == "strong") return AnnotationKind::kStrong;
  if (s == "weak") return AnnotationKind::kWeak;
  if (s == "unlabeled") return AnnotationKind::kUnlabeled;
  throw std::invalid_argument("unknown annotation_kind: " + s);
}

void SynthSpec::validate() const {
  if (clip_duration_sec <= 0.0)
    throw std::invalid_argument("clip_duration_sec must be positive");
  if (sample_rate_hz <= 0.0)
    throw std::invalid_argument("sample_rate_hz must be positive");
  if (events_per_clip.first < 0 || events_per_clip.second < events_per_clip.first)
    throw std::invalid_argument("events_per_clip range invalid");
  for (const auto& c : classes) {
    if (c.duration_range_sec.first <= 0.0 ||
        c.duration_range_sec.second < c.duration_range_sec.first)
      throw std::invalid_argument("duration range invalid for class " + c.label);
    if (c.duration_range_sec.second >= clip_duration_sec)
      throw std::invalid_argument("class " + c.label +
                                  " durations do not fit in the clip");
    if (c.freq_range_hz.first <= 0.0 ||
        c.freq_range_hz.second < c.freq_range_hz.first)
      throw std::invalid_argument("frequency range invalid for class " + c.label);
    if (c.freq_range_hz.second >= sample_rate_hz / 2.0)
      throw std::invalid_argument("class " + c.label + " exceeds Nyquist");
  }
}

SynthSpec SynthSpec::default_three_class() {
  SynthSpec spec;
  spec.classes = {
      {"tone", CarrierKind::kTone, {400.0, 900.0}, {0.5, 2.0}},
      {"chirp", CarrierKind::kChirp, {1200.0, 2600.0}, {0.5, 2.0}},
      {"burst", CarrierKind::kNoiseBurst, {3000.0, 3800.0}, {0.5, 2.0}},
  };
  return spec;
}

namespace {

// Short raised-cosine fade at both ends so events do not click.
double fade_gain(double t, double dur, double fade) {
  if (t < fade) return 0.5 - 0.5 * std::cos(M_PI * t / fade);
  if (t > dur - fade) return 0.5 - 0.5 * std::cos(M_PI * (dur - t) / fade);
  return 1.0;
}

struct PlacedEvent {
  int class_idx;
  double onset_sec;
  double dur_sec;
  double f0, f1;  // carrier frequency (range for chirp / band for burst)
};

}  // namespace

std::pair<ClipRecord, VectorXd> synth_clip(const SynthSpec& spec,
                                           long long seed,
                                           const std::string& clip_id) {
  spec.validate();
  std::mt19937_64 rng(static_cast<unsigned long long>(seed) * 0x9e3779b97f4a7c15ULL + 1);

  const double dur = spec.clip_duration_sec;
  const auto n = static_cast<Eigen::Index>(std::llround(dur * spec.sample_rate_hz));

  std::uniform_int_distribution<int> n_events_dist(spec.events_per_clip.first,
                                                   spec.events_per_clip.second);
  const int n_events = spec.classes.empty() ? 0 : n_events_dist(rng);

  std::vector<PlacedEvent> placed;
  std::uniform_int_distribution<int> class_dist(
      0, static_cast<int>(spec.classes.size()) - 1);
  for (int i = 0; i < n_events; ++i) {
    const int ci = class_dist(rng);
    const auto& cls = spec.classes[static_cast<size_t>(ci)];
    std::uniform_real_distribution<double> dur_dist(cls.duration_range_sec.first,
                                                    cls.duration_range_sec.second);
    std::uniform_real_distribution<double> freq_dist(cls.freq_range_hz.first,
                                                     cls.freq_range_hz.second);
    const double ev_dur = dur_dist(rng);
    std::uniform_real_distribution<double> onset_dist(0.0, dur - ev_dur);

    // Same-class events must keep a positive gap; resample the onset a few
    // times and drop the event if no slot is found.
    bool ok = false;
    double onset = 0.0;
    for (int attempt = 0; attempt < 32 && !ok; ++attempt) {
      onset = onset_dist(rng);
      ok = true;
      for (const auto& p : placed) {
        if (p.class_idx != ci) continue;
        const double gap_lo = p.onset_sec - spec.min_same_class_gap_sec - ev_dur;
        const double gap_hi = p.onset_sec + p.dur_sec + spec.min_same_class_gap_sec;
        if (onset > gap_lo && onset < gap_hi) { ok = false; break; }
      }
    }
    if (!ok) continue;

    PlacedEvent pe;
    pe.class_idx = ci;
    pe.onset_sec = onset;
    pe.dur_sec = ev_dur;
    pe.f0 = freq_dist(rng);
    pe.f1 = freq_dist(rng);
    placed.push_back(pe);
  }

  // Background: white noise scaled so event-to-noise ratio lands in the
  // requested SNR band (events are synthesized near unit amplitude).
  std::uniform_real_distribution<double> snr_dist(spec.snr_db_range.first,
                                                  spec.snr_db_range.second);
  const double snr_db = snr_dist(rng);
  const double noise_rms = std::pow(10.0, -snr_db / 20.0) / std::sqrt(2.0);

  VectorXd wave(n);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (Eigen::Index i = 0; i < n; ++i) wave[i] = noise_rms * gauss(rng);

  const double sr = spec.sample_rate_hz;
  const double fade = 0.01;
  for (const auto& p : placed) {
    const auto i0 = static_cast<Eigen::Index>(std::llround(p.onset_sec * sr));
    const auto len = static_cast<Eigen::Index>(std::llround(p.dur_sec * sr));
    const auto& cls = spec.classes[static_cast<size_t>(p.class_idx)];
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    double phase = 0.0;
    for (Eigen::Index k = 0; k < len && i0 + k < n; ++k) {
      const double t = static_cast<double>(k) / sr;
      double s = 0.0;
      switch (cls.carrier) {
        case CarrierKind::kTone:
          s = std::sin(2.0 * M_PI * p.f0 * t);
          break;
        case CarrierKind::kChirp: {
          const double f = std::min(p.f0, p.f1) +
                           (std::max(p.f1, p.f0) - std::min(p.f0, p.f1)) *
                               (t / p.dur_sec);
          phase += 2.0 * M_PI * f / sr;
          s = std::sin(phase);
          break;
        }
        case CarrierKind::kNoiseBurst: {
          // Band-limit cheaply by ring-modulating noise with the band center.
          const double carrier = std::sin(2.0 * M_PI * 0.5 * (p.f0 + p.f1) * t);
          s = unit(rng) * 0.5 + carrier * 0.7;
          break;
        }
      }
      wave[i0 + k] += 0.7 * s * fade_gain(t, p.dur_sec, fade);
    }
  }

  ClipRecord rec;
  rec.clip_id = clip_id.empty() ? ("clip_" + std::to_string(seed)) : clip_id;
  rec.duration_sec = dur;
  rec.synth_seed = seed;
  rec.annotation_kind = AnnotationKind::kStrong;
  for (const auto& p : placed) {
    const auto& cls = spec.classes[static_cast<size_t>(p.class_idx)];
    Event e = Event::from_onset_offset(cls.label, p.onset_sec / dur,
                                       (p.onset_sec + p.dur_sec) / dur);
    rec.events.push_back(e);
    rec.tags.insert(cls.label);
  }
  std::sort(rec.events.begin(), rec.events.end(),
            [](const Event& a, const Event& b) {
              if (a.onset() != b.onset()) return a.onset() < b.onset();
              return a.label < b.label;
            });
  return {rec, wave};
}

}  // namespace sedt
