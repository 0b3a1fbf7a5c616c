#pragma once

#include "sedt/types.hpp"

namespace sedt {

struct MelParams {
  int n_mels = 64;
  double hop_sec = 0.02;
  double win_sec = 0.04;
  double fmin_hz = 0.0;
  double fmax_hz = 0.0;      // 0 means sample_rate / 2
  double log_floor = 1e-5;   // applied to mel power before log
};

/// Triangular HTK-style mel filterbank, n_mels x (n_fft/2 + 1).
MatrixXd mel_filterbank(int n_mels, int n_fft, double sample_rate_hz,
                        double fmin_hz, double fmax_hz);

/// Center frequency (Hz) of each mel filter; used by tests to locate the
/// bin a pure tone should dominate.
VectorXd mel_center_frequencies(int n_mels, double sample_rate_hz,
                                double fmin_hz, double fmax_hz);

/// Log-mel magnitudes. T_s = round(duration * frames_per_sec) frames with
/// frames_per_sec = 1/hop_sec; the tail is zero-padded so the frame count is
/// exact. Throws if the waveform is shorter than one window.
SpectrogramTensor mel_spectrogram(const VectorXd& waveform,
                                  double sample_rate_hz,
                                  const MelParams& params);

}  // namespace sedt
