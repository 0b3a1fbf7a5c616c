#include "sedt/mel.hpp"

#include <unsupported/Eigen/FFT>

#include <cmath>
#include <complex>
#include <stdexcept>
#include <vector>

namespace sedt {

namespace {

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

int next_pow2(int n) {
  int p = 1;
  while (p < n) p <<= 1;
  return p;
}

}  // namespace

MatrixXd mel_filterbank(int n_mels, int n_fft, double sample_rate_hz,
                        double fmin_hz, double fmax_hz) {
  if (fmax_hz <= 0.0) fmax_hz = sample_rate_hz / 2.0;
  const int n_bins = n_fft / 2 + 1;
  const double mel_lo = hz_to_mel(fmin_hz);
  const double mel_hi = hz_to_mel(fmax_hz);

  std::vector<double> edges(static_cast<size_t>(n_mels) + 2);
  for (int i = 0; i < n_mels + 2; ++i) {
    edges[static_cast<size_t>(i)] =
        mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (n_mels + 1));
  }

  MatrixXd fb = MatrixXd::Zero(n_mels, n_bins);
  for (int m = 0; m < n_mels; ++m) {
    const double lo = edges[static_cast<size_t>(m)];
    const double c = edges[static_cast<size_t>(m) + 1];
    const double hi = edges[static_cast<size_t>(m) + 2];
    for (int k = 0; k < n_bins; ++k) {
      const double f = k * sample_rate_hz / n_fft;
      if (f <= lo || f >= hi) continue;
      fb(m, k) = f <= c ? (f - lo) / (c - lo) : (hi - f) / (hi - c);
    }
  }
  return fb;
}

VectorXd mel_center_frequencies(int n_mels, double sample_rate_hz,
                                double fmin_hz, double fmax_hz) {
  if (fmax_hz <= 0.0) fmax_hz = sample_rate_hz / 2.0;
  const double mel_lo = hz_to_mel(fmin_hz);
  const double mel_hi = hz_to_mel(fmax_hz);
  VectorXd centers(n_mels);
  for (int m = 0; m < n_mels; ++m) {
    centers[m] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * (m + 1) / (n_mels + 1));
  }
  return centers;
}

SpectrogramTensor mel_spectrogram(const VectorXd& waveform,
                                  double sample_rate_hz,
                                  const MelParams& params) {
  if (waveform.size() == 0) throw std::invalid_argument("empty waveform");
  if (params.hop_sec <= 0.0 || params.win_sec <= 0.0)
    throw std::invalid_argument("hop_sec and win_sec must be positive");

  const auto hop = static_cast<Eigen::Index>(std::llround(params.hop_sec * sample_rate_hz));
  const auto win = static_cast<Eigen::Index>(std::llround(params.win_sec * sample_rate_hz));
  if (waveform.size() < win)
    throw std::invalid_argument("waveform shorter than one analysis window");

  const double duration_sec = static_cast<double>(waveform.size()) / sample_rate_hz;
  const double frames_per_sec = 1.0 / params.hop_sec;
  const auto n_frames =
      static_cast<Eigen::Index>(std::llround(duration_sec * frames_per_sec));
  const int n_fft = next_pow2(static_cast<int>(win));

  const MatrixXd fb = mel_filterbank(params.n_mels, n_fft, sample_rate_hz,
                                     params.fmin_hz, params.fmax_hz);

  VectorXd window(win);
  for (Eigen::Index i = 0; i < win; ++i) {
    window[i] = 0.5 - 0.5 * std::cos(2.0 * M_PI * i / static_cast<double>(win - 1));
  }

  Eigen::FFT<double> fft;
  std::vector<double> frame(static_cast<size_t>(n_fft), 0.0);
  std::vector<std::complex<double>> spectrum;

  SpectrogramTensor out;
  out.values.resize(n_frames, params.n_mels);
  out.frames_per_sec = frames_per_sec;

  VectorXd power(n_fft / 2 + 1);
  for (Eigen::Index t = 0; t < n_frames; ++t) {
    const Eigen::Index start = t * hop;
    for (Eigen::Index i = 0; i < n_fft; ++i) {
      const Eigen::Index src = start + i;
      frame[static_cast<size_t>(i)] =
          (i < win && src < waveform.size()) ? waveform[src] * window[i] : 0.0;
    }
    fft.fwd(spectrum, frame);
    for (Eigen::Index k = 0; k <= n_fft / 2; ++k) {
      power[k] = std::norm(spectrum[static_cast<size_t>(k)]);
    }
    out.values.row(t) =
        (fb * power).array().max(params.log_floor).log().transpose();
  }
  return out;
}

}  // namespace sedt
