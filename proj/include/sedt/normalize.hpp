#pragma once

#include "sedt/types.hpp"

#include <vector>

namespace sedt {

/// Per-mel-bin standardization statistics, computed on the training split
/// only and applied everywhere.
struct NormStats {
  VectorXd mean;  // n_mels
  VectorXd std;   // n_mels, floored
};

inline constexpr double kStdFloor = 1e-5;

inline NormStats compute_norm_stats(const std::vector<SpectrogramTensor>& specs) {
  if (specs.empty()) throw std::invalid_argument("no spectrograms for stats");
  const Eigen::Index n_mels = specs[0].n_mels();
  VectorXd sum = VectorXd::Zero(n_mels);
  VectorXd sum_sq = VectorXd::Zero(n_mels);
  double count = 0.0;
  for (const auto& s : specs) {
    sum += s.values.colwise().sum().transpose();
    sum_sq += s.values.array().square().colwise().sum().matrix().transpose();
    count += static_cast<double>(s.frames());
  }
  NormStats stats;
  stats.mean = sum / count;
  stats.std = ((sum_sq.array() / count) - stats.mean.array().square())
                  .max(0.0)
                  .sqrt()
                  .max(kStdFloor)
                  .matrix();
  return stats;
}

/// Single application of (x - mean) / std per bin. Not idempotent: applying
/// the same stats twice rescales again; callers normalize exactly once.
inline SpectrogramTensor normalize(const SpectrogramTensor& spec,
                                   const NormStats& stats) {
  SpectrogramTensor out = spec;
  out.values = (spec.values.rowwise() - stats.mean.transpose()).array().rowwise() /
               stats.std.transpose().array();
  return out;
}

}  // namespace sedt
