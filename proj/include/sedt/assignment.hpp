#pragma once

#include "sedt/types.hpp"

#include <utility>
#include <vector>

namespace sedt {

struct Interval {
  double onset = 0.0;
  double offset = 0.0;
  double length() const { return offset - onset; }
};

/// Assignment from target indices to prediction slots.
struct MatchAssignment {
  std::vector<std::pair<int, int>> pairs;  // (target_index, prediction_index)
  std::vector<int> unmatched_predictions;
};

/// (m, l) -> [m - l/2, m + l/2], clamped to [0,1].
Interval to_interval(double center_m, double length_l);

/// 1-D intersection over union; 0 when either interval is degenerate.
double iou_1d(const Interval& a, const Interval& b);

struct MatchWeights {
  double lambda_l1 = 5.0;
  double lambda_iou = 2.0;
  double lambda_class = 1.0;
};

/// Matching cost between one target and one prediction slot:
/// lambda_l1 * |b - b_hat|_1 + lambda_iou * (1 - iou) - lambda_class * p_hat(c).
double pair_cost(const std::pair<double, double>& target_boundary,
                 double pred_class_prob_of_target,
                 const std::pair<double, double>& pred_boundary,
                 const MatchWeights& weights);

/// Minimum-cost injective assignment of each row (target) to a distinct
/// column (prediction). Requires cols >= rows and finite entries. Ties are
/// broken deterministically toward low prediction indices. pairs are
/// returned in target-index order.
MatchAssignment hungarian(const MatrixXd& cost_matrix);

/// Duplicate each target k times so up to k predictions can match one event.
/// Returns the expanded index list: expanded[i] = original target index.
/// Throws when k * n_targets exceeds n_predictions.
std::vector<int> one_to_many_expand(int n_targets, int multiplicity,
                                    int n_predictions);

}  // namespace sedt
