#include "sedt/assignment.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace sedt {

Interval to_interval(double center_m, double length_l) {
  Interval iv;
  iv.onset = std::clamp(center_m - length_l / 2.0, 0.0, 1.0);
  iv.offset = std::clamp(center_m + length_l / 2.0, 0.0, 1.0);
  return iv;
}

double iou_1d(const Interval& a, const Interval& b) {
  const double inter =
      std::max(0.0, std::min(a.offset, b.offset) - std::max(a.onset, b.onset));
  const double uni = a.length() + b.length() - inter;
  if (uni <= 0.0) return 0.0;
  return inter / uni;
}

double pair_cost(const std::pair<double, double>& target_boundary,
                 double pred_class_prob_of_target,
                 const std::pair<double, double>& pred_boundary,
                 const MatchWeights& weights) {
  const double l1 = std::abs(target_boundary.first - pred_boundary.first) +
                    std::abs(target_boundary.second - pred_boundary.second);
  const double iou = iou_1d(to_interval(target_boundary.first, target_boundary.second),
                            to_interval(pred_boundary.first, pred_boundary.second));
  return weights.lambda_l1 * l1 + weights.lambda_iou * (1.0 - iou) -
         weights.lambda_class * pred_class_prob_of_target;
}

MatchAssignment hungarian(const MatrixXd& cost_matrix) {
  const int n = static_cast<int>(cost_matrix.rows());
  const int m = static_cast<int>(cost_matrix.cols());
  if (m < n)
    throw std::invalid_argument(
        "hungarian: fewer predictions than targets; expand predictions "
        "instead of dropping targets");
  if (!cost_matrix.allFinite())
    throw std::invalid_argument("hungarian: cost matrix has non-finite entries");

  // Potentials-based shortest augmenting path, O(n^2 m). Columns are scanned
  // in increasing index so cost ties resolve toward low prediction indices.
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<size_t>(n) + 1, 0.0);
  std::vector<double> v(static_cast<size_t>(m) + 1, 0.0);
  std::vector<int> match(static_cast<size_t>(m) + 1, 0);  // col -> row (1-based)
  std::vector<int> way(static_cast<size_t>(m) + 1, 0);

  for (int i = 1; i <= n; ++i) {
    match[0] = i;
    int j0 = 0;
    std::vector<double> minv(static_cast<size_t>(m) + 1, kInf);
    std::vector<bool> used(static_cast<size_t>(m) + 1, false);
    do {
      used[static_cast<size_t>(j0)] = true;
      const int i0 = match[static_cast<size_t>(j0)];
      int j1 = -1;
      double delta = kInf;
      for (int j = 1; j <= m; ++j) {
        if (used[static_cast<size_t>(j)]) continue;
        const double cur = cost_matrix(i0 - 1, j - 1) - u[static_cast<size_t>(i0)] -
                           v[static_cast<size_t>(j)];
        if (cur < minv[static_cast<size_t>(j)]) {
          minv[static_cast<size_t>(j)] = cur;
          way[static_cast<size_t>(j)] = j0;
        }
        if (minv[static_cast<size_t>(j)] < delta) {
          delta = minv[static_cast<size_t>(j)];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[static_cast<size_t>(j)]) {
          u[static_cast<size_t>(match[static_cast<size_t>(j)])] += delta;
          v[static_cast<size_t>(j)] -= delta;
        } else {
          minv[static_cast<size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (match[static_cast<size_t>(j0)] != 0);
    do {
      const int j1 = way[static_cast<size_t>(j0)];
      match[static_cast<size_t>(j0)] = match[static_cast<size_t>(j1)];
      j0 = j1;
    } while (j0 != 0);
  }

  MatchAssignment result;
  std::vector<int> target_to_pred(static_cast<size_t>(n), -1);
  for (int j = 1; j <= m; ++j) {
    if (match[static_cast<size_t>(j)] > 0) {
      target_to_pred[static_cast<size_t>(match[static_cast<size_t>(j)]) - 1] = j - 1;
    }
  }
  std::vector<bool> pred_used(static_cast<size_t>(m), false);
  for (int t = 0; t < n; ++t) {
    result.pairs.emplace_back(t, target_to_pred[static_cast<size_t>(t)]);
    pred_used[static_cast<size_t>(target_to_pred[static_cast<size_t>(t)])] = true;
  }
  for (int j = 0; j < m; ++j) {
    if (!pred_used[static_cast<size_t>(j)]) result.unmatched_predictions.push_back(j);
  }
  return result;
}

std::vector<int> one_to_many_expand(int n_targets, int multiplicity,
                                    int n_predictions) {
  if (multiplicity < 1) throw std::invalid_argument("multiplicity must be >= 1");
  if (n_targets * multiplicity > n_predictions)
    throw std::invalid_argument("one_to_many_expand: k * n_targets exceeds "
                                "the number of prediction slots");
  std::vector<int> expanded;
  expanded.reserve(static_cast<size_t>(n_targets) * static_cast<size_t>(multiplicity));
  for (int t = 0; t < n_targets; ++t) {
    for (int k = 0; k < multiplicity; ++k) expanded.push_back(t);
  }
  return expanded;
}

}  // namespace sedt
