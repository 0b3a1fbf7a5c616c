#pragma once

#include "sedt/tape.hpp"

#include <stdexcept>
#include <vector>

namespace sedt {

struct LossWeights {
  double lambda_loc = 1.0;
  double lambda_c = 1.0;
  double lambda_iou = 2.0;
  double lambda_l1 = 5.0;
  double lambda_rec = 1.0;
  double lambda_at = 1.0;
  double background_class_weight = 0.1;
};

namespace losses {

/// Differentiable 1-D IOU per row of two (m, l) boundary matrices.
/// Intervals are clamped to [0,1]; degenerate unions get IOU 0 through the
/// epsilon floor. Returns an n x 1 node.
template <class Scalar>
int boundary_iou(ad::Tape<Scalar>& t, int pred_ml, int target_ml,
                 Scalar eps = Scalar(1e-12)) {
  auto interval = [&](int ml) {
    const int m = ad::slice_cols(t, ml, 0, 1);
    const int l = ad::slice_cols(t, ml, 1, 1);
    const int half = ad::scale(t, l, Scalar(0.5));
    const int on = ad::clamp(t, ad::sub(t, m, half), Scalar(0), Scalar(1));
    const int off = ad::clamp(t, ad::add(t, m, half), Scalar(0), Scalar(1));
    return std::pair<int, int>(on, off);
  };
  const auto [on_a, off_a] = interval(pred_ml);
  const auto [on_b, off_b] = interval(target_ml);
  const int zero = ad::constant(
      t, ad::Mat<Scalar>::Zero(t.value(on_a).rows(), 1));
  const int inter = ad::cwise_max(
      t, ad::sub(t, ad::cwise_min(t, off_a, off_b), ad::cwise_max(t, on_a, on_b)),
      zero);
  const int len_a = ad::sub(t, off_a, on_a);
  const int len_b = ad::sub(t, off_b, on_b);
  const int uni = ad::sub(t, ad::add(t, len_a, len_b), inter);
  return ad::cwise_div(t, inter, ad::cwise_max_scalar(t, uni, eps));
}

/// Sum over matched pairs of lambda_iou * (1 - iou) + lambda_l1 * |b - b_hat|_1.
template <class Scalar>
int location_loss(ad::Tape<Scalar>& t, int pred_ml, int target_ml,
                  const LossWeights& w) {
  const int l1 = ad::sum(t, ad::abs_op(t, ad::sub(t, pred_ml, target_ml)));
  const int iou = boundary_iou(t, pred_ml, target_ml);
  const int one_minus =
      ad::sum(t, ad::add_scalar(t, ad::scale(t, iou, Scalar(-1)), Scalar(1)));
  return ad::add(t, ad::scale(t, one_minus, static_cast<Scalar>(w.lambda_iou)),
                 ad::scale(t, l1, static_cast<Scalar>(w.lambda_l1)));
}

/// (1/N) sum over all N slots of -log p_hat(slot's target class); slots
/// whose target is the background class are scaled by background_class_weight.
/// target_class[i] in [0, K), with the background class at index K-1.
template <class Scalar>
int classification_loss(ad::Tape<Scalar>& t, int class_probs,
                        const std::vector<int>& target_class,
                        int background_index, const LossWeights& w) {
  const auto n = t.value(class_probs).rows();
  const auto k = t.value(class_probs).cols();
  if (static_cast<Eigen::Index>(target_class.size()) != n)
    throw std::invalid_argument("target_class size must equal slot count");
  ad::Mat<Scalar> mask = ad::Mat<Scalar>::Zero(n, k);
  for (Eigen::Index i = 0; i < n; ++i) {
    const int c = target_class[static_cast<size_t>(i)];
    const double weight =
        c == background_index ? w.background_class_weight : 1.0;
    mask(i, c) = static_cast<Scalar>(-weight / static_cast<double>(n));
  }
  const int logp = ad::log_op(t, class_probs);
  return ad::sum(t, ad::cwise_mul(t, logp, ad::constant(t, std::move(mask))));
}

/// Mean binary cross-entropy over classes; probabilities are clamped to
/// [eps, 1 - eps] before the log.
template <class Scalar>
int tagging_loss(ad::Tape<Scalar>& t, int tag_probs,
                 const std::vector<double>& labels,
                 Scalar eps = Scalar(1e-7)) {
  const auto k = t.value(tag_probs).size();
  if (k == 0 || labels.empty())
    throw std::invalid_argument("tagging loss needs a non-empty tag vocabulary");
  if (static_cast<Eigen::Index>(labels.size()) != k)
    throw std::invalid_argument("label vector size mismatch");
  ad::Mat<Scalar> y(t.value(tag_probs).rows(), t.value(tag_probs).cols());
  for (Eigen::Index i = 0; i < k; ++i)
    y.data()[i] = static_cast<Scalar>(labels[static_cast<size_t>(i)]);
  const int p = ad::clamp(t, tag_probs, eps, Scalar(1) - eps);
  const int y_node = ad::constant(t, y);
  const int pos = ad::cwise_mul(t, y_node, ad::log_op(t, p));
  const int one_minus_y =
      ad::add_scalar(t, ad::scale(t, y_node, Scalar(-1)), Scalar(1));
  const int one_minus_p = ad::add_scalar(t, ad::scale(t, p, Scalar(-1)), Scalar(1));
  const int neg = ad::cwise_mul(t, one_minus_y, ad::log_op(t, one_minus_p));
  return ad::scale(t, ad::mean(t, ad::add(t, pos, neg)), Scalar(-1));
}

/// Mean over matched slots of || p/|p| - p_hat/|p_hat| ||^2 with L2
/// normalization floored at eps for zero-norm rows.
template <class Scalar>
int reconstruction_loss(ad::Tape<Scalar>& t, int recon_rows,
                        const ad::Mat<Scalar>& target_features,
                        Scalar eps = Scalar(1e-8)) {
  const auto n = t.value(recon_rows).rows();
  if (target_features.rows() != n)
    throw std::invalid_argument("reconstruction target row count mismatch");
  ad::Mat<Scalar> target = target_features;
  for (Eigen::Index i = 0; i < n; ++i) {
    target.row(i) /= std::max(target.row(i).norm(), eps);
  }
  const int norms = ad::cwise_max_scalar(
      t, ad::sqrt_op(t, ad::rowwise_sum(t, ad::square(t, recon_rows))), eps);
  const int unit = ad::div_colvec(t, recon_rows, norms);
  const int diff = ad::sub(t, unit, ad::constant(t, std::move(target)));
  const int per_row = ad::rowwise_sum(t, ad::square(t, diff));
  return ad::mean(t, per_row);
}

/// lambda_loc * L_loc + lambda_c * L_c (+ lambda_at * L_at when present).
template <class Scalar>
int detection_loss(ad::Tape<Scalar>& t, int loc_loss, int cls_loss,
                   const LossWeights& w, int tag_loss = -1) {
  int total = ad::add(t, ad::scale(t, loc_loss, static_cast<Scalar>(w.lambda_loc)),
                      ad::scale(t, cls_loss, static_cast<Scalar>(w.lambda_c)));
  if (tag_loss >= 0) {
    total = ad::add(t, total, ad::scale(t, tag_loss, static_cast<Scalar>(w.lambda_at)));
  }
  return total;
}

/// lambda_c * L_c + lambda_loc * L_loc + lambda_rec * L_rec.
template <class Scalar>
int pretrain_loss(ad::Tape<Scalar>& t, int cls_loss, int loc_loss,
                  int rec_loss, const LossWeights& w) {
  const int base =
      ad::add(t, ad::scale(t, cls_loss, static_cast<Scalar>(w.lambda_c)),
              ad::scale(t, loc_loss, static_cast<Scalar>(w.lambda_loc)));
  return ad::add(t, base, ad::scale(t, rec_loss, static_cast<Scalar>(w.lambda_rec)));
}

}  // namespace losses
}  // namespace sedt
