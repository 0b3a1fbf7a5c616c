#pragma once

#include "sedt/tape.hpp"

#include <memory>

namespace sedt::ad {

/// 3x3 convolution with padding 1 over a feature map stored channels-as-rows:
/// x is Cin x (H*W) with spatial index p = h*W + w. Output is
/// Cout x (Ho*Wo) with Ho = ceil(H/stride_h), Wo = ceil(W/stride_w).
/// weight is Cout x (Cin*9), bias is Cout x 1.
template <class Scalar>
int conv3x3(Tape<Scalar>& t, int x, int weight, int bias, int h, int w,
            int stride_h, int stride_w) {
  const auto& xv = t.value(x);
  const int cin = static_cast<int>(xv.rows());
  const int ho = (h + stride_h - 1) / stride_h;
  const int wo = (w + stride_w - 1) / stride_w;

  auto col = std::make_shared<Mat<Scalar>>(
      Mat<Scalar>::Zero(cin * 9, static_cast<Eigen::Index>(ho) * wo));
  for (int oh = 0; oh < ho; ++oh) {
    for (int ow = 0; ow < wo; ++ow) {
      const Eigen::Index p = static_cast<Eigen::Index>(oh) * wo + ow;
      for (int kh = 0; kh < 3; ++kh) {
        const int ih = oh * stride_h + kh - 1;
        if (ih < 0 || ih >= h) continue;
        for (int kw = 0; kw < 3; ++kw) {
          const int iw = ow * stride_w + kw - 1;
          if (iw < 0 || iw >= w) continue;
          col->block(static_cast<Eigen::Index>(kh * 3 + kw) * cin, p, cin, 1) =
              xv.col(static_cast<Eigen::Index>(ih) * w + iw);
        }
      }
    }
  }

  Mat<Scalar> y = t.value(weight) * (*col);
  y.colwise() += t.value(bias).col(0);
  const int out = t.push(std::move(y));
  t.set_backward(out, [x, weight, bias, col, h, w, ho, wo, stride_h, stride_w,
                       cin, out](Tape<Scalar>& t) {
    const auto& gy = t.grad(out);
    t.grad(weight).noalias() += gy * col->transpose();
    t.grad(bias).col(0) += gy.rowwise().sum();
    Mat<Scalar> gcol = t.value(weight).transpose() * gy;
    auto& gx = t.grad(x);
    for (int oh = 0; oh < ho; ++oh) {
      for (int ow = 0; ow < wo; ++ow) {
        const Eigen::Index p = static_cast<Eigen::Index>(oh) * wo + ow;
        for (int kh = 0; kh < 3; ++kh) {
          const int ih = oh * stride_h + kh - 1;
          if (ih < 0 || ih >= h) continue;
          for (int kw = 0; kw < 3; ++kw) {
            const int iw = ow * stride_w + kw - 1;
            if (iw < 0 || iw >= w) continue;
            gx.col(static_cast<Eigen::Index>(ih) * w + iw) +=
                gcol.block(static_cast<Eigen::Index>(kh * 3 + kw) * cin, p,
                           cin, 1);
          }
        }
      }
    }
  });
  return out;
}

/// Group normalization over a channels-as-rows feature map (C x S).
/// Statistics are taken per group over all spatial positions of the group's
/// channels, so the op is batch-free and deterministic. gamma/beta are C x 1.
template <class Scalar>
int group_norm(Tape<Scalar>& t, int x, int gamma, int beta, int groups,
               Scalar eps = Scalar(1e-5)) {
  const auto& xv = t.value(x);
  const int c = static_cast<int>(xv.rows());
  if (c % groups != 0) throw std::invalid_argument("group_norm: C % groups != 0");
  const int cg = c / groups;

  auto xhat = std::make_shared<Mat<Scalar>>(xv.rows(), xv.cols());
  auto inv_std = std::make_shared<std::vector<Scalar>>(
      static_cast<size_t>(groups));
  for (int g = 0; g < groups; ++g) {
    auto block = xv.middleRows(static_cast<Eigen::Index>(g) * cg, cg);
    const Scalar mu = block.mean();
    const Scalar var = (block.array() - mu).square().mean();
    const Scalar is = Scalar(1) / std::sqrt(var + eps);
    (*inv_std)[static_cast<size_t>(g)] = is;
    xhat->middleRows(static_cast<Eigen::Index>(g) * cg, cg) =
        ((block.array() - mu) * is).matrix();
  }

  Mat<Scalar> y = (xhat->array().colwise() * t.value(gamma).col(0).array())
                      .matrix();
  y.colwise() += t.value(beta).col(0);
  const int out = t.push(std::move(y));
  t.set_backward(out, [x, gamma, beta, groups, cg, xhat, inv_std,
                       out](Tape<Scalar>& t) {
    const auto& gy = t.grad(out);
    t.grad(beta).col(0) += gy.rowwise().sum();
    t.grad(gamma).col(0) += gy.cwiseProduct(*xhat).rowwise().sum();
    for (int g = 0; g < groups; ++g) {
      const Eigen::Index r0 = static_cast<Eigen::Index>(g) * cg;
      auto xh = xhat->middleRows(r0, cg);
      Mat<Scalar> gxh =
          (gy.middleRows(r0, cg).array().colwise() *
           t.value(gamma).col(0).segment(r0, cg).array())
              .matrix();
      const Scalar gmean = gxh.mean();
      const Scalar gxmean = gxh.cwiseProduct(xh).mean();
      t.grad(x).middleRows(r0, cg).array() +=
          (*inv_std)[static_cast<size_t>(g)] *
          (gxh.array() - gmean - xh.array() * gxmean);
    }
  });
  return out;
}

}  // namespace sedt::ad
