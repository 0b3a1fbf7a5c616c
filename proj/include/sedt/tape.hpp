#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <stdexcept>
#include <utility>
#include <vector>

namespace sedt::ad {

/// Reverse-mode autodiff over dense Eigen matrices. Nodes are recorded in
/// evaluation order; backward() replays the tape in reverse. Scalars are
/// 1x1 matrices. The tape owns both values and gradients, so a node handle
/// is just an index.
template <class Scalar>
class Tape {
 public:
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using BackFn = std::function<void(Tape&)>;

  int push(Mat value) {
    values_.push_back(std::move(value));
    grads_.emplace_back(
        Mat::Zero(values_.back().rows(), values_.back().cols()));
    backward_.emplace_back(nullptr);
    return static_cast<int>(values_.size()) - 1;
  }

  void set_backward(int id, BackFn fn) {
    backward_[static_cast<size_t>(id)] = std::move(fn);
  }

  const Mat& value(int id) const { return values_[static_cast<size_t>(id)]; }
  Mat& grad(int id) { return grads_[static_cast<size_t>(id)]; }

  Scalar scalar(int id) const {
    const Mat& v = value(id);
    if (v.size() != 1) throw std::logic_error("scalar() on non-scalar node");
    return v(0, 0);
  }

  void backward(int loss_id) {
    if (value(loss_id).size() != 1)
      throw std::logic_error("backward() requires a scalar loss node");
    grad(loss_id)(0, 0) = Scalar(1);
    for (int id = loss_id; id >= 0; --id) {
      auto& fn = backward_[static_cast<size_t>(id)];
      if (fn) fn(*this);
    }
  }

  size_t size() const { return values_.size(); }

 private:
  std::vector<Mat> values_;
  std::vector<Mat> grads_;
  std::vector<BackFn> backward_;
};

// ---------------------------------------------------------------------------
// Primitive ops. Each pushes one node and wires its backward closure.
// ---------------------------------------------------------------------------

template <class Scalar>
using Mat = typename Tape<Scalar>::Mat;

template <class Scalar>
int constant(Tape<Scalar>& t, Mat<Scalar> value) {
  return t.push(std::move(value));
}

template <class Scalar>
int scalar_constant(Tape<Scalar>& t, Scalar value) {
  Mat<Scalar> m(1, 1);
  m(0, 0) = value;
  return t.push(std::move(m));
}

template <class Scalar>
int add(Tape<Scalar>& t, int a, int b) {
  const int out = t.push(t.value(a) + t.value(b));
  t.set_backward(out, [a, b, out](Tape<Scalar>& t) {
    t.grad(a) += t.grad(out);
    t.grad(b) += t.grad(out);
  });
  return out;
}

template <class Scalar>
int sub(Tape<Scalar>& t, int a, int b) {
  const int out = t.push(t.value(a) - t.value(b));
  t.set_backward(out, [a, b, out](Tape<Scalar>& t) {
    t.grad(a) += t.grad(out);
    t.grad(b) -= t.grad(out);
  });
  return out;
}

template <class Scalar>
int scale(Tape<Scalar>& t, int a, Scalar s) {
  const int out = t.push(t.value(a) * s);
  t.set_backward(out, [a, s, out](Tape<Scalar>& t) {
    t.grad(a) += t.grad(out) * s;
  });
  return out;
}

template <class Scalar>
int add_scalar(Tape<Scalar>& t, int a, Scalar s) {
  const int out = t.push((t.value(a).array() + s).matrix());
  t.set_backward(out, [a, out](Tape<Scalar>& t) { t.grad(a) += t.grad(out); });
  return out;
}

template <class Scalar>
int cwise_mul(Tape<Scalar>& t, int a, int b) {
  const int out = t.push(t.value(a).cwiseProduct(t.value(b)));
  t.set_backward(out, [a, b, out](Tape<Scalar>& t) {
    t.grad(a) += t.grad(out).cwiseProduct(t.value(b));
    t.grad(b) += t.grad(out).cwiseProduct(t.value(a));
  });
  return out;
}

template <class Scalar>
int cwise_div(Tape<Scalar>& t, int a, int b) {
  const int out = t.push(t.value(a).cwiseQuotient(t.value(b)));
  t.set_backward(out, [a, b, out](Tape<Scalar>& t) {
    t.grad(a) += t.grad(out).cwiseQuotient(t.value(b));
    t.grad(b) -= t.grad(out)
                     .cwiseProduct(t.value(out))
                     .cwiseQuotient(t.value(b));
  });
  return out;
}

template <class Scalar>
int matmul(Tape<Scalar>& t, int a, int b) {
  const int out = t.push(t.value(a) * t.value(b));
  t.set_backward(out, [a, b, out](Tape<Scalar>& t) {
    t.grad(a).noalias() += t.grad(out) * t.value(b).transpose();
    t.grad(b).noalias() += t.value(a).transpose() * t.grad(out);
  });
  return out;
}

/// a * b^T without materializing the transpose on the tape.
template <class Scalar>
int matmul_bt(Tape<Scalar>& t, int a, int b) {
  const int out = t.push(t.value(a) * t.value(b).transpose());
  t.set_backward(out, [a, b, out](Tape<Scalar>& t) {
    t.grad(a).noalias() += t.grad(out) * t.value(b);
    t.grad(b).noalias() += t.grad(out).transpose() * t.value(a);
  });
  return out;
}

/// Adds a 1 x cols row vector to every row.
template <class Scalar>
int add_rowvec(Tape<Scalar>& t, int a, int bias) {
  const int out = t.push(t.value(a).rowwise() + t.value(bias).row(0));
  t.set_backward(out, [a, bias, out](Tape<Scalar>& t) {
    t.grad(a) += t.grad(out);
    t.grad(bias).row(0) += t.grad(out).colwise().sum();
  });
  return out;
}

/// Adds a rows x 1 column vector to every column.
template <class Scalar>
int add_colvec(Tape<Scalar>& t, int a, int bias) {
  const int out = t.push(t.value(a).colwise() + t.value(bias).col(0));
  t.set_backward(out, [a, bias, out](Tape<Scalar>& t) {
    t.grad(a) += t.grad(out);
    t.grad(bias).col(0) += t.grad(out).rowwise().sum();
  });
  return out;
}

template <class Scalar>
int relu(Tape<Scalar>& t, int a) {
  const int out = t.push(t.value(a).cwiseMax(Scalar(0)));
  t.set_backward(out, [a, out](Tape<Scalar>& t) {
    t.grad(a).array() +=
        t.grad(out).array() * (t.value(a).array() > Scalar(0)).template cast<Scalar>();
  });
  return out;
}

template <class Scalar>
int sigmoid(Tape<Scalar>& t, int a) {
  Mat<Scalar> y = (Scalar(1) / (Scalar(1) + (-t.value(a).array()).exp())).matrix();
  const int out = t.push(std::move(y));
  t.set_backward(out, [a, out](Tape<Scalar>& t) {
    const auto& y = t.value(out).array();
    t.grad(a).array() += t.grad(out).array() * y * (Scalar(1) - y);
  });
  return out;
}

template <class Scalar>
int log_op(Tape<Scalar>& t, int a) {
  const int out = t.push(t.value(a).array().log().matrix());
  t.set_backward(out, [a, out](Tape<Scalar>& t) {
    t.grad(a).array() += t.grad(out).array() / t.value(a).array();
  });
  return out;
}

template <class Scalar>
int sqrt_op(Tape<Scalar>& t, int a) {
  const int out = t.push(t.value(a).array().sqrt().matrix());
  t.set_backward(out, [a, out](Tape<Scalar>& t) {
    t.grad(a).array() +=
        t.grad(out).array() / (Scalar(2) * t.value(out).array());
  });
  return out;
}

template <class Scalar>
int square(Tape<Scalar>& t, int a) {
  const int out = t.push(t.value(a).array().square().matrix());
  t.set_backward(out, [a, out](Tape<Scalar>& t) {
    t.grad(a).array() += Scalar(2) * t.grad(out).array() * t.value(a).array();
  });
  return out;
}

template <class Scalar>
int abs_op(Tape<Scalar>& t, int a) {
  const int out = t.push(t.value(a).cwiseAbs());
  t.set_backward(out, [a, out](Tape<Scalar>& t) {
    t.grad(a).array() += t.grad(out).array() * t.value(a).array().sign();
  });
  return out;
}

template <class Scalar>
int cwise_max(Tape<Scalar>& t, int a, int b) {
  const int out = t.push(t.value(a).cwiseMax(t.value(b)));
  t.set_backward(out, [a, b, out](Tape<Scalar>& t) {
    const auto take_a =
        (t.value(a).array() >= t.value(b).array()).template cast<Scalar>();
    t.grad(a).array() += t.grad(out).array() * take_a;
    t.grad(b).array() += t.grad(out).array() * (Scalar(1) - take_a);
  });
  return out;
}

template <class Scalar>
int cwise_min(Tape<Scalar>& t, int a, int b) {
  const int out = t.push(t.value(a).cwiseMin(t.value(b)));
  t.set_backward(out, [a, b, out](Tape<Scalar>& t) {
    const auto take_a =
        (t.value(a).array() <= t.value(b).array()).template cast<Scalar>();
    t.grad(a).array() += t.grad(out).array() * take_a;
    t.grad(b).array() += t.grad(out).array() * (Scalar(1) - take_a);
  });
  return out;
}

template <class Scalar>
int cwise_max_scalar(Tape<Scalar>& t, int a, Scalar s) {
  const int out = t.push(t.value(a).cwiseMax(s));
  t.set_backward(out, [a, s, out](Tape<Scalar>& t) {
    t.grad(a).array() +=
        t.grad(out).array() * (t.value(a).array() > s).template cast<Scalar>();
  });
  return out;
}

template <class Scalar>
int clamp(Tape<Scalar>& t, int a, Scalar lo, Scalar hi) {
  const int out = t.push(t.value(a).cwiseMax(lo).cwiseMin(hi));
  t.set_backward(out, [a, lo, hi, out](Tape<Scalar>& t) {
    const auto inside = (t.value(a).array() > lo && t.value(a).array() < hi)
                            .template cast<Scalar>();
    t.grad(a).array() += t.grad(out).array() * inside;
  });
  return out;
}

template <class Scalar>
int sum(Tape<Scalar>& t, int a) {
  Mat<Scalar> s(1, 1);
  s(0, 0) = t.value(a).sum();
  const int out = t.push(std::move(s));
  t.set_backward(out, [a, out](Tape<Scalar>& t) {
    t.grad(a).array() += t.grad(out)(0, 0);
  });
  return out;
}

template <class Scalar>
int mean(Tape<Scalar>& t, int a) {
  const auto n = static_cast<Scalar>(t.value(a).size());
  Mat<Scalar> s(1, 1);
  s(0, 0) = t.value(a).sum() / n;
  const int out = t.push(std::move(s));
  t.set_backward(out, [a, n, out](Tape<Scalar>& t) {
    t.grad(a).array() += t.grad(out)(0, 0) / n;
  });
  return out;
}

/// Mean over columns: rows x cols -> rows x 1.
template <class Scalar>
int rowwise_mean(Tape<Scalar>& t, int a) {
  const auto n = static_cast<Scalar>(t.value(a).cols());
  const int out = t.push(t.value(a).rowwise().mean());
  t.set_backward(out, [a, n, out](Tape<Scalar>& t) {
    t.grad(a).colwise() += (t.grad(out).col(0) / n).eval();
  });
  return out;
}

/// Sum over columns: rows x cols -> rows x 1.
template <class Scalar>
int rowwise_sum(Tape<Scalar>& t, int a) {
  const int out = t.push(Mat<Scalar>(t.value(a).rowwise().sum()));
  t.set_backward(out, [a, out](Tape<Scalar>& t) {
    t.grad(a).colwise() += t.grad(out).col(0);
  });
  return out;
}

/// Divide each row of a by the matching entry of the rows x 1 vector d.
template <class Scalar>
int div_colvec(Tape<Scalar>& t, int a, int d) {
  const int out = t.push(
      Mat<Scalar>(t.value(a).array().colwise() / t.value(d).col(0).array()));
  t.set_backward(out, [a, d, out](Tape<Scalar>& t) {
    t.grad(a).array() +=
        t.grad(out).array().colwise() / t.value(d).col(0).array();
    t.grad(d).col(0).array() -= (t.grad(out).array() * t.value(out).array())
                                    .rowwise()
                                    .sum() /
                                t.value(d).col(0).array();
  });
  return out;
}

/// Sum over rows: rows x cols -> 1 x cols.
template <class Scalar>
int colwise_sum(Tape<Scalar>& t, int a) {
  const int out = t.push(Mat<Scalar>(t.value(a).colwise().sum()));
  t.set_backward(out, [a, out](Tape<Scalar>& t) {
    t.grad(a).rowwise() += t.grad(out).row(0);
  });
  return out;
}

template <class Scalar>
int slice_cols(Tape<Scalar>& t, int a, int start, int count) {
  const int out = t.push(t.value(a).middleCols(start, count));
  t.set_backward(out, [a, start, count, out](Tape<Scalar>& t) {
    t.grad(a).middleCols(start, count) += t.grad(out);
  });
  return out;
}

template <class Scalar>
int slice_rows(Tape<Scalar>& t, int a, int start, int count) {
  const int out = t.push(t.value(a).middleRows(start, count));
  t.set_backward(out, [a, start, count, out](Tape<Scalar>& t) {
    t.grad(a).middleRows(start, count) += t.grad(out);
  });
  return out;
}

template <class Scalar>
int concat_cols(Tape<Scalar>& t, const std::vector<int>& parts) {
  Eigen::Index rows = t.value(parts[0]).rows();
  Eigen::Index cols = 0;
  for (int p : parts) cols += t.value(p).cols();
  Mat<Scalar> v(rows, cols);
  Eigen::Index at = 0;
  for (int p : parts) {
    v.middleCols(at, t.value(p).cols()) = t.value(p);
    at += t.value(p).cols();
  }
  const int out = t.push(std::move(v));
  t.set_backward(out, [parts, out](Tape<Scalar>& t) {
    Eigen::Index at = 0;
    for (int p : parts) {
      t.grad(p) += t.grad(out).middleCols(at, t.value(p).cols());
      at += t.value(p).cols();
    }
  });
  return out;
}

template <class Scalar>
int concat_rows(Tape<Scalar>& t, const std::vector<int>& parts) {
  Eigen::Index cols = t.value(parts[0]).cols();
  Eigen::Index rows = 0;
  for (int p : parts) rows += t.value(p).rows();
  Mat<Scalar> v(rows, cols);
  Eigen::Index at = 0;
  for (int p : parts) {
    v.middleRows(at, t.value(p).rows()) = t.value(p);
    at += t.value(p).rows();
  }
  const int out = t.push(std::move(v));
  t.set_backward(out, [parts, out](Tape<Scalar>& t) {
    Eigen::Index at = 0;
    for (int p : parts) {
      t.grad(p) += t.grad(out).middleRows(at, t.value(p).rows());
      at += t.value(p).rows();
    }
  });
  return out;
}

template <class Scalar>
int gather_rows(Tape<Scalar>& t, int a, std::vector<int> indices) {
  Mat<Scalar> v(static_cast<Eigen::Index>(indices.size()), t.value(a).cols());
  for (size_t i = 0; i < indices.size(); ++i) {
    v.row(static_cast<Eigen::Index>(i)) = t.value(a).row(indices[i]);
  }
  const int out = t.push(std::move(v));
  t.set_backward(out, [a, indices = std::move(indices), out](Tape<Scalar>& t) {
    for (size_t i = 0; i < indices.size(); ++i) {
      t.grad(a).row(indices[i]) += t.grad(out).row(static_cast<Eigen::Index>(i));
    }
  });
  return out;
}

/// Row-wise softmax (each row sums to 1).
template <class Scalar>
int softmax_rows(Tape<Scalar>& t, int a) {
  Mat<Scalar> y = t.value(a);
  for (Eigen::Index r = 0; r < y.rows(); ++r) {
    const Scalar mx = y.row(r).maxCoeff();
    y.row(r) = (y.row(r).array() - mx).exp();
    y.row(r) /= y.row(r).sum();
  }
  const int out = t.push(std::move(y));
  t.set_backward(out, [a, out](Tape<Scalar>& t) {
    const auto& y = t.value(out);
    const auto& gy = t.grad(out);
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      const Scalar dot = y.row(r).dot(gy.row(r));
      t.grad(a).row(r).array() +=
          y.row(r).array() * (gy.row(r).array() - dot);
    }
  });
  return out;
}

/// Row-wise log-softmax.
template <class Scalar>
int log_softmax_rows(Tape<Scalar>& t, int a) {
  Mat<Scalar> y = t.value(a);
  for (Eigen::Index r = 0; r < y.rows(); ++r) {
    const Scalar mx = y.row(r).maxCoeff();
    const Scalar lse =
        mx + std::log((y.row(r).array() - mx).exp().sum());
    y.row(r).array() -= lse;
  }
  const int out = t.push(std::move(y));
  t.set_backward(out, [a, out](Tape<Scalar>& t) {
    const auto& y = t.value(out);
    const auto& gy = t.grad(out);
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      const Scalar gsum = gy.row(r).sum();
      t.grad(a).row(r).array() +=
          gy.row(r).array() - y.row(r).array().exp() * gsum;
    }
  });
  return out;
}

/// Per-row layer norm with learned gain/bias (1 x cols each).
template <class Scalar>
int layer_norm_rows(Tape<Scalar>& t, int x, int gamma, int beta,
                    Scalar eps = Scalar(1e-5)) {
  const auto& v = t.value(x);
  const auto d = static_cast<Scalar>(v.cols());
  Mat<Scalar> xhat(v.rows(), v.cols());
  Mat<Scalar> inv_std(v.rows(), 1);
  for (Eigen::Index r = 0; r < v.rows(); ++r) {
    const Scalar mu = v.row(r).mean();
    const Scalar var = (v.row(r).array() - mu).square().sum() / d;
    inv_std(r, 0) = Scalar(1) / std::sqrt(var + eps);
    xhat.row(r) = (v.row(r).array() - mu) * inv_std(r, 0);
  }
  const int xhat_id = t.push(std::move(xhat));
  t.set_backward(xhat_id, [x, xhat_id, inv_std, d](Tape<Scalar>& t) {
    const auto& xh = t.value(xhat_id);
    const auto& g = t.grad(xhat_id);
    for (Eigen::Index r = 0; r < xh.rows(); ++r) {
      const Scalar gmean = g.row(r).mean();
      const Scalar gxmean = g.row(r).cwiseProduct(xh.row(r)).mean();
      t.grad(x).row(r).array() +=
          inv_std(r, 0) *
          (g.row(r).array() - gmean - xh.row(r).array() * gxmean);
    }
  });
  // y = xhat * gamma + beta, broadcast over rows
  const int scaled = t.push(
      Mat<Scalar>(t.value(xhat_id).array().rowwise() *
                  t.value(gamma).row(0).array()));
  t.set_backward(scaled, [xhat_id, gamma, scaled](Tape<Scalar>& t) {
    t.grad(xhat_id).array() +=
        t.grad(scaled).array().rowwise() * t.value(gamma).row(0).array();
    t.grad(gamma).row(0).array() +=
        (t.grad(scaled).array() * t.value(xhat_id).array()).colwise().sum();
  });
  return add_rowvec(t, scaled, beta);
}

}  // namespace sedt::ad
