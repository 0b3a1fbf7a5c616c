// Gradient checks for every loss: analytic reverse-mode gradients against
// central finite differences in double precision. Random instances are kept
// away from non-differentiable points (clamp boundaries, |x| = 0, interval
// edge contact) so the comparison is meaningful.

#include "sedt/losses.hpp"

#include <doctest.h>

#include <functional>
#include <random>

using namespace sedt;
using Tape = ad::Tape<double>;
using Mat = ad::Mat<double>;

namespace {

constexpr double kStep = 1e-5;
constexpr double kRelTol = 1e-4;

// Builds the loss from an input matrix, checks d(loss)/d(input) entrywise.
void check_gradient(const Mat& input,
                    const std::function<int(Tape&, int)>& build) {
  Tape tape;
  const int x = tape.push(input);
  const int loss = build(tape, x);
  tape.backward(loss);
  const Mat analytic = tape.grad(x);

  for (Eigen::Index r = 0; r < input.rows(); ++r) {
    for (Eigen::Index c = 0; c < input.cols(); ++c) {
      auto eval = [&](double delta) {
        Mat perturbed = input;
        perturbed(r, c) += delta;
        Tape t2;
        const int x2 = t2.push(perturbed);
        return t2.scalar(build(t2, x2));
      };
      const double numeric = (eval(kStep) - eval(-kStep)) / (2.0 * kStep);
      const double denom = std::max({std::abs(analytic(r, c)), std::abs(numeric), 1e-8});
      INFO("entry (", r, ",", c, ") analytic ", analytic(r, c), " numeric ", numeric);
      CHECK(std::abs(analytic(r, c) - numeric) / denom <= kRelTol);
    }
  }
}

// Row-stochastic matrix bounded away from 0 so -log stays smooth.
Mat random_probs(std::mt19937_64& rng, int n, int k) {
  std::uniform_real_distribution<double> u(0.1, 1.0);
  Mat p(n, k);
  for (Eigen::Index i = 0; i < n; ++i) {
    double s = 0.0;
    for (Eigen::Index j = 0; j < k; ++j) s += (p(i, j) = u(rng));
    p.row(i) /= s;
  }
  return p;
}

// (m, l) pairs whose intervals stay strictly inside (0,1) and overlap the
// companion row enough to avoid the IOU kinks at contact and clamping.
Mat random_boundaries(std::mt19937_64& rng, int n) {
  std::uniform_real_distribution<double> um(0.35, 0.65);
  std::uniform_real_distribution<double> ul(0.2, 0.4);
  Mat b(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    b(i, 0) = um(rng);
    b(i, 1) = ul(rng);
  }
  return b;
}

}  // namespace

TEST_CASE("location_loss fixed example") {
  Tape t;
  Mat pred(1, 2), target(1, 2);
  pred << 0.6, 0.4;
  target << 0.5, 0.4;
  LossWeights w;
  w.lambda_iou = 1.0;
  w.lambda_l1 = 1.0;
  const int loss = losses::location_loss(t, t.push(pred), t.push(target), w);
  // IOU([0.4,0.8],[0.3,0.7]) = 0.6; (1 - 0.6) + |0.1| = 0.5.
  CHECK(t.scalar(loss) == doctest::Approx(0.5).epsilon(1e-9));

  Tape t2;
  const int zero = losses::location_loss(t2, t2.push(target), t2.push(target), w);
  CHECK(t2.scalar(zero) == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("location_loss gradient check") {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 20; ++i) {
    const int n = 1 + int(rng() % 4);
    const Mat target = random_boundaries(rng, n);
    Mat pred = random_boundaries(rng, n);
    // Keep |pred - target| away from 0 so the L1 term is smooth.
    for (Eigen::Index r = 0; r < n; ++r)
      for (Eigen::Index c = 0; c < 2; ++c)
        if (std::abs(pred(r, c) - target(r, c)) < 1e-3) pred(r, c) += 5e-3;
    LossWeights w;
    check_gradient(pred, [&](Tape& t, int x) {
      return losses::location_loss(t, x, t.push(target), w);
    });
  }
}

TEST_CASE("classification_loss fixed examples") {
  LossWeights w;
  {
    Tape t;
    Mat p(1, 2);
    p << 0.5, 0.5;
    const int loss = losses::classification_loss(t, t.push(p), {0}, 1, w);
    CHECK(t.scalar(loss) == doctest::Approx(std::log(2.0)).epsilon(1e-9));
  }
  {
    // All slots predict their target with probability ~1 -> ~0.
    Tape t;
    Mat p(2, 3);
    p << 1.0 - 2e-12, 1e-12, 1e-12, 1e-12, 1.0 - 2e-12, 1e-12;
    const int loss = losses::classification_loss(t, t.push(p), {0, 1}, 2, w);
    CHECK(t.scalar(loss) == doctest::Approx(0.0).epsilon(1e-9));
  }
  {
    // background_class_weight = 0 with only background targets -> 0.
    Tape t;
    LossWeights w0;
    w0.background_class_weight = 0.0;
    std::mt19937_64 rng(1);
    Mat p = random_probs(rng, 3, 4);
    const int loss = losses::classification_loss(t, t.push(p), {3, 3, 3}, 3, w0);
    CHECK(t.scalar(loss) == 0.0);
  }
}

TEST_CASE("classification_loss gradient check") {
  std::mt19937_64 rng(22);
  for (int i = 0; i < 20; ++i) {
    const int n = 2 + int(rng() % 4);
    const int k = 3;
    const Mat p = random_probs(rng, n, k);
    std::vector<int> targets;
    for (int s = 0; s < n; ++s) targets.push_back(int(rng() % k));
    LossWeights w;
    check_gradient(p, [&](Tape& t, int x) {
      return losses::classification_loss(t, x, targets, k - 1, w);
    });
  }
}

TEST_CASE("tagging_loss fixed examples") {
  {
    Tape t;
    Mat p(1, 1);
    p << 0.5;
    const int loss = losses::tagging_loss(t, t.push(p), {1.0});
    CHECK(t.scalar(loss) == doctest::Approx(std::log(2.0)).epsilon(1e-9));
  }
  {
    Tape t;
    Mat p(1, 2);
    p << 1.0, 0.0;  // perfect; clamp keeps the log finite
    const int loss = losses::tagging_loss(t, t.push(p), {1.0, 0.0});
    CHECK(t.scalar(loss) == doctest::Approx(0.0).epsilon(1e-6));
  }
  {
    Tape t;
    Mat p(1, 0);
    CHECK_THROWS(losses::tagging_loss(t, t.push(p), {}));
  }
}

TEST_CASE("tagging_loss gradient check") {
  std::mt19937_64 rng(33);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  for (int i = 0; i < 20; ++i) {
    const int k = 2 + int(rng() % 4);
    Mat p(1, k);
    std::vector<double> labels;
    for (int j = 0; j < k; ++j) {
      p(0, j) = u(rng);
      labels.push_back(double(rng() % 2));
    }
    check_gradient(p, [&](Tape& t, int x) {
      return losses::tagging_loss(t, x, labels);
    });
  }
}

TEST_CASE("reconstruction_loss fixed examples") {
  Mat target(1, 3);
  target << 2.0, 0.0, 0.0;  // normalizes to e1
  {
    Tape t;
    Mat pred(1, 3);
    pred << 5.0, 0.0, 0.0;  // same direction
    const int loss = losses::reconstruction_loss(t, t.push(pred), target);
    CHECK(t.scalar(loss) == doctest::Approx(0.0).epsilon(1e-9));
  }
  {
    Tape t;
    Mat pred(1, 3);
    pred << 0.0, 3.0, 0.0;  // orthogonal unit directions: ||u - v||^2 = 2
    const int loss = losses::reconstruction_loss(t, t.push(pred), target);
    CHECK(t.scalar(loss) == doctest::Approx(2.0).epsilon(1e-9));
  }
  {
    Tape t;
    Mat pred(1, 3);
    pred << -1.0, 0.0, 0.0;  // antipodal: ||u + u||^2 = 4
    const int loss = losses::reconstruction_loss(t, t.push(pred), target);
    CHECK(t.scalar(loss) == doctest::Approx(4.0).epsilon(1e-9));
  }
}

TEST_CASE("reconstruction_loss gradient check") {
  std::mt19937_64 rng(44);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int i = 0; i < 20; ++i) {
    const int n = 1 + int(rng() % 3);
    const int dim = 4;
    Mat pred(n, dim), target(n, dim);
    for (Eigen::Index r = 0; r < n; ++r)
      for (Eigen::Index c = 0; c < dim; ++c) {
        pred(r, c) = g(rng) + 2.0;  // keep norms well away from the eps floor
        target(r, c) = g(rng);
      }
    check_gradient(pred, [&](Tape& t, int x) {
      return losses::reconstruction_loss(t, x, target);
    });
  }
}

TEST_CASE("detection_loss composes its components linearly") {
  std::mt19937_64 rng(55);
  std::uniform_real_distribution<double> u(0.1, 2.0);
  for (int i = 0; i < 20; ++i) {
    const double l_loc = u(rng), l_c = u(rng), l_at = u(rng);
    LossWeights w;
    w.lambda_loc = u(rng);
    w.lambda_c = u(rng);
    w.lambda_at = u(rng);
    Tape t;
    const int total = losses::detection_loss(t, ad::scalar_constant(t, l_loc),
                                             ad::scalar_constant(t, l_c), w,
                                             ad::scalar_constant(t, l_at));
    CHECK(t.scalar(total) ==
          doctest::Approx(w.lambda_loc * l_loc + w.lambda_c * l_c + w.lambda_at * l_at)
              .epsilon(1e-12));
    // Without the tagging term.
    Tape t2;
    const int partial = losses::detection_loss(
        t2, ad::scalar_constant(t2, l_loc), ad::scalar_constant(t2, l_c), w);
    CHECK(t2.scalar(partial) ==
          doctest::Approx(w.lambda_loc * l_loc + w.lambda_c * l_c).epsilon(1e-12));
  }
}

TEST_CASE("detection_loss end-to-end gradient check") {
  // Full composition over boundaries: location + classification on the same
  // prediction tensor, checked against finite differences.
  std::mt19937_64 rng(66);
  for (int i = 0; i < 20; ++i) {
    const int n = 2;
    const Mat target = random_boundaries(rng, n);
    Mat pred = random_boundaries(rng, n);
    for (Eigen::Index r = 0; r < n; ++r)
      for (Eigen::Index c = 0; c < 2; ++c)
        if (std::abs(pred(r, c) - target(r, c)) < 1e-3) pred(r, c) += 5e-3;
    const Mat probs = random_probs(rng, n, 3);
    LossWeights w;
    check_gradient(pred, [&](Tape& t, int x) {
      const int loc = losses::location_loss(t, x, t.push(target), w);
      const int cls = losses::classification_loss(t, t.push(probs), {0, 1}, 2, w);
      return losses::detection_loss(t, loc, cls, w);
    });
  }
}

TEST_CASE("pretrain_loss composes its components linearly") {
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> u(0.1, 2.0);
  for (int i = 0; i < 20; ++i) {
    const double l_c = u(rng), l_loc = u(rng), l_rec = u(rng);
    LossWeights w;
    w.lambda_c = u(rng);
    w.lambda_loc = u(rng);
    w.lambda_rec = u(rng);
    Tape t;
    const int total = losses::pretrain_loss(t, ad::scalar_constant(t, l_c),
                                            ad::scalar_constant(t, l_loc),
                                            ad::scalar_constant(t, l_rec), w);
    CHECK(t.scalar(total) ==
          doctest::Approx(w.lambda_c * l_c + w.lambda_loc * l_loc + w.lambda_rec * l_rec)
              .epsilon(1e-12));
    // lambda_rec = 0 drops the reconstruction term entirely.
    LossWeights w0 = w;
    w0.lambda_rec = 0.0;
    Tape t2;
    const int ablated = losses::pretrain_loss(t2, ad::scalar_constant(t2, l_c),
                                              ad::scalar_constant(t2, l_loc),
                                              ad::scalar_constant(t2, l_rec), w0);
    CHECK(t2.scalar(ablated) ==
          doctest::Approx(w.lambda_c * l_c + w.lambda_loc * l_loc).epsilon(1e-12));
  }
}

TEST_CASE("pretrain_loss end-to-end gradient check") {
  std::mt19937_64 rng(88);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int i = 0; i < 20; ++i) {
    const int n = 2;
    const Mat target_b = random_boundaries(rng, n);
    Mat recon_target(n, 4);
    for (Eigen::Index r = 0; r < n; ++r)
      for (Eigen::Index c = 0; c < 4; ++c) recon_target(r, c) = g(rng);
    // Single input tensor: [boundaries | recon features].
    Mat input(n, 6);
    input.leftCols(2) = random_boundaries(rng, n);
    for (Eigen::Index r = 0; r < n; ++r) {
      for (Eigen::Index c = 0; c < 2; ++c)
        if (std::abs(input(r, c) - target_b(r, c)) < 1e-3) input(r, c) += 5e-3;
      for (Eigen::Index c = 2; c < 6; ++c) input(r, c) = g(rng) + 2.0;
    }
    const Mat probs = random_probs(rng, n, 2);
    LossWeights w;
    check_gradient(input, [&](Tape& t, int x) {
      const int b = ad::slice_cols(t, x, 0, 2);
      const int rec = ad::slice_cols(t, x, 2, 4);
      const int loc = losses::location_loss(t, b, t.push(target_b), w);
      const int cls = losses::classification_loss(t, t.push(probs), {0, 0}, 1, w);
      const int recon = losses::reconstruction_loss(t, rec, recon_target);
      return losses::pretrain_loss(t, cls, loc, recon, w);
    });
  }
}

TEST_CASE("losses are invariant to matched-pair ordering") {
  std::mt19937_64 rng(99);
  const Mat target = random_boundaries(rng, 3);
  const Mat pred = random_boundaries(rng, 3);
  LossWeights w;
  Tape t;
  const double forward_val =
      t.scalar(losses::location_loss(t, t.push(pred), t.push(target), w));
  Mat target_rev = target.colwise().reverse();
  Mat pred_rev = pred.colwise().reverse();
  Tape t2;
  const double reversed_val =
      t2.scalar(losses::location_loss(t2, t2.push(pred_rev), t2.push(target_rev), w));
  CHECK(forward_val == doctest::Approx(reversed_val).epsilon(1e-12));
}
