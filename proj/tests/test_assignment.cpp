#include "sedt/assignment.hpp"

#include <doctest.h>

#include <algorithm>
#include <limits>
#include <numeric>
#include <random>
#include <set>

using namespace sedt;

namespace {

// Factorial-enumeration oracle: minimum total cost over all injective
// row -> column maps, with the lexicographically smallest column choice
// among ties (matching the declared low-index tie-break).
double brute_force_min_cost(const MatrixXd& cost) {
  std::vector<int> cols(cost.cols());
  std::iota(cols.begin(), cols.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  std::vector<int> perm(cols);
  std::sort(perm.begin(), perm.end());
  do {
    double total = 0.0;
    for (Eigen::Index r = 0; r < cost.rows(); ++r) total += cost(r, perm[r]);
    best = std::min(best, total);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

double assignment_cost(const MatrixXd& cost, const MatchAssignment& a) {
  double total = 0.0;
  for (const auto& [r, c] : a.pairs) total += cost(r, c);
  return total;
}

}  // namespace

TEST_CASE("to_interval derives onset/offset with clamping") {
  CHECK(to_interval(0.5, 1.0).onset == doctest::Approx(0.0));
  CHECK(to_interval(0.5, 1.0).offset == doctest::Approx(1.0));
  CHECK(to_interval(0.5, 0.4).onset == doctest::Approx(0.3));
  CHECK(to_interval(0.5, 0.4).offset == doctest::Approx(0.7));
  CHECK(to_interval(0.05, 0.2).onset == doctest::Approx(0.0));
  CHECK(to_interval(0.05, 0.2).offset == doctest::Approx(0.15));
}

TEST_CASE("iou_1d on fixed cases") {
  CHECK(iou_1d({0.1, 0.3}, {0.7, 0.9}) == 0.0);
  // intersection 0.3, union 0.5.
  CHECK(iou_1d({0.3, 0.7}, {0.4, 0.8}) == doctest::Approx(0.6));
  CHECK(iou_1d({0.2, 0.2}, {0.2, 0.2}) == 0.0);  // degenerate: 0/0 -> 0
}

TEST_CASE("iou_1d identity, symmetry, and range over random intervals") {
  std::mt19937_64 rng(123);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 10000; ++i) {
    const double a1 = u(rng), a2 = u(rng), b1 = u(rng), b2 = u(rng);
    const Interval a{std::min(a1, a2), std::max(a1, a2)};
    const Interval b{std::min(b1, b2), std::max(b1, b2)};
    const double ab = iou_1d(a, b);
    CHECK(ab >= 0.0);
    CHECK(ab <= 1.0);
    CHECK(ab == iou_1d(b, a));
    if (a.length() > 0.0) CHECK(iou_1d(a, a) == doctest::Approx(1.0));
    if (a.offset <= b.onset || b.offset <= a.onset) CHECK(ab == 0.0);
  }
}

TEST_CASE("pair_cost fixed cases") {
  const MatchWeights w{5.0, 2.0, 1.0};
  // Perfect prediction: zero L1, IOU 1, class prob 1 -> -1.
  CHECK(pair_cost({0.5, 0.4}, 1.0, {0.5, 0.4}, w) == doctest::Approx(-1.0));
  // Same boundary, zero class probability -> 0.
  CHECK(pair_cost({0.5, 0.4}, 0.0, {0.5, 0.4}, w) == doctest::Approx(0.0));
  const MatchWeights zero{0.0, 0.0, 0.0};
  CHECK(pair_cost({0.2, 0.1}, 0.7, {0.8, 0.3}, zero) == 0.0);
}

TEST_CASE("hungarian on the 2x2 example") {
  MatrixXd cost(2, 2);
  cost << 1, 2, 2, 1;
  const auto a = hungarian(cost);
  REQUIRE(a.pairs.size() == 2);
  CHECK(a.pairs[0] == std::pair<int, int>(0, 0));
  CHECK(a.pairs[1] == std::pair<int, int>(1, 1));
  CHECK(assignment_cost(cost, a) == doctest::Approx(2.0));
}

TEST_CASE("hungarian tie-break on an all-zero matrix") {
  const MatrixXd cost = MatrixXd::Zero(3, 5);
  const auto a = hungarian(cost);
  REQUIRE(a.pairs.size() == 3);
  for (int i = 0; i < 3; ++i) {
    CHECK(a.pairs[i].first == i);
    CHECK(a.pairs[i].second == i);
  }
  CHECK(a.unmatched_predictions == std::vector<int>{3, 4});
}

// factorial enumeration oracle; exact agreement on total cost.
TEST_CASE("hungarian equals brute force on 1000 random matrices") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  std::uniform_int_distribution<int> dim(1, 6);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = dim(rng);
    const int m = n + std::uniform_int_distribution<int>(0, 3)(rng);
    MatrixXd cost(n, m);
    for (Eigen::Index r = 0; r < n; ++r)
      for (Eigen::Index c = 0; c < m; ++c) cost(r, c) = u(rng);
    const auto a = hungarian(cost);
    REQUIRE(int(a.pairs.size()) == n);
    // Injectivity.
    std::set<int> used;
    for (const auto& [r, c] : a.pairs) CHECK(used.insert(c).second);
    CHECK(assignment_cost(cost, a) == doctest::Approx(brute_force_min_cost(cost)).epsilon(1e-9));
  }
}

TEST_CASE("hungarian rejects more targets than predictions and non-finite costs") {
  CHECK_THROWS(hungarian(MatrixXd::Zero(3, 2)));
  MatrixXd bad = MatrixXd::Zero(2, 2);
  bad(0, 1) = std::numeric_limits<double>::infinity();
  CHECK_THROWS(hungarian(bad));
}

TEST_CASE("hungarian assignment is invariant to positive cost scaling") {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    MatrixXd cost(4, 6);
    for (Eigen::Index r = 0; r < 4; ++r)
      for (Eigen::Index c = 0; c < 6; ++c) cost(r, c) = u(rng);
    const auto a = hungarian(cost);
    const auto b = hungarian(MatrixXd(cost * 3.5));
    CHECK(a.pairs == b.pairs);
  }
}

TEST_CASE("one_to_many_expand") {
  CHECK(one_to_many_expand(3, 1, 10) == std::vector<int>{0, 1, 2});
  // 2 targets, k=2, N=10 -> 4 expanded slots (so 6 background after matching).
  CHECK(one_to_many_expand(2, 2, 10) == std::vector<int>{0, 0, 1, 1});
  CHECK_THROWS(one_to_many_expand(4, 3, 10));  // capacity violation
}
