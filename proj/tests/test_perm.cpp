#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "psrp/perm.hpp"

using namespace psrp;
using Catch::Approx;

namespace {

Matrix random_positive(int n, Rng& rng, double lo = 0.1, double hi = 3.0) {
  Matrix q(n, n);
  for (Eigen::Index i = 0; i < q.size(); ++i) q.data()[i] = rng.uniform(lo, hi);
  return q;
}

/// Brute force over all permutations in lexicographic order: best total,
/// then the first permutation reaching it within the tie tolerance.
std::vector<int> brute_force_rounding(const Matrix& q) {
  const int n = static_cast<int>(q.rows());
  std::vector<int> p(n);
  std::iota(p.begin(), p.end(), 0);
  const auto value = [&](const std::vector<int>& perm) {
    double v = 0;
    for (int i = 0; i < n; ++i) v += q(i, perm[i]);
    return v;
  };
  double best = -1e300;
  do best = std::max(best, value(p));
  while (std::next_permutation(p.begin(), p.end()));
  const double tol = kAssignmentTieTolerance * std::max(1.0, std::abs(best));
  std::iota(p.begin(), p.end(), 0);
  do {
    if (value(p) >= best - tol) return p;
  } while (std::next_permutation(p.begin(), p.end()));
  return {};
}

double max_row_deviation(const Matrix& s) {
  return (s.rowwise().sum().array() - 1.0).abs().maxCoeff();
}

}  // namespace

TEST_CASE("row and column normalization") {
  Matrix q(2, 2);
  q << 1, 3, 2, 2;
  Matrix r(2, 2);
  r << 0.25, 0.75, 0.5, 0.5;
  CHECK(row_normalize(q).isApprox(r, 1e-15));
  Matrix c(2, 2);
  c << 1.0 / 3, 0.6, 2.0 / 3, 0.4;
  CHECK(col_normalize(q).isApprox(c, 1e-15));

  Matrix zero_row(2, 2);
  zero_row << 0, 0, 1, 1;
  CHECK_THROWS_AS(row_normalize(zero_row), NumericError);
  Matrix zero_col(2, 2);
  zero_col << 0, 1, 0, 1;
  CHECK_THROWS_AS(col_normalize(zero_col), NumericError);
}

TEST_CASE("sinkhorn examples") {
  SECTION("m=0 returns the input") {
    Rng rng(1);
    const Matrix q = random_positive(4, rng);
    CHECK(sinkhorn(q, {0, 1e-9}).values == q);
  }
  SECTION("one iteration on [[2,1],[1,1]]") {
    Matrix q(2, 2);
    q << 2, 1, 1, 1;
    Matrix expected(2, 2);
    expected << 4.0 / 7, 2.0 / 5, 3.0 / 7, 3.0 / 5;
    const auto s = sinkhorn(q, {1, 1e-9});
    CHECK(s.values.isApprox(expected, 1e-14));
    CHECK(s.iterations_used == 1);
  }
  SECTION("a doubly stochastic input is a fixed point") {
    Matrix q(3, 3);
    q << 0.2, 0.3, 0.5, 0.5, 0.2, 0.3, 0.3, 0.5, 0.2;
    CHECK(sinkhorn(q, {25, 1e-9}).values.isApprox(q, 1e-12));
  }
  SECTION("columns sum to one after every iteration; rows converge") {
    Rng rng(3);
    const Matrix q = random_positive(6, rng);
    double prev = max_row_deviation(q);
    for (int m = 1; m <= 30; ++m) {
      const auto s = sinkhorn(q, {m, 1e-9}).values;
      CHECK((s.colwise().sum().array() - 1.0).abs().maxCoeff() < 1e-12);
      const double dev = max_row_deviation(s);
      CHECK(dev <= prev + 1e-12);
      prev = dev;
    }
    CHECK(prev < 1e-6);
  }
  SECTION("scale invariance and permutation equivariance") {
    Rng rng(4);
    const Matrix q = random_positive(5, rng);
    const SinkhornConfig cfg{7, 1e-9};
    const Matrix s = sinkhorn(q, cfg).values;
    CHECK(sinkhorn(q * 13.5, cfg).values.isApprox(s, 1e-12));
    const Matrix p = ShuffleMatrix({3, 0, 4, 1, 2}).matrix();
    CHECK(sinkhorn(p * q * p.transpose(), cfg).values.isApprox(p * s * p.transpose(), 1e-12));
  }
  SECTION("invalid inputs") {
    Matrix rect(2, 3);
    rect.setOnes();
    CHECK_THROWS_AS(sinkhorn(rect, {}), DimensionError);
    Matrix neg = Matrix::Ones(2, 2);
    neg(0, 1) = -1;
    CHECK_THROWS_AS(sinkhorn(neg, {}), NumericError);
    CHECK_THROWS_AS(sinkhorn(Matrix::Ones(2, 2), {-1, 1e-9}), ValidationError);
  }
}

TEST_CASE("sinkhorn_backward") {
  SECTION("1x1 has zero gradient") {
    Matrix q(1, 1);
    q << 2.5;
    Matrix g(1, 1);
    g << 1.0;
    CHECK(sinkhorn_backward(q, {5, 1e-9}, g).norm() < 1e-15);
  }
  SECTION("m=0 passes the upstream gradient through") {
    Rng rng(8);
    const Matrix q = random_positive(3, rng);
    const Matrix g = random_positive(3, rng);
    CHECK(sinkhorn_backward(q, {0, 1e-9}, g) == g);
  }
  SECTION("matches central differences on a 5x5, m=3") {
    Rng rng(5);
    const Matrix q0 = random_positive(5, rng, 0.2, 2.0);
    Matrix g(5, 5);
    for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = rng.uniform(-1, 1);
    const SinkhornConfig cfg{3, 1e-9};
    const Matrix analytic = sinkhorn_backward(q0, cfg, g);
    Matrix numeric(5, 5);
    const double h = 1e-6;
    for (Eigen::Index i = 0; i < q0.size(); ++i) {
      Matrix up = q0, down = q0;
      up.data()[i] += h;
      down.data()[i] -= h;
      numeric.data()[i] =
          ((g.array() * sinkhorn(up, cfg).values.array()).sum() - (g.array() * sinkhorn(down, cfg).values.array()).sum()) /
          (2 * h);
    }
    CHECK((analytic - numeric).norm() / std::max(analytic.norm(), numeric.norm()) < 1e-6);
  }
  SECTION("shape mismatch") {
    CHECK_THROWS_AS(sinkhorn_backward(Matrix::Ones(2, 2), {}, Matrix::Ones(3, 3)), DimensionError);
  }
}

TEST_CASE("round_to_permutation") {
  SECTION("dominant diagonal gives the identity") {
    Matrix q = Matrix::Constant(4, 4, 0.1);
    q.diagonal().setConstant(0.7);
    CHECK(round_to_permutation(q) == ShuffleMatrix::identity(4));
  }
  SECTION("uniform matrix ties break to the identity") {
    CHECK(round_to_permutation(Matrix::Constant(5, 5, 0.2)) == ShuffleMatrix::identity(5));
  }
  SECTION("a permutation matrix rounds to itself") {
    const ShuffleMatrix p({2, 0, 3, 1});
    CHECK(round_to_permutation(p.matrix()) == p);
  }
  SECTION("agrees with brute force on random 5x5 matrices") {
    Rng rng(12);
    for (int trial = 0; trial < 40; ++trial) {
      const Matrix q = random_positive(5, rng);
      CHECK(round_to_permutation(q).perm() == brute_force_rounding(q));
    }
  }
  SECTION("agrees with brute force when values are coarse and ties are common") {
    Rng rng(13);
    for (int trial = 0; trial < 40; ++trial) {
      Matrix q(5, 5);
      for (Eigen::Index i = 0; i < q.size(); ++i) q.data()[i] = static_cast<double>(rng.uniform_int(1, 3));
      CHECK(round_to_permutation(q).perm() == brute_force_rounding(q));
    }
  }
  SECTION("non-square input") {
    CHECK_THROWS_AS(round_to_permutation(Matrix::Ones(2, 3)), DimensionError);
  }
}

TEST_CASE("reorder_loss") {
  const auto id4 = ShuffleMatrix::identity(4);
  CHECK(reorder_loss(id4, Matrix::Identity(4, 4)) == Approx(0.0).margin(1e-15));
  CHECK(reorder_loss(id4, Matrix::Constant(4, 4, 0.25)) == Approx(std::log(4.0)).epsilon(1e-12));
  Matrix q = Matrix::Constant(2, 2, 0.1);
  q.diagonal().setConstant(0.9);
  CHECK(reorder_loss(ShuffleMatrix::identity(2), q) == Approx(0.105360515657826).epsilon(1e-12));

  SECTION("zero probabilities are floored at eps") {
    const ShuffleMatrix swap({1, 0});
    CHECK(reorder_loss(swap, Matrix::Identity(2, 2), 1e-9) == Approx(-std::log(1e-9)));
  }
  SECTION("gradient matches central differences") {
    Rng rng(21);
    const Matrix q0 = random_positive(4, rng, 0.1, 1.0);
    const ShuffleMatrix p({1, 3, 0, 2});
    const Matrix g = reorder_loss_grad(p, q0);
    for (Eigen::Index i = 0; i < q0.size(); ++i) {
      Matrix up = q0, down = q0;
      up.data()[i] += 1e-7;
      down.data()[i] -= 1e-7;
      CHECK(g.data()[i] == Approx((reorder_loss(p, up) - reorder_loss(p, down)) / 2e-7).margin(1e-6));
    }
  }
  SECTION("size mismatch") {
    CHECK_THROWS_AS(reorder_loss(id4, Matrix::Identity(3, 3)), DimensionError);
  }
}

TEST_CASE("permutation_accuracy") {
  const ShuffleMatrix t({0, 1, 2, 3});
  CHECK(permutation_accuracy(t, t) == 1.0);
  CHECK(permutation_accuracy(ShuffleMatrix({1, 0, 2, 3}), t) == 0.5);
  CHECK(permutation_accuracy(ShuffleMatrix({1, 2, 3, 0}), t) == 0.0);
  CHECK_THROWS_AS(permutation_accuracy(ShuffleMatrix::identity(3), t), DimensionError);
}
