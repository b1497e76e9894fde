#pragma once

// Sinkhorn normalization with unrolled gradients, rounding to the nearest
// permutation and the reordering loss.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "psrp/augment.hpp"
#include "psrp/error.hpp"

namespace psrp {

using Matrix = Eigen::MatrixXd;

struct SinkhornConfig {
  int m = 10;
  double eps = 1e-9;  ///< floor applied before taking logs in the loss

  void validate() const {
    if (m < 0) throw ValidationError("SinkhornConfig: m must be >= 0");
    if (!(eps > 0.0)) throw ValidationError("SinkhornConfig: eps must be > 0");
  }
};

struct DoublyStochasticMatrix {
  Matrix values;
  int iterations_used = 0;

  int size() const { return static_cast<int>(values.rows()); }
};

inline Matrix row_normalize(const Matrix& q) {
  Matrix out(q.rows(), q.cols());
  for (Eigen::Index i = 0; i < q.rows(); ++i) {
    const double z = q.row(i).sum();
    if (!(z > 0.0) || !std::isfinite(z)) {
      throw NumericError("row_normalize: row " + std::to_string(i) + " sums to " +
                         std::to_string(z));
    }
    out.row(i) = q.row(i) / z;
  }
  return out;
}

inline Matrix col_normalize(const Matrix& q) {
  Matrix out(q.rows(), q.cols());
  for (Eigen::Index j = 0; j < q.cols(); ++j) {
    const double z = q.col(j).sum();
    if (!(z > 0.0) || !std::isfinite(z)) {
      throw NumericError("col_normalize: column " + std::to_string(j) + " sums to " +
                         std::to_string(z));
    }
    out.col(j) = q.col(j) / z;
  }
  return out;
}

/// Pullback through row normalization of `input`: with Z_p the sum of row p,
///   dQ[p][q] = sum_j dR[p][j] * ([j == q] / Z_p - Q[p][j] / Z_p^2).
inline Matrix row_normalize_backward(const Matrix& input, const Matrix& upstream) {
  Matrix grad(input.rows(), input.cols());
  for (Eigen::Index p = 0; p < input.rows(); ++p) {
    const double z = input.row(p).sum();
    const double coupling = upstream.row(p).dot(input.row(p)) / (z * z);
    for (Eigen::Index q = 0; q < input.cols(); ++q) {
      grad(p, q) = upstream(p, q) / z - coupling;
    }
  }
  return grad;
}

/// Column form of row_normalize_backward (indices transposed).
inline Matrix col_normalize_backward(const Matrix& input, const Matrix& upstream) {
  return row_normalize_backward(input.transpose(), upstream.transpose()).transpose();
}

namespace detail {

inline void check_score_matrix(const Matrix& q, const char* who) {
  if (q.rows() != q.cols() || q.rows() == 0) {
    throw DimensionError(std::string(who) + ": expected a non-empty square matrix");
  }
  for (Eigen::Index i = 0; i < q.size(); ++i) {
    const double v = q.data()[i];
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw NumericError(std::string(who) + ": score entries must be finite and > 0");
    }
  }
}

}  // namespace detail

/// S^0 = Q, S^k = C(R(S^{k-1})).
inline DoublyStochasticMatrix sinkhorn(const Matrix& q, const SinkhornConfig& config) {
  config.validate();
  detail::check_score_matrix(q, "sinkhorn");
  Matrix s = q;
  for (int k = 0; k < config.m; ++k) s = col_normalize(row_normalize(s));
  return {std::move(s), config.m};
}

/// Gradient of a scalar loss with respect to the Sinkhorn input, given the
/// loss gradient with respect to the output. Every (R, C) step is replayed
/// and then pulled back in reverse order.
inline Matrix sinkhorn_backward(const Matrix& q, const SinkhornConfig& config,
                                const Matrix& upstream) {
  config.validate();
  detail::check_score_matrix(q, "sinkhorn_backward");
  if (upstream.rows() != q.rows() || upstream.cols() != q.cols()) {
    throw DimensionError("sinkhorn_backward: upstream gradient shape mismatch");
  }
  // before_row[k] feeds the k-th row step, before_col[k] the k-th column step.
  std::vector<Matrix> before_row, before_col;
  before_row.reserve(config.m);
  before_col.reserve(config.m);
  Matrix s = q;
  for (int k = 0; k < config.m; ++k) {
    before_row.push_back(s);
    s = row_normalize(s);
    before_col.push_back(s);
    s = col_normalize(s);
  }
  Matrix grad = upstream;
  for (int k = config.m - 1; k >= 0; --k) {
    grad = col_normalize_backward(before_col[k], grad);
    grad = row_normalize_backward(before_row[k], grad);
  }
  return grad;
}

namespace detail {

/// Minimum-cost perfect assignment on a square cost matrix (potentials form
/// of the Hungarian method, O(n^3)). Returns row -> column.
inline std::vector<int> min_cost_assignment(const Matrix& cost) {
  const int n = static_cast<int>(cost.rows());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> row_to_col(n);
  for (int j = 1; j <= n; ++j) row_to_col[p[j] - 1] = j - 1;
  return row_to_col;
}

inline double max_assignment_value(const Matrix& weights) {
  if (weights.rows() == 0) return 0.0;
  const auto a = min_cost_assignment(-weights);
  double total = 0.0;
  for (int i = 0; i < static_cast<int>(a.size()); ++i) total += weights(i, a[i]);
  return total;
}

inline Matrix drop_row_col(const Matrix& m, Eigen::Index row, Eigen::Index col) {
  const Eigen::Index n = m.rows();
  Matrix out(n - 1, n - 1);
  for (Eigen::Index i = 0, oi = 0; i < n; ++i) {
    if (i == row) continue;
    for (Eigen::Index j = 0, oj = 0; j < n; ++j) {
      if (j == col) continue;
      out(oi, oj++) = m(i, j);
    }
    ++oi;
  }
  return out;
}

}  // namespace detail

/// Relative slack under which two assignment totals count as tied.
inline constexpr double kAssignmentTieTolerance = 1e-12;

/// Permutation maximizing sum_i Q[i][perm[i]]. Among assignments within the
/// tie tolerance of the optimum, the lexicographically smallest is returned:
/// slots are fixed in order, each to the smallest column that still admits an
/// optimal completion.
inline ShuffleMatrix round_to_permutation(const Matrix& q) {
  if (q.rows() != q.cols()) throw DimensionError("round_to_permutation: matrix is not square");
  const int n = static_cast<int>(q.rows());
  if (n == 0) return ShuffleMatrix{};
  const double best = detail::max_assignment_value(q);
  const double tol = kAssignmentTieTolerance * std::max(1.0, std::abs(best));

  std::vector<int> perm(n, -1);
  std::vector<int> free_cols(n);
  std::iota(free_cols.begin(), free_cols.end(), 0);
  Matrix rest = q;  // rows: unfixed slots, cols: free_cols
  double fixed_total = 0.0;
  for (int i = 0; i < n; ++i) {
    bool placed = false;
    for (std::size_t c = 0; c < free_cols.size(); ++c) {
      Matrix sub = detail::drop_row_col(rest, 0, static_cast<Eigen::Index>(c));
      const double total = fixed_total + rest(0, c) + detail::max_assignment_value(sub);
      if (total >= best - tol) {
        perm[i] = free_cols[c];
        fixed_total += rest(0, c);
        free_cols.erase(free_cols.begin() + static_cast<std::ptrdiff_t>(c));
        rest = std::move(sub);
        placed = true;
        break;
      }
    }
    if (!placed) throw NumericError("round_to_permutation: assignment search failed");
  }
  return ShuffleMatrix(std::move(perm));
}

inline ShuffleMatrix round_to_permutation(const DoublyStochasticMatrix& q) {
  return round_to_permutation(q.values);
}

/// Mean negative log-likelihood of the true original index of every slot:
///   -(1/n) sum_i log(max(Q[i][perm[i]], eps)).
inline double reorder_loss(const ShuffleMatrix& p, const Matrix& q, double eps = 1e-9) {
  if (q.rows() != p.size() || q.cols() != p.size()) {
    throw DimensionError("reorder_loss: shuffle and prediction sizes differ");
  }
  const int n = p.size();
  double total = 0.0;
  for (int i = 0; i < n; ++i) total -= std::log(std::max(q(i, p[i]), eps));
  return total / n;
}

inline double reorder_loss(const ShuffleMatrix& p, const DoublyStochasticMatrix& q,
                           double eps = 1e-9) {
  return reorder_loss(p, q.values, eps);
}

/// d reorder_loss / dQ; entries clamped at eps get zero gradient.
inline Matrix reorder_loss_grad(const ShuffleMatrix& p, const Matrix& q, double eps = 1e-9) {
  if (q.rows() != p.size() || q.cols() != p.size()) {
    throw DimensionError("reorder_loss_grad: shuffle and prediction sizes differ");
  }
  const int n = p.size();
  Matrix g = Matrix::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    const double v = q(i, p[i]);
    if (v > eps) g(i, p[i]) = -1.0 / (n * v);
  }
  return g;
}

inline double permutation_accuracy(const ShuffleMatrix& predicted, const ShuffleMatrix& target) {
  if (predicted.size() != target.size()) {
    throw DimensionError("permutation_accuracy: permutation sizes differ");
  }
  if (target.size() == 0) return 1.0;
  int hits = 0;
  for (int i = 0; i < target.size(); ++i) hits += predicted[i] == target[i];
  return static_cast<double>(hits) / target.size();
}

}  // namespace psrp
