#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

namespace cast {

struct LpResult {
  bool feasible = false;
  bool bounded = true;
  double value = 0.0;
  Eigen::VectorXd x;
};

/// Dense two-phase tableau simplex for  min c'x  s.t.  A x = b, x >= 0  (Bland's rule).
inline LpResult solve_lp(const Eigen::MatrixXd& a_in, const Eigen::VectorXd& b_in, const Eigen::VectorXd& c,
                         double tol = 1e-11) {
  const Eigen::Index m = a_in.rows(), n = a_in.cols();
  Eigen::MatrixXd a = a_in;
  Eigen::VectorXd b = b_in;
  for (Eigen::Index i = 0; i < m; ++i)
    if (b(i) < 0) {
      a.row(i) *= -1.0;
      b(i) = -b(i);
    }

  // Columns: x (n), artificials (m), rhs.
  const Eigen::Index cols = n + m;
  Eigen::MatrixXd t = Eigen::MatrixXd::Zero(m + 1, cols + 1);
  t.topLeftCorner(m, n) = a;
  t.block(0, n, m, m).setIdentity();
  t.topRightCorner(m, 1) = b;
  std::vector<Eigen::Index> basis(static_cast<std::size_t>(m));
  for (Eigen::Index i = 0; i < m; ++i) basis[static_cast<std::size_t>(i)] = n + i;
  std::vector<bool> live(static_cast<std::size_t>(m), true);

  auto pivot = [&](Eigen::Index r, Eigen::Index col) {
    t.row(r) /= t(r, col);
    for (Eigen::Index i = 0; i <= m; ++i)
      if (i != r && t(i, col) != 0.0) t.row(i) -= t(i, col) * t.row(r);
    basis[static_cast<std::size_t>(r)] = col;
  };

  // Returns false if unbounded.
  auto iterate = [&](Eigen::Index allowed) {
    for (int guard = 0; guard < 100000; ++guard) {
      Eigen::Index enter = -1;
      for (Eigen::Index j = 0; j < allowed; ++j)
        if (t(m, j) < -tol) {
          enter = j;
          break;
        }
      if (enter < 0) return true;
      Eigen::Index leave = -1;
      double best = std::numeric_limits<double>::infinity();
      for (Eigen::Index i = 0; i < m; ++i) {
        if (!live[static_cast<std::size_t>(i)] || t(i, enter) <= tol) continue;
        const double ratio = t(i, cols) / t(i, enter);
        if (ratio < best - tol ||
            (std::abs(ratio - best) <= tol && leave >= 0 &&
             basis[static_cast<std::size_t>(i)] < basis[static_cast<std::size_t>(leave)])) {
          best = ratio;
          leave = i;
        }
      }
      if (leave < 0) return false;
      pivot(leave, enter);
    }
    return true;
  };

  // Phase 1.
  t.row(m).setZero();
  for (Eigen::Index i = 0; i < m; ++i) {
    t.row(m).head(n) -= t.row(i).head(n);
    t(m, cols) -= t(i, cols);
  }
  iterate(n);
  LpResult res;
  if (-t(m, cols) > 1e-9) return res;
  res.feasible = true;
  for (Eigen::Index i = 0; i < m; ++i) {
    if (basis[static_cast<std::size_t>(i)] < n) continue;
    Eigen::Index j = 0;
    while (j < n && std::abs(t(i, j)) <= tol) ++j;
    if (j < n)
      pivot(i, j);
    else
      live[static_cast<std::size_t>(i)] = false;  // redundant constraint
  }

  // Phase 2.
  t.row(m).setZero();
  t.row(m).head(n) = c.transpose();
  for (Eigen::Index i = 0; i < m; ++i) {
    if (!live[static_cast<std::size_t>(i)]) continue;
    const Eigen::Index bj = basis[static_cast<std::size_t>(i)];
    if (bj < n && t(m, bj) != 0.0) t.row(m) -= t(m, bj) * t.row(i);
  }
  if (!iterate(n)) {
    res.bounded = false;
    return res;
  }
  res.x = Eigen::VectorXd::Zero(n);
  for (Eigen::Index i = 0; i < m; ++i) {
    const Eigen::Index bj = basis[static_cast<std::size_t>(i)];
    if (live[static_cast<std::size_t>(i)] && bj < n) res.x(bj) = t(i, cols);
  }
  res.value = c.dot(res.x);
  return res;
}

/// Optimal transport cost between p and q on bins 1..D with ground metric |i - j|.
inline double transport_lp(std::span<const double> p, std::span<const double> q) {
  const auto d = static_cast<Eigen::Index>(p.size());
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(2 * d, d * d);
  Eigen::VectorXd b(2 * d), c(d * d);
  for (Eigen::Index i = 0; i < d; ++i) {
    b(i) = p[static_cast<std::size_t>(i)];
    b(d + i) = q[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < d; ++j) {
      a(i, i * d + j) = 1.0;
      a(d + j, i * d + j) = 1.0;
      c(i * d + j) = std::abs(static_cast<double>(i - j));
    }
  }
  return solve_lp(a, b, c).value;
}

/// min_w || u - V w ||_1 over the probability simplex; V has one vertex per column.
inline double l1_distance_to_hull(const Eigen::MatrixXd& v, const Eigen::VectorXd& u) {
  const Eigen::Index d = v.rows(), k = v.cols();
  // Variables: w (k), e+ (d), e- (d).
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(d + 1, k + 2 * d);
  Eigen::VectorXd b(d + 1), c = Eigen::VectorXd::Zero(k + 2 * d);
  a.topLeftCorner(d, k) = v;
  a.block(0, k, d, d).setIdentity();
  a.block(0, k + d, d, d) = -Eigen::MatrixXd::Identity(d, d);
  b.head(d) = u;
  a.row(d).head(k).setOnes();
  b(d) = 1.0;
  c.tail(2 * d).setOnes();
  return solve_lp(a, b, c).value;
}

}  // namespace cast
