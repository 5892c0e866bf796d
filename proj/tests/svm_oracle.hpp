#pragma once

// Reference solver and optimality measures for the SVM dual.

#include <algorithm>
#include <cmath>
#include <span>

#include "cgi/graph.hpp"

namespace testing_support {

using cgi::Matrix;
using cgi::Vector;

/// Euclidean projection onto {0 <= a <= C, y^T a = 0} by bisection on the
/// multiplier of the equality constraint.
inline Vector project_dual(const Vector& v, std::span<const int> y, double c) {
  auto at = [&](double mu, Vector& out) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      out(i) = std::clamp(v(i) - mu * y[i], 0.0, c);
      s += y[i] * out(i);
    }
    return s;
  };
  Vector out(v.size());
  double lo = -1.0, hi = 1.0;
  while (at(lo, out) < 0.0) lo *= 2.0;
  while (at(hi, out) > 0.0) hi *= 2.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (at(mid, out) > 0.0 ? lo : hi) = mid;
  }
  at(0.5 * (lo + hi), out);
  return out;
}

inline double dual_objective(const Matrix& q, const Vector& a) {
  return 0.5 * a.dot(q * a) - a.sum();
}

/// Accelerated projected gradient on min 1/2 a^T Q a - sum(a).
inline Vector projected_gradient_dual(const Matrix& kernel, std::span<const int> y, double c,
                                      int iterations = 20000) {
  const auto n = kernel.rows();
  Matrix q(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) q(i, j) = y[i] * y[j] * kernel(i, j);
  const double lipschitz = Eigen::SelfAdjointEigenSolver<Matrix>(q).eigenvalues().maxCoeff();
  const double step = 1.0 / std::max(lipschitz, 1e-12);
  Vector a = Vector::Zero(n), z = a;
  double t = 1.0;
  for (int it = 0; it < iterations; ++it) {
    const Vector next = project_dual(z - step * (q * z - Vector::Ones(n)), y, c);
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    z = next + ((t - 1.0) / t_next) * (next - a);
    a = next;
    t = t_next;
  }
  return a;
}

/// Largest violation of the optimality conditions of the soft-margin
/// problem, measured on y_i f(x_i) with f = sum_j a_j y_j K_ij + b.
inline double kkt_violation(const Matrix& kernel, std::span<const int> y, double c,
                            const Vector& a, double bias) {
  double worst = 0.0;
  const double edge = 1e-9 * c;
  for (Eigen::Index i = 0; i < kernel.rows(); ++i) {
    double f = bias;
    for (Eigen::Index j = 0; j < kernel.cols(); ++j) f += a(j) * y[j] * kernel(i, j);
    const double margin = y[i] * f;
    double v = 0.0;
    if (a(i) <= edge) v = std::max(0.0, 1.0 - margin);
    else if (a(i) >= c - edge) v = std::max(0.0, margin - 1.0);
    else v = std::abs(margin - 1.0);
    worst = std::max(worst, v);
  }
  return worst;
}

}  // namespace testing_support
