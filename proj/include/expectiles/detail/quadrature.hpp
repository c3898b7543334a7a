#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/quadrature/gauss_kronrod.hpp>

namespace expectiles::detail {

/// Adaptive 15-point Gauss–Kronrod integral of f over [a, b].
inline double integrate(const std::function<double(double)>& f, double a, double b, double tol = 1e-13) {
  if (b <= a) return 0.0;
  return boost::math::quadrature::gauss_kronrod<double, 15>::integrate(f, a, b, 20, tol);
}

/// Same, with the interval split at the given interior points.
inline double integrate_piecewise(const std::function<double(double)>& f, double a, double b,
                                  const std::vector<double>& cuts, double tol = 1e-13) {
  double total = 0.0;
  double left = a;
  for (double c : cuts) {
    if (c <= left || c >= b) continue;
    total += integrate(f, left, c, tol);
    left = c;
  }
  return total + integrate(f, left, b, tol);
}

struct QuadratureRule {
  std::vector<double> nodes;    // ascending
  std::vector<double> weights;  // sum to one
};

/// Gauss–Hermite rule for the standard normal weight e^{−z²/2}/√(2π), by Golub–Welsch.
inline QuadratureRule gauss_hermite_standard_normal(int n) {
  if (n < 1) throw std::invalid_argument("Gauss-Hermite rule needs at least one node");
  Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(n, n);
  for (int k = 1; k < n; ++k) {
    jacobi(k, k - 1) = jacobi(k - 1, k) = std::sqrt(static_cast<double>(k));
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(jacobi);
  QuadratureRule rule;
  rule.nodes.resize(n);
  rule.weights.resize(n);
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    rule.nodes[i] = eig.eigenvalues()(i);
    rule.weights[i] = eig.eigenvectors()(0, i) * eig.eigenvectors()(0, i);
    total += rule.weights[i];
  }
  for (double& w : rule.weights) w /= total;
  // Enforce exact symmetry of the rule.
  for (int i = 0; i < n / 2; ++i) {
    const int j = n - 1 - i;
    const double z = 0.5 * (rule.nodes[j] - rule.nodes[i]);
    const double w = 0.5 * (rule.weights[i] + rule.weights[j]);
    rule.nodes[i] = -z;
    rule.nodes[j] = z;
    rule.weights[i] = rule.weights[j] = w;
  }
  if (n % 2 == 1) rule.nodes[n / 2] = 0.0;
  return rule;
}

}  // namespace expectiles::detail
