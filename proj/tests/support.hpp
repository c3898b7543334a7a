#pragma once

// Shared generators and brute-force oracles for the test suites.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include "expectiles/core.hpp"

namespace testing_support {

using expectiles::EmpiricalDistribution;
using expectiles::RiskLevel;

struct Sample {
  std::vector<double> values;
  std::vector<double> weights;

  EmpiricalDistribution dist() const { return EmpiricalDistribution(values, weights); }
};

enum class Shape { signed_values, non_negative };

/// Random finitely supported law: 1..max_atoms atoms drawn from a mixture of
/// normal, exponential and lattice-valued pieces, with random positive weights.
inline Sample random_sample(std::mt19937_64& rng, std::size_t max_atoms, Shape shape = Shape::signed_values) {
  std::uniform_int_distribution<std::size_t> count(1, max_atoms);
  std::uniform_int_distribution<int> kind(0, 3);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::exponential_distribution<double> expo(1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> lattice(-5, 5);
  const double scale = std::exp(2.0 * normal(rng));
  const double shift = shape == Shape::signed_values ? 3.0 * normal(rng) : 0.0;
  const int k = kind(rng);
  Sample s;
  const std::size_t n = count(rng);
  for (std::size_t i = 0; i < n; ++i) {
    double v = 0.0;
    switch (k) {
      case 0: v = normal(rng); break;
      case 1: v = expo(rng); break;
      case 2: v = lattice(rng); break;
      default: v = unit(rng) < 0.9 ? normal(rng) : 20.0 * expo(rng); break;
    }
    v = scale * v + shift;
    if (shape == Shape::non_negative) v = std::abs(v);
    s.values.push_back(v);
    s.weights.push_back(unit(rng) < 0.5 ? 1.0 : 0.05 + unit(rng));
  }
  return s;
}

inline double expected_loss(const EmpiricalDistribution& d, double x, RiskLevel level) {
  double s = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) s += d.weights()[i] * expectiles::expectile_loss(d.values()[i] - x, level);
  return s;
}

/// Minimiser of a unimodal function: grid scan followed by golden-section refinement.
template <class F>
double grid_golden_minimum(F f, double lo, double hi, int grid = 2001) {
  if (hi <= lo) return lo;
  const double step = (hi - lo) / (grid - 1);
  int best = 0;
  double best_value = f(lo);
  for (int i = 1; i < grid; ++i) {
    const double v = f(lo + i * step);
    if (v < best_value) {
      best_value = v;
      best = i;
    }
  }
  double a = lo + std::max(0, best - 1) * step;
  double b = lo + std::min(grid - 1, best + 1) * step;
  const double r = 0.5 * (std::sqrt(5.0) - 1.0);
  double x1 = b - r * (b - a);
  double x2 = a + r * (b - a);
  double f1 = f(x1);
  double f2 = f(x2);
  for (int it = 0; it < 200 && b - a > 1e-14 * (1.0 + std::abs(a)); ++it) {
    if (f1 <= f2) {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - r * (b - a);
      f1 = f(x1);
    } else {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + r * (b - a);
      f2 = f(x2);
    }
  }
  return 0.5 * (a + b);
}

/// Expectile by minimising the expected asymmetric squared loss.
inline double expectile_by_minimisation(const EmpiricalDistribution& d, RiskLevel level) {
  return grid_golden_minimum([&](double x) { return expected_loss(d, x, level); }, d.min(), d.max());
}

/// Expectile by plain bisection on the first-order condition.
inline double expectile_by_bisection(const EmpiricalDistribution& d, RiskLevel level) {
  double lo = d.min();
  double hi = d.max();
  for (int it = 0; it < 200 && hi > lo; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    (d.first_order_residual(mid, level) < 0.0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

/// AVaR_p as (1/(1−p))∫_p¹ F⁻¹(u)du summed atom by atom.
inline double avar_by_tail_integral(const EmpiricalDistribution& d, double p) {
  double total = 0.0;
  double below = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double above = below + d.weights()[i];
    const double overlap = std::max(0.0, above - std::max(below, p));
    total += d.values()[i] * overlap;
    below = above;
  }
  return total / (1.0 - p);
}

inline std::vector<double> uniform_grid(std::size_t n, double lo = 0.0, double hi = 1.0) {
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
  return v;
}

inline std::vector<double> normal_sample(std::uint64_t seed, std::size_t n, double mu = 0.0, double sigma = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(mu, sigma);
  std::vector<double> v(n);
  for (double& x : v) x = normal(rng);
  return v;
}

}  // namespace testing_support
