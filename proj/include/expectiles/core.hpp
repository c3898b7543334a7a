#pragma once

// Static expectiles: the risk level type, empirical and analytic
// distributions, the asymmetric quadratic score, and the expectile
// functional itself (root of the first-order condition).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <boost/math/tools/toms748_solve.hpp>

#include "expectiles/errors.hpp"

namespace expectiles {

/// Risk level α of a static expectile; always inside the open interval (0, 1).
class RiskLevel {
 public:
  explicit RiskLevel(double alpha) : alpha_(alpha) {
    if (!(alpha > 0.0 && alpha < 1.0)) {
      throw std::invalid_argument("risk level must lie in (0, 1), got " + std::to_string(alpha));
    }
  }

  double alpha() const noexcept { return alpha_; }

 private:
  double alpha_;
};

inline double standard_normal_pdf(double z) {
  return std::exp(-0.5 * z * z) * (0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2);
}

inline double standard_normal_cdf(double z) {
  return 0.5 * std::erfc(-z / std::numbers::sqrt2);
}

/// Asymmetric quadratic score ℓ_α(x): α·x² for x ≥ 0, (1 − α)·x² for x < 0.
inline double expectile_loss(double x, RiskLevel level) {
  const double a = level.alpha();
  return (x >= 0.0 ? a : 1.0 - a) * x * x;
}

namespace detail {

// Between two neighbouring atoms the first-order function
//   g(y) = (1 − α)·E(y − Y)₊ − α·E(Y − y)₊
// of a centred variable Y is affine:
//   g(y) = y·[(1 − α)W + α(1 − W)] + (2α − 1)·M,
// with W the weight and M the centred first moment of the atoms below y.
inline double first_order_slope(double below_weight, double alpha) {
  return (1.0 - alpha) * below_weight + alpha * (1.0 - below_weight);
}

inline double first_order_value(double y, double below_weight, double below_moment, double alpha) {
  return y * first_order_slope(below_weight, alpha) + (2.0 * alpha - 1.0) * below_moment;
}

inline double segment_root(double below_weight, double below_moment, double alpha) {
  return (1.0 - 2.0 * alpha) * below_moment / first_order_slope(below_weight, alpha);
}

// Expectile of atoms given strictly ascending values and positive weights
// (need not be normalised). Linear scan; meant for small supports such as the
// children of a lattice node.
inline double expectile_sorted(std::span<const double> values, std::span<const double> weights,
                               double alpha) {
  long double total = 0.0L;
  long double moment = 0.0L;
  for (std::size_t i = 0; i < values.size(); ++i) {
    total += weights[i];
    moment += static_cast<long double>(weights[i]) * values[i];
  }
  const double mean = static_cast<double>(moment / total);
  if (alpha == 0.5) return mean;

  long double below_w = 0.0L;
  long double below_m = 0.0L;
  double previous = 0.0;
  for (std::size_t k = 0; k < values.size(); ++k) {
    const double y = values[k] - mean;
    const double g = first_order_value(y, static_cast<double>(below_w), static_cast<double>(below_m), alpha);
    if (g >= 0.0) {
      if (k == 0) return values[0];
      const double root = segment_root(static_cast<double>(below_w), static_cast<double>(below_m), alpha);
      return mean + std::clamp(root, previous, y);
    }
    const long double w = weights[k] / total;
    below_w += w;
    below_m += w * y;
    previous = y;
  }
  return values.back();
}

}  // namespace detail

/// Finitely supported distribution: strictly ascending atoms with positive
/// weights summing to one. Duplicated values are merged, zero weights dropped
/// and the weights normalised at construction.
class EmpiricalDistribution {
 public:
  /// Equally weighted sample.
  explicit EmpiricalDistribution(std::vector<double> values)
      : EmpiricalDistribution(values, std::vector<double>(values.size(), 1.0)) {}

  EmpiricalDistribution(std::vector<double> values, std::vector<double> weights) {
    if (values.empty()) throw std::invalid_argument("empirical distribution needs at least one atom");
    if (values.size() != weights.size()) {
      throw std::invalid_argument("values and weights differ in length");
    }
    std::vector<std::pair<double, double>> atoms;
    atoms.reserve(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (!std::isfinite(values[i])) throw std::invalid_argument("non-finite sample value");
      if (!std::isfinite(weights[i]) || weights[i] < 0.0) {
        throw std::invalid_argument("weights must be finite and non-negative");
      }
      if (weights[i] > 0.0) atoms.emplace_back(values[i], weights[i]);
    }
    if (atoms.empty()) throw std::invalid_argument("all weights are zero");
    std::sort(atoms.begin(), atoms.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });

    long double total = 0.0L;
    for (const auto& [v, w] : atoms) {
      if (!values_.empty() && v == values_.back()) {
        weights_.back() += w;
      } else {
        values_.push_back(v);
        weights_.push_back(w);
      }
      total += w;
    }
    for (double& w : weights_) w = static_cast<double>(w / total);
    index();
  }

  static EmpiricalDistribution point_mass(double value) {
    return EmpiricalDistribution(std::vector<double>{value});
  }

  std::size_t size() const noexcept { return values_.size(); }
  std::span<const double> values() const noexcept { return values_; }
  std::span<const double> weights() const noexcept { return weights_; }
  /// c_i = Σ_{j ≤ i} w_j; the last entry is exactly 1.
  std::span<const double> cumulative_weights() const noexcept { return cumulative_; }

  double mean() const noexcept { return mean_; }
  double min() const noexcept { return values_.front(); }
  double max() const noexcept { return values_.back(); }
  bool non_negative() const noexcept { return values_.front() >= 0.0; }

  /// Σ_{j ≥ i} w_j·x_j, accumulated from the top so upper tails keep full precision.
  double tail_moment(std::size_t i) const noexcept { return i < size() ? tail_moment_[i] : 0.0; }

  /// E(x − X)₊
  double lower_partial_moment(double x) const {
    const std::size_t k = count_at_or_below(x);
    if (k == 0) return 0.0;
    return (x - mean_) * cumulative_[k - 1] - centred_prefix_[k - 1];
  }

  /// E(X − x)₊
  double upper_partial_moment(double x) const { return lower_partial_moment(x) + (mean_ - x); }

  /// Distribution of −X.
  EmpiricalDistribution negated() const {
    std::vector<double> v(values_.rbegin(), values_.rend());
    std::vector<double> w(weights_.rbegin(), weights_.rend());
    for (double& x : v) x = -x;
    return EmpiricalDistribution(std::move(v), std::move(w));
  }

  /// Value of g(x) = (1 − α)E(x − X)₊ − αE(X − x)₊; zero exactly at the expectile.
  double first_order_residual(double x, RiskLevel level) const {
    const double a = level.alpha();
    return (1.0 - a) * lower_partial_moment(x) - a * upper_partial_moment(x);
  }

  /// Expectile by exact solution of the piecewise-affine first-order condition.
  double expectile(RiskLevel level) const {
    const double a = level.alpha();
    if (a == 0.5) return mean_;
    const std::size_t n = size();
    // g at atom k uses the weight/moment strictly below it.
    auto g_at = [&](std::size_t k) {
      const double w = k == 0 ? 0.0 : cumulative_[k - 1];
      const double m = k == 0 ? 0.0 : centred_prefix_[k - 1];
      return detail::first_order_value(values_[k] - mean_, w, m, a);
    };
    std::size_t lo = 0;
    std::size_t hi = n - 1;
    if (g_at(0) >= 0.0) return values_.front();
    if (g_at(hi) < 0.0) return values_.back();
    while (hi - lo > 1) {
      const std::size_t mid = lo + (hi - lo) / 2;
      (g_at(mid) >= 0.0 ? hi : lo) = mid;
    }
    const double root = detail::segment_root(cumulative_[lo], centred_prefix_[lo], a);
    return mean_ + std::clamp(root, values_[lo] - mean_, values_[hi] - mean_);
  }

 private:
  std::size_t count_at_or_below(double x) const {
    return static_cast<std::size_t>(std::upper_bound(values_.begin(), values_.end(), x) - values_.begin());
  }

  void index() {
    const std::size_t n = values_.size();
    long double m = 0.0L;
    for (std::size_t i = 0; i < n; ++i) m += static_cast<long double>(weights_[i]) * values_[i];
    mean_ = static_cast<double>(m);

    cumulative_.resize(n);
    centred_prefix_.resize(n);
    long double c = 0.0L;
    long double cm = 0.0L;
    for (std::size_t i = 0; i < n; ++i) {
      c += weights_[i];
      cm += static_cast<long double>(weights_[i]) * (values_[i] - mean_);
      cumulative_[i] = static_cast<double>(c);
      centred_prefix_[i] = static_cast<double>(cm);
    }
    cumulative_.back() = 1.0;

    tail_moment_.resize(n);
    long double t = 0.0L;
    for (std::size_t i = n; i-- > 0;) {
      t += static_cast<long double>(weights_[i]) * values_[i];
      tail_moment_[i] = static_cast<double>(t);
    }
  }

  std::vector<double> values_;
  std::vector<double> weights_;
  std::vector<double> cumulative_;
  std::vector<double> centred_prefix_;
  std::vector<double> tail_moment_;
  double mean_ = 0.0;
};

/// Expectile e_α(X) of an empirical distribution.
inline double expectile(const EmpiricalDistribution& dist, RiskLevel level) {
  return dist.expectile(level);
}

// ---------------------------------------------------------------------------
// Analytic distributions

struct Uniform01 {};

class Normal {
 public:
  Normal(double mu, double sigma) : mu_(mu), sigma_(sigma) {
    if (!(sigma > 0.0) || !std::isfinite(sigma) || !std::isfinite(mu)) {
      throw std::invalid_argument("normal distribution needs finite mu and sigma > 0");
    }
  }
  double mu() const noexcept { return mu_; }
  double sigma() const noexcept { return sigma_; }

 private:
  double mu_;
  double sigma_;
};

/// log X ~ N(mu, sigma²).
class LogNormal {
 public:
  LogNormal(double mu, double sigma) : mu_(mu), sigma_(sigma) {
    if (!(sigma > 0.0) || !std::isfinite(sigma) || !std::isfinite(mu)) {
      throw std::invalid_argument("log-normal distribution needs finite mu and sigma > 0");
    }
  }
  double mu() const noexcept { return mu_; }
  double sigma() const noexcept { return sigma_; }
  double mean() const { return std::exp(mu_ + 0.5 * sigma_ * sigma_); }

  /// E(X − t)₊
  double upper_partial_moment(double t) const {
    if (t <= 0.0) return mean() - t;
    const double d2 = (mu_ - std::log(t)) / sigma_;
    return mean() * standard_normal_cdf(d2 + sigma_) - t * standard_normal_cdf(d2);
  }

  /// E(t − X)₊
  double lower_partial_moment(double t) const {
    if (t <= 0.0) return 0.0;
    const double d2 = (mu_ - std::log(t)) / sigma_;
    return t * standard_normal_cdf(-d2) - mean() * standard_normal_cdf(-d2 - sigma_);
  }

 private:
  double mu_;
  double sigma_;
};

using AnalyticDistribution = std::variant<Uniform01, Normal, LogNormal>;

/// f(α, z) = (2α − 1)(φ(z) + zΦ(z)) − αz; its root in z is the standard normal expectile.
inline double normal_expectile_equation(double alpha, double z) {
  return (2.0 * alpha - 1.0) * (standard_normal_pdf(z) + z * standard_normal_cdf(z)) - alpha * z;
}

/// Cubic truncation μ + σ√(8/π)(α − ½) + σ·8√2/√π³·(α − ½)³ of the normal expectile expansion.
inline double expectile_series_normal(double mu, double sigma, RiskLevel level) {
  if (!(sigma > 0.0)) throw std::invalid_argument("sigma must be positive");
  const double a = level.alpha() - 0.5;
  const double pi = std::numbers::pi;
  const double c1 = std::sqrt(8.0 / pi);
  const double c3 = 8.0 * std::numbers::sqrt2 / (pi * std::sqrt(pi));
  return mu + sigma * (c1 * a + c3 * a * a * a);
}

/// First-order expansion of the log-normal expectile around α = ½, with the
/// published coefficient (e^{σ²} − 1)·e^{2μ+σ²}·4√e·(2Φ(½) − 1). The exact
/// slope at ½ is 2·E|X − EX|; use expectile_analytic for values.
inline double expectile_series_lognormal(double mu, double sigma, RiskLevel level) {
  if (!(sigma > 0.0)) throw std::invalid_argument("sigma must be positive");
  const double s2 = sigma * sigma;
  const double mean = std::exp(mu + 0.5 * s2);
  const double coefficient = std::expm1(s2) * std::exp(2.0 * mu + s2) * 4.0 * std::sqrt(std::numbers::e) *
                             (2.0 * standard_normal_cdf(0.5) - 1.0);
  return mean + coefficient * (level.alpha() - 0.5);
}

namespace detail {

inline double standard_normal_expectile(double alpha) {
  if (alpha == 0.5) return 0.0;
  const double a = alpha - 0.5;
  double z = expectile_series_normal(0.0, 1.0, RiskLevel(alpha));
  constexpr double kNewtonBox = 10.0;
  bool converged = false;
  for (int it = 0; it < 100; ++it) {
    const double f = normal_expectile_equation(alpha, z);
    const double slope = 2.0 * a * standard_normal_cdf(z) - alpha;  // always < 0
    const double step = f / slope;
    z -= step;
    if (!(std::abs(z) < kNewtonBox)) break;
    if (std::abs(step) <= 4.0 * std::numeric_limits<double>::epsilon() * (1.0 + std::abs(z))) {
      converged = true;
      break;
    }
  }
  if (converged) return z;

  // f is strictly decreasing in z.
  double lo = -40.0;
  double hi = 40.0;
  for (int it = 0; it < 200 && hi - lo > 1e-15 * (1.0 + std::abs(lo)); ++it) {
    const double mid = 0.5 * (lo + hi);
    (normal_expectile_equation(alpha, mid) > 0.0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

inline double lognormal_expectile(const LogNormal& dist, double alpha) {
  // h(s) = αE(X − eˢ)₊ − (1 − α)E(eˢ − X)₊ is strictly decreasing in s.
  auto h = [&](double s) {
    const double t = std::exp(s);
    return alpha * dist.upper_partial_moment(t) - (1.0 - alpha) * dist.lower_partial_moment(t);
  };
  const double centre = dist.mu() + 0.5 * dist.sigma() * dist.sigma();
  double width = dist.sigma();
  double lo = centre - width;
  double hi = centre + width;
  double h_lo = h(lo);
  double h_hi = h(hi);
  for (int it = 0; it < 60 && !(h_lo >= 0.0 && h_hi <= 0.0); ++it) {
    width *= 2.0;
    if (h_lo < 0.0) h_lo = h(lo = centre - width);
    if (h_hi > 0.0) h_hi = h(hi = centre + width);
  }
  if (h_lo == 0.0) return std::exp(lo);
  if (h_hi == 0.0) return std::exp(hi);
  if (!(h_lo > 0.0 && h_hi < 0.0)) throw NumericalError("could not bracket the log-normal expectile");
  std::uintmax_t max_iter = 200;
  const auto [a, b] = boost::math::tools::toms748_solve(h, lo, hi, h_lo, h_hi,
                                                        boost::math::tools::eps_tolerance<double>(52), max_iter);
  return std::exp(0.5 * (a + b));
}

}  // namespace detail

/// Expectile of an analytic distribution: closed form for U[0,1], Newton on
/// the exact implicit equation for the normal, bracketed root of the exact
/// partial moments for the log-normal.
inline double expectile_analytic(const AnalyticDistribution& dist, RiskLevel level) {
  const double a = level.alpha();
  return std::visit(
      [a](const auto& d) -> double {
        using T = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<T, Uniform01>) {
          // (α − √(α(1−α)))/(2α − 1) rewritten without the removable 0/0 at α = ½.
          const double sa = std::sqrt(a);
          return sa / (sa + std::sqrt(1.0 - a));
        } else if constexpr (std::is_same_v<T, Normal>) {
          return d.mu() + d.sigma() * detail::standard_normal_expectile(a);
        } else {
          return detail::lognormal_expectile(d, a);
        }
      },
      dist);
}

}  // namespace expectiles
