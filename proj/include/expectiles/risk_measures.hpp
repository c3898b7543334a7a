#pragma once

// Quantile-based comparison measures for expectiles: VaR, AVaR, spectral
// risk measures, the enveloping spectrum, the Kusuoka mixture and the
// comparison bounds between expectiles, AVaR and the mean.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "expectiles/core.hpp"
#include "expectiles/detail/quadrature.hpp"

namespace expectiles {

/// Left-continuous quantile function F⁻¹(u) = inf{x : P(X ≤ x) ≥ u} of an empirical distribution.
class QuantileFunction {
 public:
  explicit QuantileFunction(const EmpiricalDistribution& dist) : dist_(&dist) {}

  /// Index of the atom carrying F⁻¹(u).
  std::size_t index(double u) const {
    const auto c = dist_->cumulative_weights();
    const auto it = std::lower_bound(c.begin(), c.end(), u);
    return it == c.end() ? c.size() - 1 : static_cast<std::size_t>(it - c.begin());
  }

  double operator()(double u) const { return dist_->values()[index(u)]; }

 private:
  const EmpiricalDistribution* dist_;
};

/// Pinball score ℓ̃_α(x) = (α − ½)x + ½|x|; VaR_α minimises E ℓ̃_α(X − q).
inline double quantile_loss(double x, RiskLevel level) {
  return (level.alpha() - 0.5) * x + 0.5 * std::abs(x);
}

inline double value_at_risk(const EmpiricalDistribution& dist, RiskLevel level) {
  return QuantileFunction(dist)(level.alpha());
}

/// AVaR_p(X) = (1/(1 − p))∫_p¹ F⁻¹(u)du, exact for the step quantile; p ∈ [0, 1).
inline double average_value_at_risk(const EmpiricalDistribution& dist, double level) {
  if (!(level >= 0.0 && level < 1.0)) {
    throw std::invalid_argument("AVaR level must lie in [0, 1), got " + std::to_string(level));
  }
  if (level == 0.0) return dist.mean();
  const std::size_t k = QuantileFunction(dist).index(level);
  const double ck = dist.cumulative_weights()[k];
  const double tail = dist.values()[k] * (ck - level) + dist.tail_moment(k + 1);
  return std::clamp(tail / (1.0 - level), dist.values()[k], dist.max());
}

inline double average_value_at_risk(const EmpiricalDistribution& dist, RiskLevel level) {
  return average_value_at_risk(dist, level.alpha());
}

/// q + E(X − q)₊/(1 − p); minimised over q by q = VaR_p with minimum AVaR_p.
inline double average_value_at_risk_objective(const EmpiricalDistribution& dist, double level, double q) {
  return q + dist.upper_partial_moment(q) / (1.0 - level);
}

/// Nondecreasing, non-negative weight function σ on [0, 1] with unit integral.
class Spectrum {
 public:
  using Function = std::function<double(double)>;

  /// `breakpoints` lists interior points where σ may jump; `antiderivative`
  /// optionally supplies S(u) = ∫₀ᵘ σ in closed form.
  explicit Spectrum(Function density, std::vector<double> breakpoints = {}, Function antiderivative = {},
                    int validation_points = 1001)
      : density_(std::move(density)), breakpoints_(std::move(breakpoints)), antiderivative_(std::move(antiderivative)) {
    if (!density_) throw std::invalid_argument("spectrum density is empty");
    std::sort(breakpoints_.begin(), breakpoints_.end());
    double previous = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < validation_points; ++i) {
      const double u = static_cast<double>(i) / validation_points;
      const double s = density_(u);
      if (!std::isfinite(s) || s < 0.0) {
        throw std::invalid_argument("spectrum density is negative or non-finite at u = " + std::to_string(u));
      }
      if (s < previous - 1e-12 * std::max(1.0, std::abs(previous))) {
        throw std::invalid_argument("spectrum density decreases at u = " + std::to_string(u));
      }
      previous = s;
    }
    const double mass = detail::integrate_piecewise(density_, 0.0, 1.0, breakpoints_);
    if (std::abs(mass - 1.0) > 1e-8) {
      throw std::invalid_argument("spectrum density integrates to " + std::to_string(mass) + ", not 1");
    }
  }

  double density(double u) const { return density_(u); }

  /// ∫ₐᵇ σ(u)du
  double mass(double a, double b) const {
    if (antiderivative_) return antiderivative_(b) - antiderivative_(a);
    return detail::integrate_piecewise(density_, a, b, breakpoints_);
  }

  /// S(u) = ∫₀ᵘ σ
  double cumulative(double u) const { return mass(0.0, u); }

  bool has_closed_form() const noexcept { return static_cast<bool>(antiderivative_); }

  /// σ ≡ 1; the spectral measure is the expectation.
  static Spectrum flat() {
    return Spectrum([](double) { return 1.0; }, {}, [](double u) { return u; });
  }

  /// σ = 1/(1 − p) on [p, 1); the spectral measure is AVaR_p.
  static Spectrum average_value_at_risk(double level) {
    if (!(level >= 0.0 && level < 1.0)) throw std::invalid_argument("AVaR level must lie in [0, 1)");
    const double height = 1.0 / (1.0 - level);
    return Spectrum([=](double u) { return u >= level ? height : 0.0; }, {level},
                    [=](double u) { return u > level ? (u - level) * height : 0.0; });
  }

 private:
  Function density_;
  std::vector<double> breakpoints_;
  Function antiderivative_;
};

/// ∫₀¹ F⁻¹(u)σ(u)du = Σᵢ xᵢ·(S(cᵢ) − S(cᵢ₋₁)).
inline double spectral_risk(const EmpiricalDistribution& dist, const Spectrum& spectrum) {
  const auto x = dist.values();
  const auto c = dist.cumulative_weights();
  double total = 0.0;
  double left = 0.0;
  double s_left = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double s_right = spectrum.has_closed_form() ? spectrum.cumulative(c[i]) : s_left + spectrum.mass(left, c[i]);
    total += x[i] * (s_right - s_left);
    left = c[i];
    s_left = s_right;
  }
  return total;
}

/// Smallest spectral risk measure dominating e_α: σ(u) = α(1−α)/(α − u(2α−1))², α > ½.
inline Spectrum enveloping_spectrum(RiskLevel level) {
  const double a = level.alpha();
  if (!(a > 0.5)) {
    throw std::invalid_argument("enveloping spectrum requires alpha > 1/2, got " + std::to_string(a));
  }
  const double slope = 2.0 * a - 1.0;
  return Spectrum(
      [=](double u) {
        const double d = a - u * slope;
        return a * (1.0 - a) / (d * d);
      },
      {}, [=](double u) { return 1.0 - a * (1.0 - u) / (a - u * slope); });
}

/// Kusuoka mixture γ·E X + (1 − γ)·AVaR_{(β − 1/γ)/(β − 1)}(X), β = α/(1 − α).
inline double kusuoka_objective(const EmpiricalDistribution& dist, RiskLevel level, double gamma) {
  const double a = level.alpha();
  const double beta = a / (1.0 - a);
  if (gamma >= 1.0) return dist.mean();
  const double p = std::clamp((beta - 1.0 / gamma) / (beta - 1.0), 0.0, 1.0);
  if (p >= 1.0) return dist.mean();
  return gamma * dist.mean() + (1.0 - gamma) * average_value_at_risk(dist, p);
}

/// Lower bound on e_α from maximising the Kusuoka mixture over a uniform
/// γ-grid on [1/β, 1], refined by golden-section search around the best node.
inline double kusuoka_expectile(const EmpiricalDistribution& dist, RiskLevel level, int gamma_grid_size) {
  const double a = level.alpha();
  if (!(a > 0.5)) throw std::invalid_argument("Kusuoka representation requires alpha > 1/2");
  if (gamma_grid_size < 2) throw std::invalid_argument("gamma grid needs at least two points");
  const double lo = (1.0 - a) / a;
  const double step = (1.0 - lo) / (gamma_grid_size - 1);
  auto f = [&](double g) { return kusuoka_objective(dist, level, g); };

  int best_j = 0;
  double best = -std::numeric_limits<double>::infinity();
  for (int j = 0; j < gamma_grid_size; ++j) {
    const double v = f(j + 1 == gamma_grid_size ? 1.0 : lo + j * step);
    if (v > best) {
      best = v;
      best_j = j;
    }
  }

  double left = lo + std::max(best_j - 1, 0) * step;
  double right = std::min(1.0, lo + (best_j + 1) * step);
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double x1 = right - inv_phi * (right - left);
  double x2 = left + inv_phi * (right - left);
  double f1 = f(x1);
  double f2 = f(x2);
  for (int it = 0; it < 100 && right - left > 1e-15; ++it) {
    if (f1 < f2) {
      left = x1;
      x1 = x2;
      f1 = f2;
      x2 = left + inv_phi * (right - left);
      f2 = f(x2);
    } else {
      right = x2;
      x2 = x1;
      f2 = f1;
      x1 = right - inv_phi * (right - left);
      f1 = f(x1);
    }
    best = std::max({best, f1, f2});
  }
  return best;
}

/// One inequality between risk functionals: slack = larger side − smaller side.
struct BoundCheck {
  bool applicable = false;
  bool holds = true;
  double slack = 0.0;
};

/// Comparison inequalities between expectiles, AVaR and the mean.
struct ComparisonReport {
  /// e_{1/(2−α)} ≤ AVaR_α
  BoundCheck expectile_below_avar;
  /// α/(3α−1)·E X + (2α−1)/(3α−1)·AVaR_{2−1/α} ≤ e_α ≤ AVaR_{2−1/α}, for α ≥ ½
  BoundCheck avar_sandwich;
  /// AVaR_α ≤ e_{1/(2−α)}/(1 − α), for X ≥ 0
  BoundCheck avar_below_scaled_expectile;
  /// e_α ≤ α/(1 − α)·E X, for X ≥ 0 and α ≥ ½
  BoundCheck expectile_below_scaled_mean;
  double tolerance = 1e-9;

  bool all_hold() const {
    return expectile_below_avar.holds && avar_sandwich.holds && avar_below_scaled_expectile.holds &&
           expectile_below_scaled_mean.holds;
  }
};

inline ComparisonReport check_comparison_bounds(const EmpiricalDistribution& dist, RiskLevel level,
                                                double tolerance = 1e-9) {
  const double a = level.alpha();
  ComparisonReport r;
  r.tolerance = tolerance;
  auto mark = [tolerance](BoundCheck& b, double slack) {
    b.applicable = true;
    b.slack = slack;
    b.holds = slack >= -tolerance;
  };

  const double e_dual = expectile(dist, RiskLevel(1.0 / (2.0 - a)));
  const double avar = average_value_at_risk(dist, a);
  mark(r.expectile_below_avar, avar - e_dual);

  if (a >= 0.5) {
    const double e = expectile(dist, level);
    const double p = 2.0 - 1.0 / a;
    const double avar_p = average_value_at_risk(dist, p);
    const double lower = (a * dist.mean() + (2.0 * a - 1.0) * avar_p) / (3.0 * a - 1.0);
    mark(r.avar_sandwich, std::min(e - lower, avar_p - e));
    if (dist.non_negative()) mark(r.expectile_below_scaled_mean, a / (1.0 - a) * dist.mean() - e);
  }
  if (dist.non_negative()) mark(r.avar_below_scaled_expectile, e_dual / (1.0 - a) - avar);
  return r;
}

}  // namespace expectiles
