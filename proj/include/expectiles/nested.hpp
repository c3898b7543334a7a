#pragma once

// Conditional and nested expectiles on finite lattices, the rescaled level
// ẽ_β, Gauss–Hermite random-walk lattices, drift refinement studies and the
// finite-difference risk generator.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "expectiles/core.hpp"
#include "expectiles/detail/quadrature.hpp"

namespace expectiles {

/// β(t, x), expected to take values in [0, 1].
using RiskRate = std::function<double(double t, double x)>;

inline RiskRate constant_rate(double beta) {
  return [beta](double, double) { return beta; };
}

/// Rescaled level β·Δt ∈ [0, 1], mapped to the static level α = (1 + √β)/2.
class RescaledLevel {
 public:
  explicit RescaledLevel(double beta_dt) : beta_dt_(beta_dt) {
    if (!(beta_dt >= 0.0 && beta_dt <= 1.0)) {
      throw std::invalid_argument("rescaled level must lie in [0, 1], got " + std::to_string(beta_dt));
    }
  }
  double beta_dt() const noexcept { return beta_dt_; }
  double alpha() const noexcept { return 0.5 * (1.0 + std::sqrt(beta_dt_)); }

 private:
  double beta_dt_;
};

namespace detail {

// ẽ_β of small atom sets given in ascending order (ties allowed).
inline double rescaled_expectile_sorted(std::span<const double> values, std::span<const double> weights,
                                        double beta_dt) {
  const double alpha = RescaledLevel(beta_dt).alpha();
  if (alpha >= 1.0) return values.back();
  return expectile_sorted(values, weights, alpha);
}

}  // namespace detail

/// ẽ_β(X) = e_{(1+√β)/2}(X); β = 0 is the mean, β = 1 the largest atom.
inline double rescaled_expectile(const EmpiricalDistribution& dist, RescaledLevel level) {
  const double alpha = level.alpha();
  if (alpha >= 1.0) return dist.max();
  return dist.expectile(RiskLevel(alpha));
}

/// Static expectile within each conditioning cell, with a per-cell level.
inline std::vector<double> conditional_expectile(const std::vector<EmpiricalDistribution>& groups,
                                                 const std::vector<RiskLevel>& levels) {
  if (groups.size() != levels.size()) throw std::invalid_argument("one risk level per group is required");
  std::vector<double> out;
  out.reserve(groups.size());
  for (std::size_t i = 0; i < groups.size(); ++i) out.push_back(groups[i].expectile(levels[i]));
  return out;
}

struct Transition {
  std::uint32_t child;
  double probability;
};

/// Nodes of one time layer. For non-terminal layers the children of node j
/// are transitions[offsets[j] .. offsets[j+1]), indexing the next layer.
struct LatticeLayer {
  std::vector<double> states;
  std::vector<std::size_t> offsets;
  std::vector<Transition> transitions;
};

/// Finite-state Markov lattice on a time grid t₀ < … < t_N with a single root node.
class LatticeProcess {
 public:
  LatticeProcess(std::vector<double> times, std::vector<LatticeLayer> layers)
      : times_(std::move(times)), layers_(std::move(layers)) {
    if (times_.size() < 2) throw std::invalid_argument("lattice needs at least two time points");
    if (layers_.size() != times_.size()) throw std::invalid_argument("one node layer per time point is required");
    for (std::size_t i = 0; i < times_.size(); ++i) {
      if (!std::isfinite(times_[i])) throw std::invalid_argument("non-finite time");
      if (i > 0 && !(times_[i] > times_[i - 1])) throw std::invalid_argument("times must be strictly increasing");
    }
    if (layers_.front().states.size() != 1) throw std::invalid_argument("the first layer must hold exactly one node");
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      auto& layer = layers_[i];
      if (layer.states.empty()) throw std::invalid_argument("layer " + std::to_string(i) + " has no nodes");
      for (double x : layer.states) {
        if (!std::isfinite(x)) throw std::invalid_argument("non-finite state in layer " + std::to_string(i));
      }
      if (i + 1 == layers_.size()) {
        layer.offsets.assign(layer.states.size() + 1, 0);
        layer.transitions.clear();
        continue;
      }
      const std::size_t next = layers_[i + 1].states.size();
      if (layer.offsets.size() != layer.states.size() + 1 || layer.offsets.front() != 0 ||
          layer.offsets.back() != layer.transitions.size()) {
        throw std::invalid_argument("malformed child offsets in layer " + std::to_string(i));
      }
      for (std::size_t j = 0; j < layer.states.size(); ++j) {
        if (layer.offsets[j + 1] <= layer.offsets[j]) {
          throw std::invalid_argument("node " + std::to_string(j) + " of layer " + std::to_string(i) +
                                      " has no children");
        }
        double total = 0.0;
        for (std::size_t e = layer.offsets[j]; e < layer.offsets[j + 1]; ++e) {
          const Transition& tr = layer.transitions[e];
          if (tr.child >= next) throw std::invalid_argument("child index out of range in layer " + std::to_string(i));
          if (!(tr.probability > 0.0)) throw std::invalid_argument("transition probabilities must be positive");
          total += tr.probability;
        }
        if (std::abs(total - 1.0) > 1e-12) {
          throw std::invalid_argument("probabilities of node " + std::to_string(j) + " in layer " +
                                      std::to_string(i) + " sum to " + std::to_string(total));
        }
      }
    }
  }

  std::size_t steps() const noexcept { return times_.size() - 1; }
  std::span<const double> times() const noexcept { return times_; }
  const LatticeLayer& layer(std::size_t i) const { return layers_.at(i); }
  double root_state() const { return layers_.front().states.front(); }

  std::span<const Transition> children(std::size_t layer, std::size_t node) const {
    const LatticeLayer& l = layers_.at(layer);
    return std::span<const Transition>(l.transitions).subspan(l.offsets[node], l.offsets[node + 1] - l.offsets[node]);
  }

  std::size_t node_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += l.states.size();
    return n;
  }

 private:
  std::vector<double> times_;
  std::vector<LatticeLayer> layers_;
};

struct NestedResult {
  double value = 0.0;
  /// nodes where β·Δt exceeded 1 and was clamped
  std::size_t clamped_nodes = 0;
};

/// X₀ + V(root) with V = 0 on the terminal layer and
/// V = ẽ_{β(tᵢ,x)·Δtᵢ}(child − x + V_child) elsewhere.
inline NestedResult nested_expectile(const LatticeProcess& process, const RiskRate& rate) {
  NestedResult result;
  const std::size_t n = process.steps();
  std::vector<double> next(process.layer(n).states.size(), 0.0);
  std::vector<double> current;
  std::vector<std::pair<double, double>> atoms;
  std::vector<double> values;
  std::vector<double> weights;
  for (std::size_t i = n; i-- > 0;) {
    const LatticeLayer& layer = process.layer(i);
    const double t = process.times()[i];
    const double dt = process.times()[i + 1] - t;
    const auto& child_states = process.layer(i + 1).states;
    current.assign(layer.states.size(), 0.0);
    for (std::size_t j = 0; j < layer.states.size(); ++j) {
      const double x = layer.states[j];
      const double beta = rate(t, x);
      if (!(beta >= 0.0 && beta <= 1.0)) {
        throw std::invalid_argument("risk rate " + std::to_string(beta) + " at t = " + std::to_string(t) +
                                    ", x = " + std::to_string(x) + " is outside [0, 1]");
      }
      double beta_dt = beta * dt;
      if (beta_dt > 1.0) {
        beta_dt = 1.0;
        ++result.clamped_nodes;
      }
      atoms.clear();
      for (std::size_t e = layer.offsets[j]; e < layer.offsets[j + 1]; ++e) {
        const Transition& tr = layer.transitions[e];
        atoms.emplace_back(child_states[tr.child] - x + next[tr.child], tr.probability);
      }
      std::sort(atoms.begin(), atoms.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
      values.clear();
      weights.clear();
      for (const auto& [v, w] : atoms) {
        values.push_back(v);
        weights.push_back(w);
      }
      current[j] = detail::rescaled_expectile_sorted(values, weights, beta_dt);
    }
    next.swap(current);
  }
  result.value = process.root_state() + next.front();
  return result;
}

/// Standard-normal increment rule on the integer grid k·h.
struct IncrementRule {
  std::vector<int> offsets;
  std::vector<double> weights;
  double spacing = 1.0;
  /// true when E|Z| = √(2/π) is matched in addition to E Z = 0, E Z² = 1
  bool abs_moment_matched = false;
  bool variance_matched = false;
};

namespace detail {

// Minimum-relative-entropy reweighting w·exp(Σ θₖ·φₖ(z)) matching E φₖ = targetₖ,
// by Newton on the convex dual. Returns false when the targets are not attainable.
template <int K>
bool exponential_tilt(const std::vector<double>& z, std::vector<double>& w,
                      const std::array<std::function<double(double)>, K>& phi, const std::array<double, K>& target) {
  using Vec = Eigen::Matrix<double, K, 1>;
  using Mat = Eigen::Matrix<double, K, K>;
  const std::size_t n = z.size();
  std::vector<Vec> features(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (int k = 0; k < K; ++k) features[i](k) = phi[k](z[i]) - target[k];
  }
  // Dual objective log Σ wᵢ exp(θ·φ̃ᵢ); its gradient is the tilted moment error.
  auto evaluate = [&](const Vec& theta, Vec* grad, Mat* hess, std::vector<double>* p) {
    double shift = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) shift = std::max(shift, theta.dot(features[i]));
    std::vector<double> q(n);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) total += q[i] = w[i] * std::exp(theta.dot(features[i]) - shift);
    Vec g = Vec::Zero();
    for (std::size_t i = 0; i < n; ++i) {
      q[i] /= total;
      g += q[i] * features[i];
    }
    if (grad) *grad = g;
    if (hess) {
      Mat h = Mat::Zero();
      for (std::size_t i = 0; i < n; ++i) h += q[i] * (features[i] - g) * (features[i] - g).transpose();
      *hess = h;
    }
    if (p) *p = q;
    return std::log(total) + shift;
  };

  Vec theta = Vec::Zero();
  Vec g;
  Mat h;
  double value = evaluate(theta, &g, &h, nullptr);
  for (int it = 0; it < 200; ++it) {
    if (g.template lpNorm<Eigen::Infinity>() < 1e-15) break;
    const Vec step = h.ldlt().solve(-g);
    if (!step.allFinite()) return false;
    // Armijo on the dual value; near the optimum the value stalls at
    // rounding level, so a shrinking gradient is accepted as well.
    double t = 1.0;
    Vec trial = theta + step;
    Vec trial_g;
    double trial_value = evaluate(trial, &trial_g, nullptr, nullptr);
    while (trial_value > value + 1e-4 * t * g.dot(step) &&
           !(trial_g.template lpNorm<Eigen::Infinity>() < 0.5 * g.template lpNorm<Eigen::Infinity>()) && t > 1e-12) {
      t *= 0.5;
      trial = theta + t * step;
      trial_value = evaluate(trial, &trial_g, nullptr, nullptr);
    }
    if (!(t > 1e-12) || theta.template lpNorm<Eigen::Infinity>() > 1e3) return false;
    theta = trial;
    value = evaluate(theta, &g, &h, nullptr);
  }
  if (!(g.template lpNorm<Eigen::Infinity>() < 1e-13)) return false;
  evaluate(theta, nullptr, nullptr, &w);
  return true;
}

}  // namespace detail

/// Gauss–Hermite nodes snapped to a common grid k·h so lattices recombine,
/// then reweighted (minimum relative entropy) to restore E Z² = 1 and, when
/// attainable, E|Z| = √(2/π), which governs the drift of the nested expectile.
inline IncrementRule random_walk_increment_rule(int quad_nodes) {
  if (quad_nodes < 2) throw std::invalid_argument("random walk needs at least two quadrature nodes");
  const detail::QuadratureRule gh = detail::gauss_hermite_standard_normal(quad_nodes);
  double gap = std::numeric_limits<double>::infinity();
  for (std::size_t i = 1; i < gh.nodes.size(); ++i) gap = std::min(gap, gh.nodes[i] - gh.nodes[i - 1]);

  IncrementRule rule;
  rule.spacing = quad_nodes % 2 == 1 ? gap : 0.5 * gap;
  std::vector<double> z;
  for (std::size_t i = 0; i < gh.nodes.size(); ++i) {
    const int k = static_cast<int>(std::lround(gh.nodes[i] / rule.spacing));
    rule.offsets.push_back(k);
    rule.weights.push_back(gh.weights[i]);
    z.push_back(k * rule.spacing);
  }

  const auto square = [](double v) { return v * v; };
  const auto absolute = [](double v) { return std::abs(v); };
  std::vector<double> w = rule.weights;
  if (detail::exponential_tilt<2>(z, w, {square, absolute}, {1.0, std::sqrt(2.0 / std::numbers::pi)})) {
    rule.abs_moment_matched = rule.variance_matched = true;
    rule.weights = w;
    return rule;
  }
  w = rule.weights;
  if (detail::exponential_tilt<1>(z, w, {square}, {1.0})) {
    rule.variance_matched = true;
    rule.weights = w;
  }
  return rule;
}

/// Recombining lattice for X₀ + W_t with states x₀ + k·h·√Δt, built from the
/// reachable grid indices of the increment rule.
inline LatticeProcess build_random_walk_lattice(double x0, double T, int steps, int quad_nodes = 7) {
  if (steps < 1) throw std::invalid_argument("steps must be at least 1");
  if (!(T > 0.0) || !std::isfinite(T)) throw std::invalid_argument("horizon must be positive");
  if (!std::isfinite(x0)) throw std::invalid_argument("x0 must be finite");
  const IncrementRule rule = random_walk_increment_rule(quad_nodes);
  const double dt = T / steps;
  const double dx = rule.spacing * std::sqrt(dt);
  int kmax = 0;
  for (int k : rule.offsets) kmax = std::max(kmax, std::abs(k));

  std::vector<double> times(static_cast<std::size_t>(steps) + 1);
  for (int i = 0; i <= steps; ++i) times[i] = T * i / steps;

  std::vector<LatticeLayer> layers(static_cast<std::size_t>(steps) + 1);
  std::vector<int> indices{0};  // reachable grid indices of the current layer, ascending
  layers[0].states = {x0};
  for (int i = 0; i < steps; ++i) {
    const int reach = (i + 1) * kmax;
    std::vector<char> hit(static_cast<std::size_t>(2 * reach + 1), 0);
    for (int j : indices) {
      for (int k : rule.offsets) hit[static_cast<std::size_t>(j + k + reach)] = 1;
    }
    std::vector<int> next_indices;
    std::vector<std::uint32_t> position(hit.size(), 0);
    for (int m = -reach; m <= reach; ++m) {
      if (!hit[static_cast<std::size_t>(m + reach)]) continue;
      position[static_cast<std::size_t>(m + reach)] = static_cast<std::uint32_t>(next_indices.size());
      next_indices.push_back(m);
    }
    LatticeLayer& layer = layers[i];
    layer.offsets.reserve(indices.size() + 1);
    layer.offsets.push_back(0);
    layer.transitions.reserve(indices.size() * rule.offsets.size());
    for (int j : indices) {
      for (std::size_t r = 0; r < rule.offsets.size(); ++r) {
        layer.transitions.push_back({position[static_cast<std::size_t>(j + rule.offsets[r] + reach)], rule.weights[r]});
      }
      layer.offsets.push_back(layer.transitions.size());
    }
    LatticeLayer& child = layers[i + 1];
    child.states.reserve(next_indices.size());
    for (int m : next_indices) child.states.push_back(x0 + m * dx);
    indices.swap(next_indices);
  }
  return LatticeProcess(std::move(times), std::move(layers));
}

struct DriftRow {
  int steps = 0;
  double dt = 0.0;
  double value = 0.0;
  double reference = 0.0;
  double error = 0.0;
  std::size_t clamped_nodes = 0;
};

struct DriftStudy {
  std::vector<DriftRow> rows;
  /// each error at most (1 + slack) times the previous one
  bool nonincreasing = true;
};

/// Refinement study of the nested expectile of X₀ + W against
/// X₀ + √(2/π)∫₀ᵀ √β(t) dt for a state-independent rate β(t).
inline DriftStudy verify_drift_convergence(const std::function<double(double)>& beta, double T,
                                           const std::vector<int>& step_counts, int quad_nodes = 7,
                                           double x0 = 0.0, double slack = 0.1) {
  const double integral =
      detail::integrate([&](double t) { return std::sqrt(std::max(0.0, beta(t))); }, 0.0, T, 1e-14);
  const double reference = x0 + std::sqrt(2.0 / std::numbers::pi) * integral;
  const RiskRate rate = [&](double t, double) { return beta(t); };
  DriftStudy study;
  for (int steps : step_counts) {
    const LatticeProcess lattice = build_random_walk_lattice(x0, T, steps, quad_nodes);
    const NestedResult r = nested_expectile(lattice, rate);
    DriftRow row{steps, T / steps, r.value, reference, std::abs(r.value - reference), r.clamped_nodes};
    if (!study.rows.empty() && row.error > (1.0 + slack) * study.rows.back().error) study.nonincreasing = false;
    study.rows.push_back(row);
  }
  return study;
}

inline DriftStudy verify_drift_convergence(double beta, double T, const std::vector<int>& step_counts,
                                           int quad_nodes = 7, double x0 = 0.0, double slack = 0.1) {
  return verify_drift_convergence([beta](double) { return beta; }, T, step_counts, quad_nodes, x0, slack);
}

using ScalarField = std::function<double(double t, double x)>;

/// ∂f/∂t + μ∂f/∂x + ½σ²∂²f/∂x² + √(2β/π)|σ∂f/∂x| by central differences.
inline double risk_generator_fd(const ScalarField& f, const ScalarField& mu, const ScalarField& sigma,
                                const RiskRate& rate, double t, double x) {
  const double hx = std::max(1e-5, 1e-5 * std::abs(x));
  const double ht = std::max(1e-5, 1e-5 * std::abs(t));
  const double f0 = f(t, x);
  const double ft = (f(t + ht, x) - f(t - ht, x)) / (2.0 * ht);
  const double fp = f(t, x + hx);
  const double fm = f(t, x - hx);
  const double fx = (fp - fm) / (2.0 * hx);
  const double fxx = (fp - 2.0 * f0 + fm) / (hx * hx);
  const double s = sigma(t, x);
  const double beta = rate(t, x);
  return ft + mu(t, x) * fx + 0.5 * s * s * fxx + std::sqrt(2.0 * beta / std::numbers::pi) * std::abs(s * fx);
}

}  // namespace expectiles
