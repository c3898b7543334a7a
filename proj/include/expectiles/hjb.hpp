#pragma once

// Risk-averse Hamilton–Jacobi–Bellman equation on a 1-D grid: explicit
// backward Euler with upwinding against the risk-adjusted drift, exhaustive
// minimisation over a finite control set, and Monte Carlo policy evaluation.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "expectiles/core.hpp"
#include "expectiles/errors.hpp"
#include "expectiles/nested.hpp"

namespace expectiles {

using Coefficient = std::function<double(double t, double x, double u)>;
using TerminalFunction = std::function<double(double x)>;

struct HjbProblem {
  Coefficient drift;
  Coefficient volatility;
  Coefficient cost;
  TerminalFunction terminal;
  RiskRate rate;
  std::vector<double> controls;
  double horizon = 1.0;

  void validate() const {
    if (!drift || !volatility || !cost || !terminal || !rate) {
      throw std::invalid_argument("every coefficient of the control problem must be set");
    }
    if (controls.empty()) throw std::invalid_argument("control set is empty");
    for (double u : controls) {
      if (!std::isfinite(u)) throw std::invalid_argument("non-finite control value");
    }
    if (!(horizon > 0.0) || !std::isfinite(horizon)) throw std::invalid_argument("horizon must be positive");
  }
};

struct Grid {
  double x_min = -1.0;
  double x_max = 1.0;
  int nx = 3;
  int nt = 1;

  void validate() const {
    if (!(x_min < x_max) || !std::isfinite(x_min) || !std::isfinite(x_max)) {
      throw std::invalid_argument("grid needs finite x_min < x_max");
    }
    if (nx < 3) throw std::invalid_argument("grid needs nx >= 3");
    if (nt < 1) throw std::invalid_argument("grid needs nt >= 1");
  }
  double dx() const { return (x_max - x_min) / (nx - 1); }
  double x(int i) const { return i + 1 == nx ? x_max : x_min + i * dx(); }
};

struct HjbSolution {
  std::vector<double> times;  // nt + 1
  std::vector<double> states;  // nx
  Eigen::MatrixXd value;       // (nt + 1) × nx, row n at times[n]
  Eigen::MatrixXi policy;      // nt × nx, indices into the control set
  int requested_nt = 0;
  /// true when nt was raised to satisfy the CFL bound
  bool nt_raised = false;

  int nt() const { return static_cast<int>(times.size()) - 1; }
  int nx() const { return static_cast<int>(states.size()); }

  /// Linear interpolation of V(times[n], ·) at x (clamped to the grid).
  double value_at(int n, double x) const {
    const double dx = (states.back() - states.front()) / (nx() - 1);
    const double s = std::clamp((x - states.front()) / dx, 0.0, static_cast<double>(nx() - 1));
    const int i = std::min(static_cast<int>(s), nx() - 2);
    const double w = s - i;
    return (1.0 - w) * value(n, i) + w * value(n, i + 1);
  }
};

class CflViolation : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

struct SolveOptions {
  /// raise nt until the CFL bound holds instead of failing
  bool auto_raise_nt = true;
};

struct HamiltonianValue {
  double value;
  std::size_t control;
};

inline double risk_drift_factor(double beta) {
  return std::sqrt(2.0 * beta / std::numbers::pi);
}

/// sup over u of −c − g·μ − ½A·σ² − √(2β/π)|g·σ|, smallest index on ties.
inline HamiltonianValue hamiltonian(double t, double x, double g, double A, const HjbProblem& problem) {
  problem.validate();
  const double kappa = risk_drift_factor(problem.rate(t, x));
  HamiltonianValue best{-std::numeric_limits<double>::infinity(), 0};
  for (std::size_t k = 0; k < problem.controls.size(); ++k) {
    const double u = problem.controls[k];
    const double s = problem.volatility(t, x, u);
    const double v = -problem.cost(t, x, u) - g * problem.drift(t, x, u) - 0.5 * A * s * s - kappa * std::abs(g * s);
    if (v > best.value) best = {v, k};
  }
  return best;
}

namespace detail {

inline double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

// Largest Δt allowed by Δt ≤ Δx²/(max σ² + Δx·max|μ̃|) over the nodes of a time grid.
inline double cfl_time_step(const HjbProblem& p, const Grid& grid, int nt) {
  const double dx = grid.dx();
  double max_s2 = 0.0;
  double max_drift = 0.0;
  for (int n = 0; n < nt; ++n) {
    const double t = p.horizon * n / nt;
    for (int i = 0; i < grid.nx; ++i) {
      const double x = grid.x(i);
      const double kappa = risk_drift_factor(std::clamp(p.rate(t, x), 0.0, 1.0));
      for (double u : p.controls) {
        const double s = p.volatility(t, x, u);
        const double m = p.drift(t, x, u);
        max_s2 = std::max(max_s2, s * s);
        max_drift = std::max(max_drift, std::abs(m) + kappa * std::abs(s));
      }
    }
  }
  const double denom = max_s2 + dx * max_drift;
  return denom > 0.0 ? dx * dx / denom : std::numeric_limits<double>::infinity();
}

inline int cfl_steps(const HjbProblem& p, const Grid& grid, SolveOptions options, bool& raised) {
  int nt = grid.nt;
  raised = false;
  for (int attempt = 0; attempt < 50; ++attempt) {
    const double limit = cfl_time_step(p, grid, nt);
    const double dt = p.horizon / nt;
    if (dt <= limit * (1.0 + 1e-12)) return nt;
    if (!options.auto_raise_nt) {
      throw CflViolation("time step " + std::to_string(dt) + " exceeds the CFL bound " + std::to_string(limit) +
                         "; increase nt to at least " + std::to_string(static_cast<long long>(std::ceil(p.horizon / limit))));
    }
    const double needed = std::ceil(p.horizon / limit);
    if (needed > 1e8) throw CflViolation("CFL bound requires more than 1e8 time steps");
    nt = std::max(nt + 1, static_cast<int>(needed));
    raised = true;
  }
  throw CflViolation("could not satisfy the CFL bound");
}

inline HjbSolution prepare_solution(const HjbProblem& p, const Grid& grid, int nt, bool raised) {
  HjbSolution sol;
  sol.requested_nt = grid.nt;
  sol.nt_raised = raised;
  sol.times.resize(static_cast<std::size_t>(nt) + 1);
  for (int n = 0; n <= nt; ++n) sol.times[n] = n == nt ? p.horizon : p.horizon * n / nt;
  sol.states.resize(static_cast<std::size_t>(grid.nx));
  for (int i = 0; i < grid.nx; ++i) sol.states[i] = grid.x(i);
  sol.value.resize(nt + 1, grid.nx);
  sol.policy.resize(nt, grid.nx);
  for (int i = 0; i < grid.nx; ++i) {
    const double v = p.terminal(sol.states[i]);
    if (!std::isfinite(v)) {
      throw std::invalid_argument("terminal value is not finite at x = " + std::to_string(sol.states[i]));
    }
    sol.value(nt, i) = v;
  }
  return sol;
}

// First and second difference quotients at node i of a layer; one-sided
// second-order stencils on the two boundary columns.
struct Differences {
  double central;
  double forward;
  double backward;
  double second;
  bool boundary;
};

inline Differences differences(const double* v, int i, int nx, double dx) {
  const double dx2 = dx * dx;
  if (i == 0) {
    const double g = (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * dx);
    const double a = nx >= 4 ? (2.0 * v[0] - 5.0 * v[1] + 4.0 * v[2] - v[3]) / dx2 : (v[0] - 2.0 * v[1] + v[2]) / dx2;
    return {g, g, g, a, true};
  }
  if (i == nx - 1) {
    const double g = (3.0 * v[i] - 4.0 * v[i - 1] + v[i - 2]) / (2.0 * dx);
    const double a = nx >= 4 ? (2.0 * v[i] - 5.0 * v[i - 1] + 4.0 * v[i - 2] - v[i - 3]) / dx2
                             : (v[i] - 2.0 * v[i - 1] + v[i - 2]) / dx2;
    return {g, g, g, a, true};
  }
  return {(v[i + 1] - v[i - 1]) / (2.0 * dx), (v[i + 1] - v[i]) / dx, (v[i] - v[i - 1]) / dx,
          (v[i + 1] - 2.0 * v[i] + v[i - 1]) / dx2, false};
}

inline void check_layer(const HjbSolution& sol, int n) {
  if (!sol.value.row(n).allFinite()) {
    throw NumericalError("non-finite value encountered in time layer " + std::to_string(n));
  }
}

}  // namespace detail

/// Backward explicit sweep of 0 = ∂V/∂t + min_u {c + μ̃·∂V/∂x + ½σ²·∂²V/∂x²},
/// μ̃ = μ + √(2β/π)·σ·sign(σ·∂V/∂x), from V(T, ·) = Ψ.
inline HjbSolution solve(const HjbProblem& problem, const Grid& grid, SolveOptions options = {}) {
  problem.validate();
  grid.validate();
  bool raised = false;
  const int nt = detail::cfl_steps(problem, grid, options, raised);
  HjbSolution sol = detail::prepare_solution(problem, grid, nt, raised);
  const int nx = grid.nx;
  const double dx = grid.dx();
  std::vector<double> next(static_cast<std::size_t>(nx));

  for (int n = nt - 1; n >= 0; --n) {
    const double t = sol.times[n];
    const double dt = sol.times[n + 1] - t;
    for (int i = 0; i < nx; ++i) next[i] = sol.value(n + 1, i);
    for (int i = 0; i < nx; ++i) {
      const double x = sol.states[i];
      const double beta = problem.rate(t, x);
      if (!(beta >= 0.0 && beta <= 1.0)) {
        throw std::invalid_argument("risk rate outside [0, 1] at t = " + std::to_string(t) + ", x = " +
                                    std::to_string(x));
      }
      const double kappa = risk_drift_factor(beta);
      const detail::Differences d = detail::differences(next.data(), i, nx, dx);
      double best = std::numeric_limits<double>::infinity();
      int best_k = 0;
      for (std::size_t k = 0; k < problem.controls.size(); ++k) {
        const double u = problem.controls[k];
        const double mu = problem.drift(t, x, u);
        const double s = problem.volatility(t, x, u);
        const double c = problem.cost(t, x, u);
        const double mu_eff = kappa > 0.0 ? mu + kappa * s * detail::sign(s * d.central) : mu;
        const double g = d.boundary ? d.central : (mu_eff >= 0.0 ? d.forward : d.backward);
        const double candidate = c + mu_eff * g + 0.5 * s * s * d.second;
        if (candidate < best) {
          best = candidate;
          best_k = static_cast<int>(k);
        }
      }
      sol.value(n, i) = next[i] + dt * best;
      sol.policy(n, i) = best_k;
    }
    detail::check_layer(sol, n);
  }
  return sol;
}

/// Classical risk-neutral sweep (the risk rate is ignored).
inline HjbSolution solve_risk_neutral(const HjbProblem& problem, const Grid& grid, SolveOptions options = {}) {
  problem.validate();
  grid.validate();
  HjbProblem neutral = problem;
  neutral.rate = constant_rate(0.0);
  bool raised = false;
  const int nt = detail::cfl_steps(neutral, grid, options, raised);
  HjbSolution sol = detail::prepare_solution(neutral, grid, nt, raised);
  const int nx = grid.nx;
  const double dx = grid.dx();
  std::vector<double> next(static_cast<std::size_t>(nx));

  for (int n = nt - 1; n >= 0; --n) {
    const double t = sol.times[n];
    const double dt = sol.times[n + 1] - t;
    for (int i = 0; i < nx; ++i) next[i] = sol.value(n + 1, i);
    for (int i = 0; i < nx; ++i) {
      const double x = sol.states[i];
      const detail::Differences d = detail::differences(next.data(), i, nx, dx);
      double best = std::numeric_limits<double>::infinity();
      int best_k = 0;
      for (std::size_t k = 0; k < problem.controls.size(); ++k) {
        const double u = problem.controls[k];
        const double mu = problem.drift(t, x, u);
        const double s = problem.volatility(t, x, u);
        const double g = d.boundary ? d.central : (mu >= 0.0 ? d.forward : d.backward);
        const double candidate = problem.cost(t, x, u) + mu * g + 0.5 * s * s * d.second;
        if (candidate < best) {
          best = candidate;
          best_k = static_cast<int>(k);
        }
      }
      sol.value(n, i) = next[i] + dt * best;
      sol.policy(n, i) = best_k;
    }
    detail::check_layer(sol, n);
  }
  return sol;
}

struct SimulationSummary {
  double mean = 0.0;
  double standard_error = 0.0;
  /// empirical ẽ at the rescaled level β(0, x₀)·T (clamped to [0, 1])
  double expectile = 0.0;
  double beta_dt = 0.0;
  std::size_t paths = 0;
  /// paths that left the grid at least once and were clamped back
  std::size_t clamped_paths = 0;
};

/// Euler–Maruyama paths of dX = μ dt + σ dW under the stored policy
/// (nearest-node lookup), accumulating ∫c dt + Ψ(X_T).
inline SimulationSummary simulate_policy(const HjbProblem& problem, const HjbSolution& solution, double x0,
                                         std::size_t n_paths, std::uint64_t seed) {
  problem.validate();
  const double x_min = solution.states.front();
  const double x_max = solution.states.back();
  if (!(x0 >= x_min && x0 <= x_max)) throw std::invalid_argument("x0 lies outside the solution grid");
  if (n_paths < 1) throw std::invalid_argument("at least one path is required");
  const int nx = solution.nx();
  const int nt = solution.nt();
  const double dx = (x_max - x_min) / (nx - 1);

  std::vector<double> costs(n_paths);
  SimulationSummary summary;
  summary.paths = n_paths;
  for (std::size_t p = 0; p < n_paths; ++p) {
    const std::uint64_t index = p;
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
    std::mt19937_64 rng(seq);
    std::normal_distribution<double> normal(0.0, 1.0);
    double x = x0;
    double total = 0.0;
    bool clamped = false;
    for (int n = 0; n < nt; ++n) {
      const double t = solution.times[n];
      const double dt = solution.times[n + 1] - t;
      const int node = std::clamp(static_cast<int>(std::lround((x - x_min) / dx)), 0, nx - 1);
      const double u = problem.controls[static_cast<std::size_t>(solution.policy(n, node))];
      total += problem.cost(t, x, u) * dt;
      x += problem.drift(t, x, u) * dt + problem.volatility(t, x, u) * std::sqrt(dt) * normal(rng);
      if (x < x_min || x > x_max) {
        x = std::clamp(x, x_min, x_max);
        clamped = true;
      }
    }
    total += problem.terminal(x);
    costs[p] = total;
    if (clamped) ++summary.clamped_paths;
  }

  long double sum = 0.0L;
  for (double c : costs) sum += c;
  summary.mean = static_cast<double>(sum / n_paths);
  long double ss = 0.0L;
  for (double c : costs) ss += (c - summary.mean) * (c - summary.mean);
  summary.standard_error =
      n_paths > 1 ? std::sqrt(static_cast<double>(ss / (n_paths - 1)) / static_cast<double>(n_paths)) : 0.0;
  summary.beta_dt = std::clamp(problem.rate(0.0, x0) * problem.horizon, 0.0, 1.0);
  summary.expectile = rescaled_expectile(EmpiricalDistribution(std::move(costs)), RescaledLevel(summary.beta_dt));
  return summary;
}

}  // namespace expectiles
