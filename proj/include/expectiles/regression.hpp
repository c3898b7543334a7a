#pragma once

// Kernel expectile regression: the regularised asymmetric least-squares
// problem in a reproducing kernel Hilbert space, solved by the active-set
// Newton iteration.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "expectiles/core.hpp"
#include "expectiles/errors.hpp"

namespace expectiles {

class KernelSpec {
 public:
  enum class Family { gaussian, laplace, polynomial };

  /// exp(−‖x − y‖²/(2h²))
  static KernelSpec gaussian(double bandwidth) {
    if (!(bandwidth > 0.0) || !std::isfinite(bandwidth)) throw std::invalid_argument("bandwidth must be positive");
    return KernelSpec(Family::gaussian, bandwidth, 0);
  }

  /// exp(−‖x − y‖/s)
  static KernelSpec laplace(double scale) {
    if (!(scale > 0.0) || !std::isfinite(scale)) throw std::invalid_argument("scale must be positive");
    return KernelSpec(Family::laplace, scale, 0);
  }

  /// (x·y + c)^d
  static KernelSpec polynomial(int degree, double offset) {
    if (degree < 1) throw std::invalid_argument("polynomial degree must be a positive integer");
    if (!(offset >= 0.0) || !std::isfinite(offset)) throw std::invalid_argument("polynomial offset must be >= 0");
    return KernelSpec(Family::polynomial, offset, degree);
  }

  Family family() const noexcept { return family_; }
  double bandwidth() const noexcept { return parameter_; }
  double scale() const noexcept { return parameter_; }
  double offset() const noexcept { return parameter_; }
  int degree() const noexcept { return degree_; }

  std::string name() const {
    switch (family_) {
      case Family::gaussian: return "gaussian";
      case Family::laplace: return "laplace";
      case Family::polynomial: return "polynomial";
    }
    return {};
  }

  template <class A, class B>
  double operator()(const Eigen::MatrixBase<A>& x, const Eigen::MatrixBase<B>& y) const {
    switch (family_) {
      case Family::gaussian: return std::exp(-(x - y).squaredNorm() / (2.0 * parameter_ * parameter_));
      case Family::laplace: return std::exp(-(x - y).norm() / parameter_);
      case Family::polynomial: return std::pow(x.dot(y) + parameter_, degree_);
    }
    return 0.0;
  }

  /// Matrix k(Xᵢ, Yⱼ) for points stored row-wise.
  Eigen::MatrixXd gram(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y) const {
    Eigen::MatrixXd G(X.rows(), Y.rows());
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
      for (Eigen::Index j = 0; j < Y.rows(); ++j) G(i, j) = (*this)(X.row(i), Y.row(j));
    }
    return G;
  }

 private:
  KernelSpec(Family f, double p, int d) : family_(f), parameter_(p), degree_(d) {}

  Family family_;
  double parameter_;
  int degree_;
};

/// Observations (Xᵢ, fᵢ): inputs row-wise (n × d), targets of length n.
struct RegressionDataset {
  Eigen::MatrixXd inputs;
  Eigen::VectorXd targets;

  RegressionDataset(Eigen::MatrixXd x, Eigen::VectorXd f) : inputs(std::move(x)), targets(std::move(f)) {
    if (inputs.rows() < 1 || inputs.cols() < 1) throw std::invalid_argument("dataset needs at least one point");
    if (inputs.rows() != targets.size()) throw std::invalid_argument("inputs and targets differ in length");
    if (!inputs.allFinite() || !targets.allFinite()) throw std::invalid_argument("dataset has non-finite entries");
  }

  Eigen::Index size() const noexcept { return targets.size(); }
  Eigen::Index dimension() const noexcept { return inputs.cols(); }
};

/// Median of ‖Xᵢ − Xⱼ‖ over pairs i < j; 1 when every pair coincides.
inline double median_pairwise_distance(const Eigen::MatrixXd& X) {
  std::vector<double> d;
  d.reserve(static_cast<std::size_t>(X.rows() * (X.rows() - 1) / 2));
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    for (Eigen::Index j = i + 1; j < X.rows(); ++j) d.push_back((X.row(i) - X.row(j)).norm());
  }
  if (d.empty()) return 1.0;
  const auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
  std::nth_element(d.begin(), mid, d.end());
  double m = *mid;
  if (d.size() % 2 == 0) m = 0.5 * (m + *std::max_element(d.begin(), mid));
  return m > 0.0 ? m : 1.0;
}

/// ê(x) = (1/ñ)Σⱼ wⱼ k(x, x̃ⱼ)
struct KernelModel {
  KernelSpec kernel;
  Eigen::MatrixXd support;
  Eigen::VectorXd weights;
  RiskLevel level;
  double lambda;

  KernelModel(KernelSpec k, Eigen::MatrixXd s, Eigen::VectorXd w, RiskLevel a, double l)
      : kernel(k), support(std::move(s)), weights(std::move(w)), level(a), lambda(l) {
    if (support.rows() != weights.size()) throw std::invalid_argument("support points and weights differ in length");
    if (support.rows() < 1) throw std::invalid_argument("model needs at least one support point");
    if (!(lambda > 0.0)) throw std::invalid_argument("lambda must be positive");
  }

  Eigen::Index dimension() const noexcept { return support.cols(); }

  template <class A>
  double predict(const Eigen::MatrixBase<A>& x) const {
    if (x.size() != support.cols()) {
      throw std::invalid_argument("point has dimension " + std::to_string(x.size()) + ", model expects " +
                                  std::to_string(support.cols()));
    }
    double s = 0.0;
    for (Eigen::Index j = 0; j < support.rows(); ++j) s += weights(j) * kernel(x.transpose(), support.row(j));
    return s / static_cast<double>(support.rows());
  }

  double predict(const std::vector<double>& x) const {
    return predict(Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size())));
  }

  /// Predictions at every row of X.
  Eigen::VectorXd predict_all(const Eigen::MatrixXd& X) const {
    if (X.cols() != support.cols()) throw std::invalid_argument("input dimension does not match the model");
    return kernel.gram(X, support) * weights / static_cast<double>(support.rows());
  }

  /// ‖ê‖²_k = wᵀK̃w/ñ²
  double rkhs_norm_squared() const {
    const double m = static_cast<double>(support.rows());
    return weights.dot(kernel.gram(support, support) * weights) / (m * m);
  }
};

/// (1/n)Σᵢ ℓ_α(fᵢ − ê(Xᵢ)) + λ‖ê‖²_k
inline double objective(const KernelModel& model, const RegressionDataset& data) {
  const Eigen::VectorXd fitted = model.predict_all(data.inputs);
  double loss = 0.0;
  for (Eigen::Index i = 0; i < data.size(); ++i) loss += expectile_loss(data.targets(i) - fitted(i), model.level);
  return loss / static_cast<double>(data.size()) + model.lambda * model.rkhs_norm_squared();
}

/// Case weights: α where the target lies on or above the fit, 1 − α below.
inline Eigen::VectorXd case_weights(const Eigen::VectorXd& targets, const Eigen::VectorXd& fitted, RiskLevel level) {
  Eigen::VectorXd a(targets.size());
  for (Eigen::Index i = 0; i < targets.size(); ++i) {
    a(i) = targets(i) >= fitted(i) ? level.alpha() : 1.0 - level.alpha();
  }
  return a;
}

struct FitReport {
  int iterations = 0;
  /// max-norm residual of the first-order system at the returned weights
  double residual = 0.0;
  bool active_set_stable = false;
  double objective = 0.0;
  bool converged = false;
  int damped_steps = 0;
  /// diagonal jitter that had to be added to K̃ (0 when none)
  double jitter = 0.0;
};

struct FitResult {
  KernelModel model;
  FitReport report;
};

class FitNotConverged : public NumericalError {
 public:
  FitNotConverged(const std::string& what, FitResult r) : NumericalError(what), result(std::move(r)) {}
  FitResult result;
};

struct FitOptions {
  int max_iterations = 500;
  double step_tolerance = 1e-10;
  int cycle_window = 10;
};

namespace detail {

struct NewtonSystem {
  Eigen::MatrixXd K;        // n × ñ
  Eigen::MatrixXd K_tilde;  // ñ × ñ
  double n;
  double m;
  double lambda;

  Eigen::MatrixXd matrix(const Eigen::VectorXd& a) const {
    return (lambda / (m * m)) * K_tilde + (K.transpose() * a.asDiagonal() * K) / (n * m * m);
  }
  Eigen::VectorXd rhs(const Eigen::VectorXd& a, const Eigen::VectorXd& f) const {
    return K.transpose() * a.cwiseProduct(f) / (n * m);
  }
};

}  // namespace detail

/// Max-norm residual of (λ/ñ²·K̃ + 1/(nñ²)·KᵀAK)w − 1/(nñ)·KᵀAf with A = A(w).
inline double fixed_point_residual(const KernelModel& model, const RegressionDataset& data) {
  const detail::NewtonSystem sys{model.kernel.gram(data.inputs, model.support),
                                 model.kernel.gram(model.support, model.support),
                                 static_cast<double>(data.size()), static_cast<double>(model.support.rows()),
                                 model.lambda};
  const Eigen::VectorXd fitted = sys.K * model.weights / sys.m;
  const Eigen::VectorXd a = case_weights(data.targets, fitted, model.level);
  return (sys.matrix(a) * model.weights - sys.rhs(a, data.targets)).lpNorm<Eigen::Infinity>();
}

/// Active-set Newton iteration for the regularised expectile problem,
/// starting from w = 0. Support points default to the data inputs.
inline FitResult fit(const RegressionDataset& data, const KernelSpec& kernel, RiskLevel level, double lambda,
                     const Eigen::MatrixXd* support_points = nullptr, const FitOptions& options = {}) {
  if (!(lambda > 0.0) || !std::isfinite(lambda)) throw std::invalid_argument("lambda must be positive");
  const Eigen::MatrixXd support = support_points ? *support_points : data.inputs;
  if (support.rows() < 1) throw std::invalid_argument("at least one support point is required");
  if (support.cols() != data.dimension()) throw std::invalid_argument("support points have the wrong dimension");

  detail::NewtonSystem sys{kernel.gram(data.inputs, support), kernel.gram(support, support),
                           static_cast<double>(data.size()), static_cast<double>(support.rows()), lambda};
  const Eigen::VectorXd& f = data.targets;
  const Eigen::Index m = support.rows();

  // With the inputs as support points (K = K̃, ñ = n) the Newton system factors as
  // K̃·[(λI + AK̃/n)w − Af]/n² = 0, so (K̃ + nλA⁻¹)w = n·f gives a solution and is
  // positive definite even when K̃ is numerically singular.
  const bool square = !support_points || (support.rows() == data.inputs.rows() && support == data.inputs);

  FitReport report;
  auto solve = [&](const Eigen::VectorXd& a) -> Eigen::VectorXd {
    if (square) {
      Eigen::MatrixXd reduced = sys.K_tilde;
      reduced.diagonal() += (sys.n * lambda) * a.cwiseInverse();
      Eigen::LLT<Eigen::MatrixXd> llt(reduced);
      if (llt.info() == Eigen::Success) {
        Eigen::VectorXd w = llt.solve(sys.n * f);
        if (w.allFinite()) return w;
      }
    }
    const Eigen::VectorXd rhs = sys.rhs(a, f);
    Eigen::LLT<Eigen::MatrixXd> llt(sys.matrix(a));
    if (llt.info() != Eigen::Success && report.jitter == 0.0) {
      report.jitter = 1e-12 * sys.K_tilde.trace() / sys.m;
      sys.K_tilde.diagonal().array() += report.jitter;
      llt.compute(sys.matrix(a));
    }
    Eigen::VectorXd w;
    if (llt.info() == Eigen::Success) {
      w = llt.solve(rhs);
    } else {
      // minimum-norm solution of the semidefinite system
      const Eigen::MatrixXd M = sys.matrix(a);
      w = Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd>(M).solve(rhs);
      if ((M * w - rhs).lpNorm<Eigen::Infinity>() > 1e-10 * std::max(1.0, rhs.lpNorm<Eigen::Infinity>())) {
        w.resize(0);
      }
    }
    if (w.size() == 0 || !w.allFinite()) throw NumericalError("Newton matrix is singular or indefinite; increase lambda");
    return w;
  };

  Eigen::VectorXd w = Eigen::VectorXd::Zero(m);
  Eigen::VectorXd previous_a;
  std::deque<Eigen::VectorXd> history;
  Eigen::VectorXd a;
  for (int it = 1; it <= options.max_iterations; ++it) {
    a = case_weights(f, sys.K * w / sys.m, level);
    Eigen::VectorXd step = solve(a) - w;

    bool cycling = false;
    for (std::size_t h = 0; h + 1 < history.size(); ++h) cycling = cycling || history[h] == a;
    if (cycling && !(previous_a.size() && previous_a == a)) {
      step *= 0.5;
      ++report.damped_steps;
    }
    w += step;
    report.iterations = it;

    const bool same_set = previous_a.size() == a.size() && previous_a == a;
    history.push_back(a);
    if (static_cast<int>(history.size()) > options.cycle_window) history.pop_front();
    previous_a = a;
    const double scale = std::max(1.0, w.lpNorm<Eigen::Infinity>());
    if (same_set && step.lpNorm<Eigen::Infinity>() < options.step_tolerance * scale) {
      report.converged = true;
      break;
    }
  }

  KernelModel model(kernel, support, w, level, lambda);
  const Eigen::VectorXd final_a = case_weights(f, sys.K * w / sys.m, level);
  report.active_set_stable = final_a == a;
  report.residual = (sys.matrix(final_a) * w - sys.rhs(final_a, f)).lpNorm<Eigen::Infinity>();
  report.objective = objective(model, data);
  FitResult result{std::move(model), report};
  if (!report.converged) {
    throw FitNotConverged("expectile regression did not converge in " + std::to_string(options.max_iterations) +
                              " iterations",
                          std::move(result));
  }
  return result;
}

struct CrossValidationResult {
  std::vector<double> lambdas;
  /// mean out-of-fold expectile score per lambda
  std::vector<double> scores;
  double best_lambda = 0.0;
};

/// k-fold cross-validation over a list of ridge parameters; fold of point i is i mod k.
inline CrossValidationResult cross_validate(const RegressionDataset& data, const KernelSpec& kernel, RiskLevel level,
                                            const std::vector<double>& lambdas, int folds) {
  if (lambdas.empty()) throw std::invalid_argument("no lambda values to cross-validate");
  if (folds < 2 || folds > data.size()) throw std::invalid_argument("fold count must lie in [2, n]");
  CrossValidationResult cv;
  cv.lambdas = lambdas;
  double best = std::numeric_limits<double>::infinity();
  for (double lambda : lambdas) {
    double total = 0.0;
    for (int k = 0; k < folds; ++k) {
      std::vector<Eigen::Index> train;
      std::vector<Eigen::Index> test;
      for (Eigen::Index i = 0; i < data.size(); ++i) (i % folds == k ? test : train).push_back(i);
      const RegressionDataset fold(data.inputs(train, Eigen::all), data.targets(train));
      const KernelModel model = fit(fold, kernel, level, lambda).model;
      for (Eigen::Index i : test) {
        total += expectile_loss(data.targets(i) - model.predict(data.inputs.row(i).transpose()), level);
      }
    }
    const double score = total / static_cast<double>(data.size());
    cv.scores.push_back(score);
    if (score < best) {
      best = score;
      cv.best_lambda = lambda;
    }
  }
  return cv;
}

}  // namespace expectiles
