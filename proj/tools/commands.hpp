#pragma once

// Subcommand implementations behind the expectile-cli binary. Each command
// throws std::invalid_argument for bad input and expectiles::NumericalError
// for failures of a numerical procedure; main() maps these to exit codes.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "expectiles/expectiles.hpp"

namespace expectiles::cli {

enum class Format { csv, json };

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitNumerical = 2;

inline Format parse_format(const std::string& s) {
  if (s == "csv") return Format::csv;
  if (s == "json") return Format::json;
  throw std::invalid_argument("unknown format '" + s + "' (expected csv or json)");
}

inline csv::Table read_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open '" + path + "'");
  try {
    return csv::read(in);
  } catch (const csv::ParseError& e) {
    throw std::invalid_argument(path + ", " + e.what());
  }
}

inline io::json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open '" + path + "'");
  try {
    return io::json::parse(in);
  } catch (const io::json::parse_error& e) {
    throw std::invalid_argument("invalid JSON in " + path + ": " + e.what());
  }
}

/// Runs fn on the file at path, or on stdout when path is empty or "-".
template <class Fn>
void write_to(const std::string& path, Fn&& fn) {
  if (path.empty() || path == "-") {
    fn(std::cout);
    std::cout.flush();
    return;
  }
  std::ofstream out(path);
  if (!out) throw std::invalid_argument("cannot write '" + path + "'");
  fn(out);
  if (!out) throw std::runtime_error("failed writing '" + path + "'");
}

inline io::json finite_or_null(double v) { return std::isfinite(v) ? io::json(v) : io::json(nullptr); }

// Key/value report written as a two-column CSV or a flat JSON object.
struct Report {
  std::vector<std::pair<std::string, double>> entries;

  void add(const std::string& key, double value) { entries.emplace_back(key, value); }
  void add(const std::string& key, bool value) { entries.emplace_back(key, value ? 1.0 : 0.0); }

  void write(std::ostream& out, Format format) const {
    if (format == Format::json) {
      io::json j = io::json::object();
      for (const auto& [k, v] : entries) j[k] = finite_or_null(v);
      out << j.dump(2) << '\n';
      return;
    }
    csv::write_row(out, std::vector<std::string>{"quantity", "value"});
    for (const auto& [k, v] : entries) csv::write_row(out, std::vector<std::string>{k, csv::format(v)});
  }
};

// ---------------------------------------------------------------------------

struct ExpectileOptions {
  std::string input;
  double alpha = 0.5;
  std::string column;
  std::string weights_column;
  std::string output;
  Format format = Format::csv;
};

inline Report expectile_report(const EmpiricalDistribution& dist, RiskLevel level) {
  Report r;
  const double a = level.alpha();
  r.add("alpha", a);
  r.add("atoms", static_cast<double>(dist.size()));
  r.add("mean", dist.mean());
  r.add("expectile", expectile(dist, level));
  r.add("value_at_risk", value_at_risk(dist, level));
  r.add("average_value_at_risk", average_value_at_risk(dist, level));
  r.add("enveloping_spectral_risk",
        a > 0.5 ? spectral_risk(dist, enveloping_spectrum(level)) : std::numeric_limits<double>::quiet_NaN());
  const ComparisonReport bounds = check_comparison_bounds(dist, level);
  auto add_bound = [&](const std::string& name, const BoundCheck& b) {
    r.add(name + "_applicable", b.applicable);
    r.add(name + "_holds", b.applicable ? b.holds : true);
    r.add(name + "_slack", b.applicable ? b.slack : std::numeric_limits<double>::quiet_NaN());
  };
  add_bound("expectile_below_avar", bounds.expectile_below_avar);
  add_bound("avar_sandwich", bounds.avar_sandwich);
  add_bound("avar_below_scaled_expectile", bounds.avar_below_scaled_expectile);
  add_bound("expectile_below_scaled_mean", bounds.expectile_below_scaled_mean);
  return r;
}

inline int run_expectile(const ExpectileOptions& o) {
  const RiskLevel level(o.alpha);
  const csv::Table table = read_table(o.input);
  if (table.rows() == 0) throw std::invalid_argument(o.input + " has no data rows");
  std::string value_column = o.column;
  if (value_column.empty()) {
    for (const auto& h : table.header) {
      if (h != o.weights_column) {
        value_column = h;
        break;
      }
    }
    if (value_column.empty()) throw std::invalid_argument("no value column in " + o.input);
  }
  const auto& values = table.column(value_column);
  const EmpiricalDistribution dist =
      o.weights_column.empty() ? EmpiricalDistribution(values)
                               : EmpiricalDistribution(values, table.column(o.weights_column));
  const Report r = expectile_report(dist, level);
  write_to(o.output, [&](std::ostream& out) { r.write(out, o.format); });
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct RegressOptions {
  std::string input;
  std::string target;
  double alpha = 0.5;
  std::string kernel = "gaussian";
  std::optional<double> bandwidth;
  double scale = 1.0;
  int degree = 2;
  double offset = 1.0;
  std::optional<double> lambda;
  std::vector<double> lambda_grid;
  int cv_folds = 5;
  std::string support;
  std::string model_out;
  std::string fitted_out;
  std::string output;
  Format format = Format::csv;
  int max_iterations = 500;
};

inline KernelSpec make_kernel(const RegressOptions& o, const Eigen::MatrixXd& inputs) {
  if (o.kernel == "gaussian") return KernelSpec::gaussian(o.bandwidth ? *o.bandwidth : median_pairwise_distance(inputs));
  if (o.kernel == "laplace") return KernelSpec::laplace(o.scale);
  if (o.kernel == "polynomial") return KernelSpec::polynomial(o.degree, o.offset);
  throw std::invalid_argument("unknown kernel '" + o.kernel + "' (expected gaussian, laplace or polynomial)");
}

inline int run_regress(const RegressOptions& o) {
  const RiskLevel level(o.alpha);
  const csv::Table table = read_table(o.input);
  if (table.rows() == 0) throw std::invalid_argument(o.input + " has no data rows");
  if (table.header.size() < 2) throw std::invalid_argument("need at least one feature column and a target column");
  const std::string target = o.target.empty() ? table.header.back() : o.target;
  const std::size_t target_index = table.index(target);
  std::vector<std::size_t> features;
  for (std::size_t c = 0; c < table.header.size(); ++c) {
    if (c != target_index) features.push_back(c);
  }
  const auto n = static_cast<Eigen::Index>(table.rows());
  Eigen::MatrixXd X(n, static_cast<Eigen::Index>(features.size()));
  for (std::size_t k = 0; k < features.size(); ++k) {
    for (Eigen::Index i = 0; i < n; ++i) X(i, static_cast<Eigen::Index>(k)) = table.columns[features[k]][i];
  }
  const auto& f = table.columns[target_index];
  const RegressionDataset data(X, Eigen::Map<const Eigen::VectorXd>(f.data(), n));

  std::optional<Eigen::MatrixXd> support;
  if (!o.support.empty()) {
    const csv::Table st = read_table(o.support);
    if (st.rows() == 0) throw std::invalid_argument(o.support + " has no support points");
    Eigen::MatrixXd S(static_cast<Eigen::Index>(st.rows()), static_cast<Eigen::Index>(features.size()));
    for (std::size_t k = 0; k < features.size(); ++k) {
      const auto& col = st.column(table.header[features[k]]);
      for (std::size_t i = 0; i < st.rows(); ++i) S(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = col[i];
    }
    support = std::move(S);
  }

  const KernelSpec kernel = make_kernel(o, X);
  Report report;
  double lambda = 0.0;
  if (!o.lambda_grid.empty()) {
    const CrossValidationResult cv = cross_validate(data, kernel, level, o.lambda_grid, o.cv_folds);
    for (std::size_t i = 0; i < cv.lambdas.size(); ++i) report.add("cv_score_" + csv::format(cv.lambdas[i]), cv.scores[i]);
    lambda = cv.best_lambda;
  } else if (o.lambda) {
    lambda = *o.lambda;
  } else {
    throw std::invalid_argument("either --lambda or --lambda-grid is required");
  }

  FitOptions fit_options;
  fit_options.max_iterations = o.max_iterations;
  std::optional<FitResult> result;
  bool converged = true;
  std::string failure;
  try {
    result.emplace(fit(data, kernel, level, lambda, support ? &*support : nullptr, fit_options));
  } catch (const FitNotConverged& e) {
    result.emplace(e.result);
    converged = false;
    failure = e.what();
  }
  const KernelModel& model = result->model;
  const FitReport& fr = result->report;

  if (!o.model_out.empty()) {
    write_to(o.model_out, [&](std::ostream& out) { out << io::to_json(model).dump(2) << '\n'; });
  }
  if (!o.fitted_out.empty()) {
    const Eigen::VectorXd fitted = model.predict_all(X);
    write_to(o.fitted_out, [&](std::ostream& out) {
      std::vector<std::string> header;
      for (std::size_t c : features) header.push_back(table.header[c]);
      header.insert(header.end(), {target, "fitted", "residual_sign"});
      csv::write_row(out, header);
      for (Eigen::Index i = 0; i < n; ++i) {
        std::vector<double> row;
        for (Eigen::Index k = 0; k < X.cols(); ++k) row.push_back(X(i, k));
        row.push_back(f[static_cast<std::size_t>(i)]);
        row.push_back(fitted(i));
        row.push_back(f[static_cast<std::size_t>(i)] >= fitted(i) ? 1.0 : -1.0);
        csv::write_row(out, row);
      }
    });
  }

  report.add("alpha", level.alpha());
  report.add("lambda", lambda);
  if (kernel.family() == KernelSpec::Family::gaussian) report.add("bandwidth", kernel.bandwidth());
  report.add("iterations", static_cast<double>(fr.iterations));
  report.add("residual", fr.residual);
  report.add("objective", fr.objective);
  report.add("active_set_stable", fr.active_set_stable);
  report.add("converged", converged);
  report.add("damped_steps", static_cast<double>(fr.damped_steps));
  report.add("jitter", fr.jitter);
  write_to(o.output, [&](std::ostream& out) { report.write(out, o.format); });
  if (!converged) {
    std::cerr << "error: " << failure << '\n';
    return kExitNumerical;
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct NestedOptions {
  std::string lattice;
  double x0 = 0.0;
  double horizon = 1.0;
  int steps = 64;
  int quad_nodes = 7;
  double beta = 0.0;
  double beta_slope = 0.0;
  bool convergence = false;
  std::vector<int> step_counts{8, 32, 128, 512};
  std::string lattice_out;
  std::string output;
  Format format = Format::csv;
};

inline int run_nested(const NestedOptions& o) {
  const double c = o.beta;
  const double s = o.beta_slope;
  const auto beta_of_t = [c, s](double t) { return c + s * t; };
  const RiskRate rate = [beta_of_t](double t, double) { return beta_of_t(t); };

  if (o.convergence) {
    if (!o.lattice.empty()) throw std::invalid_argument("--convergence uses random-walk lattices; drop --lattice");
    const DriftStudy study = verify_drift_convergence(beta_of_t, o.horizon, o.step_counts, o.quad_nodes, o.x0);
    for (const auto& row : study.rows) {
      if (row.clamped_nodes) {
        std::cerr << "warning: beta*dt clamped to 1 at " << row.clamped_nodes << " nodes (" << row.steps
                  << " steps)\n";
      }
    }
    write_to(o.output, [&](std::ostream& out) {
      if (o.format == Format::json) {
        io::json rows = io::json::array();
        for (const auto& r : study.rows) {
          rows.push_back({{"steps", r.steps}, {"dt", r.dt}, {"value", r.value}, {"reference", r.reference},
                          {"error", r.error}});
        }
        out << io::json{{"rows", rows}, {"nonincreasing", study.nonincreasing}}.dump(2) << '\n';
        return;
      }
      csv::write_row(out, std::vector<std::string>{"steps", "dt", "value", "reference", "error"});
      for (const auto& r : study.rows) {
        csv::write_row(out, std::vector<double>{static_cast<double>(r.steps), r.dt, r.value, r.reference, r.error});
      }
    });
    return kExitOk;
  }

  const LatticeProcess lattice = o.lattice.empty() ? build_random_walk_lattice(o.x0, o.horizon, o.steps, o.quad_nodes)
                                                   : io::lattice_from_json(read_json(o.lattice));
  if (!o.lattice_out.empty()) {
    write_to(o.lattice_out, [&](std::ostream& out) { out << io::to_json(lattice).dump() << '\n'; });
  }
  const NestedResult result = nested_expectile(lattice, rate);
  if (result.clamped_nodes) {
    std::cerr << "warning: beta*dt clamped to 1 at " << result.clamped_nodes << " nodes\n";
  }
  Report r;
  r.add("nested_expectile", result.value);
  r.add("x0", lattice.root_state());
  r.add("steps", static_cast<double>(lattice.steps()));
  r.add("nodes", static_cast<double>(lattice.node_count()));
  r.add("clamped_nodes", static_cast<double>(result.clamped_nodes));
  write_to(o.output, [&](std::ostream& out) { r.write(out, o.format); });
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct HjbOptions {
  std::string problem;
  std::optional<double> x_min;
  std::optional<double> x_max;
  std::optional<int> nx;
  std::optional<int> nt;
  bool strict_cfl = false;
  std::size_t simulate = 0;
  std::optional<double> x0;
  std::uint64_t seed = 0;
  std::string output;
  std::string report;
  Format format = Format::csv;
};

inline int run_hjb(const HjbOptions& o) {
  const io::ProblemDocument doc = io::problem_from_json(read_json(o.problem));
  Grid grid = doc.grid.value_or(Grid{-1.0, 1.0, 101, 1});
  if (o.x_min) grid.x_min = *o.x_min;
  if (o.x_max) grid.x_max = *o.x_max;
  if (o.nx) grid.nx = *o.nx;
  if (o.nt) grid.nt = *o.nt;
  if (!doc.grid && !(o.x_min && o.x_max && o.nx)) {
    throw std::invalid_argument("grid missing: give it in the problem document or via --x-min, --x-max and --nx");
  }
  SolveOptions options;
  options.auto_raise_nt = !o.strict_cfl;
  const HjbSolution sol = solve(doc.problem, grid, options);
  if (sol.nt_raised) {
    std::cerr << "note: nt raised from " << sol.requested_nt << " to " << sol.nt() << " to satisfy the CFL bound\n";
  }

  Report r;
  r.add("nt", static_cast<double>(sol.nt()));
  r.add("nx", static_cast<double>(sol.nx()));
  r.add("nt_raised", sol.nt_raised);
  if (doc.reference) {
    double err = 0.0;
    for (int n = 0; n <= sol.nt(); ++n) {
      for (int i = 0; i < sol.nx(); ++i) {
        err = std::max(err, std::abs(sol.value(n, i) - (*doc.reference)(sol.times[n], sol.states[i])));
      }
    }
    r.add("max_error_vs_reference", err);
  }
  if (o.simulate > 0) {
    const double x0 = o.x0.value_or(0.5 * (grid.x_min + grid.x_max));
    const SimulationSummary s = simulate_policy(doc.problem, sol, x0, o.simulate, o.seed);
    r.add("x0", x0);
    r.add("value_at_x0", sol.value_at(0, x0));
    r.add("mc_paths", static_cast<double>(s.paths));
    r.add("mc_mean", s.mean);
    r.add("mc_standard_error", s.standard_error);
    r.add("mc_beta_dt", s.beta_dt);
    r.add("mc_expectile", s.expectile);
    r.add("mc_clamped_paths", static_cast<double>(s.clamped_paths));
  }

  write_to(o.output, [&](std::ostream& out) {
    if (o.format == Format::json) {
      io::json value = io::json::array();
      io::json policy = io::json::array();
      for (int n = 0; n <= sol.nt(); ++n) {
        std::vector<double> row(static_cast<std::size_t>(sol.nx()));
        for (int i = 0; i < sol.nx(); ++i) row[static_cast<std::size_t>(i)] = sol.value(n, i);
        value.push_back(row);
        if (n == sol.nt()) break;
        std::vector<int> prow(static_cast<std::size_t>(sol.nx()));
        for (int i = 0; i < sol.nx(); ++i) prow[static_cast<std::size_t>(i)] = sol.policy(n, i);
        policy.push_back(prow);
      }
      out << io::json{{"times", sol.times}, {"x", sol.states}, {"value", value}, {"policy", policy}}.dump() << '\n';
      return;
    }
    csv::write_row(out, std::vector<std::string>{"t", "x", "V", "u_index", "u"});
    const double nan = std::numeric_limits<double>::quiet_NaN();
    for (int n = 0; n <= sol.nt(); ++n) {
      for (int i = 0; i < sol.nx(); ++i) {
        const bool terminal = n == sol.nt();
        const int k = terminal ? -1 : sol.policy(n, i);
        csv::write_row(out, std::vector<double>{sol.times[static_cast<std::size_t>(n)],
                                                sol.states[static_cast<std::size_t>(i)], sol.value(n, i),
                                                terminal ? nan : static_cast<double>(k),
                                                terminal ? nan : doc.problem.controls[static_cast<std::size_t>(k)]});
      }
    }
  });

  if (o.report.empty()) {
    for (const auto& [k, v] : r.entries) std::cerr << "# " << k << ": " << csv::format(v) << '\n';
  } else {
    write_to(o.report, [&](std::ostream& out) { r.write(out, o.format); });
  }
  return kExitOk;
}

}  // namespace expectiles::cli
