#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "commands.hpp"

namespace {

using namespace expectiles;
using namespace expectiles::cli;

void add_common(CLI::App* cmd, std::string& output, std::string& format, std::uint64_t& seed) {
  cmd->add_option("-o,--output", output, "Output file (default: stdout)");
  cmd->add_option("--format", format, "Output format")->check(CLI::IsMember({"csv", "json"}));
  cmd->add_option("--seed", seed, "Seed for randomised procedures");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Expectile risk measures, kernel expectile regression, nested expectiles and risk-averse HJB"};
  app.require_subcommand(1);
  std::uint64_t seed = 0;

  std::string format = "csv";

  ExpectileOptions eo;
  auto* e = app.add_subcommand("expectile", "Expectile and comparison risk measures of a sample");
  e->add_option("-i,--input", eo.input, "CSV file with a header row")->required()->check(CLI::ExistingFile);
  e->add_option("-a,--alpha", eo.alpha, "Risk level in (0, 1)")->required();
  e->add_option("--column", eo.column, "Value column (default: first non-weight column)");
  e->add_option("--weights-column", eo.weights_column, "Optional weight column");
  add_common(e, eo.output, format, seed);

  RegressOptions ro;
  std::string bandwidth;
  double lambda = 0.0;
  auto* r = app.add_subcommand("regress", "Kernel expectile regression");
  r->add_option("-i,--input", ro.input, "CSV with feature columns and a target column")->required()->check(CLI::ExistingFile);
  r->add_option("--target", ro.target, "Target column (default: last column)");
  r->add_option("-a,--alpha", ro.alpha, "Risk level in (0, 1)")->required();
  r->add_option("--kernel", ro.kernel, "gaussian, laplace or polynomial")
      ->check(CLI::IsMember({"gaussian", "laplace", "polynomial"}));
  r->add_option("--bandwidth", bandwidth, "Gaussian bandwidth (default: median pairwise distance)");
  r->add_option("--scale", ro.scale, "Laplace scale");
  r->add_option("--degree", ro.degree, "Polynomial degree");
  r->add_option("--offset", ro.offset, "Polynomial offset");
  auto* lambda_opt = r->add_option("--lambda", lambda, "Ridge parameter > 0");
  r->add_option("--lambda-grid", ro.lambda_grid, "Ridge parameters to cross-validate")->delimiter(',');
  r->add_option("--cv-folds", ro.cv_folds, "Folds for --lambda-grid");
  r->add_option("--support", ro.support, "CSV of support points (same feature columns)")->check(CLI::ExistingFile);
  r->add_option("--model-out", ro.model_out, "Write the fitted model as JSON");
  r->add_option("--fitted-out", ro.fitted_out, "Write inputs, targets, fitted values and residual signs as CSV");
  r->add_option("--max-iter", ro.max_iterations, "Iteration cap");
  add_common(r, ro.output, format, seed);

  NestedOptions no;
  std::string step_counts;
  auto* n = app.add_subcommand("nested", "Nested expectile of a lattice or Gaussian random walk");
  n->add_option("--lattice", no.lattice, "Lattice JSON document")->check(CLI::ExistingFile);
  n->add_option("--x0", no.x0, "Random walk start");
  n->add_option("--horizon", no.horizon, "Random walk horizon T");
  n->add_option("--steps", no.steps, "Random walk time steps");
  n->add_option("--quad-nodes", no.quad_nodes, "Gauss-Hermite nodes per step");
  n->add_option("--beta", no.beta, "Risk rate beta(t) = beta + slope*t");
  n->add_option("--beta-slope", no.beta_slope, "Time slope of the risk rate");
  n->add_flag("--convergence", no.convergence, "Tabulate the drift refinement study");
  n->add_option("--step-counts", no.step_counts, "Step counts for --convergence")->delimiter(',');
  n->add_option("--lattice-out", no.lattice_out, "Write the random-walk lattice as JSON");
  add_common(n, no.output, format, seed);

  HjbOptions ho;
  double x_min = 0.0, x_max = 0.0, x0 = 0.0;
  int nx = 0, nt = 0;
  auto* h = app.add_subcommand("hjb", "Risk-averse Hamilton-Jacobi-Bellman solver");
  h->add_option("-p,--problem", ho.problem, "Problem JSON document")->required()->check(CLI::ExistingFile);
  auto* xmin_opt = h->add_option("--x-min", x_min, "Left end of the space grid");
  auto* xmax_opt = h->add_option("--x-max", x_max, "Right end of the space grid");
  auto* nx_opt = h->add_option("--nx", nx, "Space grid points");
  auto* nt_opt = h->add_option("--nt", nt, "Time steps (raised to satisfy the CFL bound unless --strict-cfl)");
  h->add_flag("--strict-cfl", ho.strict_cfl, "Fail instead of raising nt");
  h->add_option("--simulate", ho.simulate, "Monte Carlo paths under the computed policy");
  auto* x0_opt = h->add_option("--x0", x0, "Simulation start");
  h->add_option("--report", ho.report, "Write the run report here (default: stderr)");
  add_common(h, ho.output, format, seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    const Format fmt = parse_format(format);
    if (app.got_subcommand(e)) {
      eo.format = fmt;
      return run_expectile(eo);
    }
    if (app.got_subcommand(r)) {
      ro.format = fmt;
      if (!bandwidth.empty()) ro.bandwidth = std::stod(bandwidth);
      if (lambda_opt->count()) ro.lambda = lambda;
      return run_regress(ro);
    }
    if (app.got_subcommand(n)) {
      no.format = fmt;
      return run_nested(no);
    }
    if (app.got_subcommand(h)) {
      ho.format = fmt;
      ho.seed = seed;
      if (xmin_opt->count()) ho.x_min = x_min;
      if (xmax_opt->count()) ho.x_max = x_max;
      if (nx_opt->count()) ho.nx = nx;
      if (nt_opt->count()) ho.nt = nt;
      if (x0_opt->count()) ho.x0 = x0;
      return run_hjb(ho);
    }
  } catch (const NumericalError& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kExitNumerical;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}
