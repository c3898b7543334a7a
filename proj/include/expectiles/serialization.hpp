#pragma once

// JSON documents for kernel models, lattices and control problems.

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "expectiles/hjb.hpp"
#include "expectiles/nested.hpp"
#include "expectiles/regression.hpp"

namespace expectiles::io {

using json = nlohmann::json;

namespace detail {

inline double number(const json& j, const char* key, double fallback) {
  if (!j.contains(key)) return fallback;
  const json& v = j.at(key);
  if (!v.is_number()) throw std::invalid_argument(std::string("field '") + key + "' must be a number");
  return v.get<double>();
}

inline double required_number(const json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) throw std::invalid_argument(std::string("missing field '") + key + "'");
  return number(j, key, 0.0);
}

inline std::string family(const json& j) {
  if (!j.is_object() || !j.contains("family") || !j.at("family").is_string()) {
    throw std::invalid_argument("coefficient needs a string 'family'");
  }
  return j.at("family").get<std::string>();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Kernel models: {kernel, params, support_points, weights, alpha, lambda}

inline json to_json(const KernelModel& m) {
  json params;
  switch (m.kernel.family()) {
    case KernelSpec::Family::gaussian: params["bandwidth"] = m.kernel.bandwidth(); break;
    case KernelSpec::Family::laplace: params["scale"] = m.kernel.scale(); break;
    case KernelSpec::Family::polynomial:
      params["degree"] = m.kernel.degree();
      params["offset"] = m.kernel.offset();
      break;
  }
  json support = json::array();
  for (Eigen::Index i = 0; i < m.support.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.support.cols(); ++j) row.push_back(m.support(i, j));
    support.push_back(row);
  }
  json weights = json::array();
  for (Eigen::Index i = 0; i < m.weights.size(); ++i) weights.push_back(m.weights(i));
  return json{{"kernel", m.kernel.name()}, {"params", params}, {"support_points", support},
              {"weights", weights},         {"alpha", m.level.alpha()}, {"lambda", m.lambda}};
}

inline KernelSpec kernel_from_json(const std::string& name, const json& params) {
  if (name == "gaussian") return KernelSpec::gaussian(detail::required_number(params, "bandwidth"));
  if (name == "laplace") return KernelSpec::laplace(detail::required_number(params, "scale"));
  if (name == "polynomial") {
    return KernelSpec::polynomial(static_cast<int>(detail::required_number(params, "degree")),
                                  detail::number(params, "offset", 0.0));
  }
  throw std::invalid_argument("unknown kernel '" + name + "'");
}

inline KernelModel model_from_json(const json& j) {
  try {
    const KernelSpec kernel = kernel_from_json(j.at("kernel").get<std::string>(), j.at("params"));
    const auto points = j.at("support_points").get<std::vector<std::vector<double>>>();
    const auto weights = j.at("weights").get<std::vector<double>>();
    if (points.empty()) throw std::invalid_argument("model has no support points");
    Eigen::MatrixXd support(static_cast<Eigen::Index>(points.size()), static_cast<Eigen::Index>(points[0].size()));
    for (std::size_t i = 0; i < points.size(); ++i) {
      if (points[i].size() != points[0].size()) throw std::invalid_argument("support points differ in dimension");
      for (std::size_t k = 0; k < points[i].size(); ++k) support(i, k) = points[i][k];
    }
    Eigen::VectorXd w = Eigen::Map<const Eigen::VectorXd>(weights.data(), static_cast<Eigen::Index>(weights.size()));
    return KernelModel(kernel, std::move(support), std::move(w), RiskLevel(j.at("alpha").get<double>()),
                       j.at("lambda").get<double>());
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("malformed model document: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Lattices: {times: [...], nodes: [[x, ...] per layer], edges: [[[from, to, p], ...] per step]}

inline json to_json(const LatticeProcess& lattice) {
  json times = lattice.times();
  json nodes = json::array();
  json edges = json::array();
  for (std::size_t i = 0; i <= lattice.steps(); ++i) {
    const LatticeLayer& layer = lattice.layer(i);
    nodes.push_back(layer.states);
    if (i == lattice.steps()) break;
    json step = json::array();
    for (std::size_t j = 0; j < layer.states.size(); ++j) {
      for (const Transition& tr : lattice.children(i, j)) step.push_back(json::array({j, tr.child, tr.probability}));
    }
    edges.push_back(std::move(step));
  }
  return json{{"times", times}, {"nodes", nodes}, {"edges", edges}};
}

inline LatticeProcess lattice_from_json(const json& j) {
  try {
    auto times = j.at("times").get<std::vector<double>>();
    const auto nodes = j.at("nodes").get<std::vector<std::vector<double>>>();
    const json& edges = j.at("edges");
    if (nodes.size() != times.size()) throw std::invalid_argument("one node layer per time point is required");
    if (!edges.is_array() || edges.size() + 1 != times.size()) {
      throw std::invalid_argument("one edge list per time step is required");
    }
    std::vector<LatticeLayer> layers(nodes.size());
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      layers[i].states = nodes[i];
      if (i + 1 == nodes.size()) break;
      std::vector<std::vector<Transition>> per_node(nodes[i].size());
      for (const json& e : edges[i]) {
        if (!e.is_array() || e.size() != 3) throw std::invalid_argument("edges must be [from, to, probability]");
        const auto from = e[0].get<long long>();
        const auto to = e[1].get<long long>();
        if (from < 0 || static_cast<std::size_t>(from) >= nodes[i].size() || to < 0 ||
            static_cast<std::size_t>(to) >= nodes[i + 1].size()) {
          throw std::invalid_argument("edge node index out of range at step " + std::to_string(i));
        }
        per_node[static_cast<std::size_t>(from)].push_back({static_cast<std::uint32_t>(to), e[2].get<double>()});
      }
      layers[i].offsets.push_back(0);
      for (const auto& children : per_node) {
        layers[i].transitions.insert(layers[i].transitions.end(), children.begin(), children.end());
        layers[i].offsets.push_back(layers[i].transitions.size());
      }
    }
    return LatticeProcess(std::move(times), std::move(layers));
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("malformed lattice document: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Control problems. Coefficients are a number (constant) or an object
//   {"family": "constant", "value"}
//   {"family": "affine", "const", "t", "x", "u"}
//   {"family": "quadratic", "const", "t", "x", "u", "xx", "uu", "xu"}
// with absent terms zero. The terminal function additionally accepts
//   {"family": "exponential", "scale", "rate"}  →  scale·exp(rate·x).

inline Coefficient coefficient_from_json(const json& j) {
  using detail::number;
  if (j.is_number()) {
    const double v = j.get<double>();
    return [v](double, double, double) { return v; };
  }
  const std::string f = detail::family(j);
  if (f == "constant") {
    const double v = detail::required_number(j, "value");
    return [v](double, double, double) { return v; };
  }
  const double c0 = number(j, "const", 0.0);
  const double ct = number(j, "t", 0.0);
  const double cx = number(j, "x", 0.0);
  const double cu = number(j, "u", 0.0);
  if (f == "affine") {
    return [=](double t, double x, double u) { return c0 + ct * t + cx * x + cu * u; };
  }
  if (f == "quadratic") {
    const double cxx = number(j, "xx", 0.0);
    const double cuu = number(j, "uu", 0.0);
    const double cxu = number(j, "xu", 0.0);
    return [=](double t, double x, double u) {
      return c0 + ct * t + cx * x + cu * u + cxx * x * x + cuu * u * u + cxu * x * u;
    };
  }
  throw std::invalid_argument("unknown coefficient family '" + f + "'");
}

inline TerminalFunction terminal_from_json(const json& j) {
  if (j.is_object() && detail::family(j) == "exponential") {
    const double scale = detail::number(j, "scale", 1.0);
    const double rate = detail::number(j, "rate", 1.0);
    return [=](double x) { return scale * std::exp(rate * x); };
  }
  if (j.is_object()) {
    for (const char* key : {"t", "u", "uu", "xu"}) {
      if (j.contains(key)) throw std::invalid_argument(std::string("terminal function cannot depend on '") + key + "'");
    }
  }
  Coefficient c = coefficient_from_json(j);
  return [c](double x) { return c(0.0, x, 0.0); };
}

inline RiskRate rate_from_json(const json& j) {
  if (j.is_object() && j.contains("u")) throw std::invalid_argument("risk rate cannot depend on the control");
  Coefficient c = coefficient_from_json(j);
  return [c](double t, double x) { return c(t, x, 0.0); };
}

/// Closed-form value function used to report errors: {"family": "affine",
/// "const", "x", "tau"} → const + x·X + tau·(T − t), or {"family":
/// "exponential", "scale", "rate", "tau"} → scale·exp(rate·X + tau·(T − t)).
using ValueFunction = std::function<double(double t, double x)>;

inline ValueFunction reference_from_json(const json& j, double horizon) {
  const std::string f = detail::family(j);
  const double tau = detail::number(j, "tau", 0.0);
  if (f == "affine") {
    const double c0 = detail::number(j, "const", 0.0);
    const double cx = detail::number(j, "x", 0.0);
    return [=](double t, double x) { return c0 + cx * x + tau * (horizon - t); };
  }
  if (f == "exponential") {
    const double scale = detail::number(j, "scale", 1.0);
    const double rate = detail::number(j, "rate", 1.0);
    return [=](double t, double x) { return scale * std::exp(rate * x + tau * (horizon - t)); };
  }
  throw std::invalid_argument("unknown reference family '" + f + "'");
}

struct ProblemDocument {
  HjbProblem problem;
  std::optional<Grid> grid;
  std::optional<ValueFunction> reference;
};

inline ProblemDocument problem_from_json(const json& j) {
  try {
    ProblemDocument doc;
    HjbProblem& p = doc.problem;
    p.horizon = detail::required_number(j, "horizon");
    const json& controls = j.at("controls");
    if (controls.is_array()) {
      p.controls = controls.get<std::vector<double>>();
    } else {
      const double lo = detail::required_number(controls, "min");
      const double hi = detail::required_number(controls, "max");
      const int count = static_cast<int>(detail::required_number(controls, "count"));
      if (count < 1 || (count == 1 && lo != hi) || hi < lo) throw std::invalid_argument("invalid control range");
      for (int k = 0; k < count; ++k) p.controls.push_back(count == 1 ? lo : lo + (hi - lo) * k / (count - 1));
    }
    p.drift = coefficient_from_json(j.at("drift"));
    p.volatility = coefficient_from_json(j.at("volatility"));
    p.cost = j.contains("cost") ? coefficient_from_json(j.at("cost")) : coefficient_from_json(json(0.0));
    p.terminal = terminal_from_json(j.at("terminal"));
    p.rate = j.contains("risk_rate") ? rate_from_json(j.at("risk_rate")) : constant_rate(0.0);
    p.validate();
    if (j.contains("grid")) {
      const json& g = j.at("grid");
      Grid grid;
      grid.x_min = detail::required_number(g, "x_min");
      grid.x_max = detail::required_number(g, "x_max");
      grid.nx = static_cast<int>(detail::required_number(g, "nx"));
      grid.nt = static_cast<int>(detail::number(g, "nt", 1.0));
      doc.grid = grid;
    }
    if (j.contains("reference")) doc.reference = reference_from_json(j.at("reference"), p.horizon);
    return doc;
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("malformed problem document: ") + e.what());
  }
}

}  // namespace expectiles::io
