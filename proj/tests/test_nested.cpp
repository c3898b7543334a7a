#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <stdexcept>
#include <vector>

#include <gtest/gtest.h>

#include "expectiles/nested.hpp"
#include "support.hpp"

using namespace expectiles;

namespace {

const double kDrift = std::sqrt(2.0 / std::numbers::pi);

struct Node {
  std::vector<std::pair<std::uint32_t, double>> children;
};

// Lattice from per-layer state lists and per-node child lists.
LatticeProcess make_lattice(std::vector<double> times, const std::vector<std::vector<double>>& states,
                            const std::vector<std::vector<Node>>& nodes) {
  std::vector<LatticeLayer> layers(states.size());
  for (std::size_t i = 0; i < states.size(); ++i) {
    layers[i].states = states[i];
    if (i + 1 == states.size()) break;
    layers[i].offsets.push_back(0);
    for (const Node& n : nodes[i]) {
      for (auto [c, p] : n.children) layers[i].transitions.push_back({c, p});
      layers[i].offsets.push_back(layers[i].transitions.size());
    }
  }
  return LatticeProcess(std::move(times), std::move(layers));
}

// Two-step binomial martingale: 0 → ±1 → ±1 ± 1.
LatticeProcess binomial_tree(double shift = 0.0) {
  return make_lattice({0.0, 0.5, 1.0}, {{shift}, {shift - 1.0, shift + 1.0}, {shift - 2.0, shift, shift + 2.0}},
                      {{Node{{{0, 0.5}, {1, 0.5}}}}, {Node{{{0, 0.5}, {1, 0.5}}}, Node{{{1, 0.5}, {2, 0.5}}}}});
}

}  // namespace

TEST(RescaledLevel, MapsToStaticLevel) {
  EXPECT_EQ(RescaledLevel(0.0).alpha(), 0.5);
  EXPECT_EQ(RescaledLevel(1.0).alpha(), 1.0);
  EXPECT_DOUBLE_EQ(RescaledLevel(0.25).alpha(), 0.75);
  EXPECT_THROW(RescaledLevel(-0.1), std::invalid_argument);
  EXPECT_THROW(RescaledLevel(1.1), std::invalid_argument);
}

TEST(RescaledExpectile, Examples) {
  const EmpiricalDistribution d({0.0, 1.0});
  EXPECT_DOUBLE_EQ(rescaled_expectile(d, RescaledLevel(0.0)), 0.5);
  EXPECT_EQ(rescaled_expectile(d, RescaledLevel(1.0)), 1.0);
  EXPECT_NEAR(rescaled_expectile(d, RescaledLevel(0.25)), 0.75, 1e-15);
  const EmpiricalDistribution e({-3.0, 2.0, 9.0}, {0.5, 0.3, 0.2});
  EXPECT_EQ(rescaled_expectile(e, RescaledLevel(1.0)), 9.0);
  EXPECT_NEAR(rescaled_expectile(e, RescaledLevel(0.0)), e.mean(), 1e-15);
}

TEST(ConditionalExpectile, Examples) {
  const EmpiricalDistribution whole(testing_support::normal_sample(3, 100));
  EXPECT_EQ(conditional_expectile({whole}, {RiskLevel(0.8)})[0], expectile(whole, RiskLevel(0.8)));
  const auto atoms =
      conditional_expectile({EmpiricalDistribution::point_mass(1.5), EmpiricalDistribution::point_mass(-4.0)},
                            {RiskLevel(0.1), RiskLevel(0.9)});
  EXPECT_EQ(atoms[0], 1.5);
  EXPECT_EQ(atoms[1], -4.0);
  const auto means = conditional_expectile({EmpiricalDistribution({0.0, 1.0}), EmpiricalDistribution({2.0, 4.0})},
                                           {RiskLevel(0.5), RiskLevel(0.5)});
  EXPECT_DOUBLE_EQ(means[0], 0.5);
  EXPECT_DOUBLE_EQ(means[1], 3.0);
  EXPECT_THROW(conditional_expectile({whole}, {}), std::invalid_argument);
}

TEST(Lattice, Validation) {
  const std::vector<std::vector<double>> states{{0.0}, {-1.0, 1.0}};
  EXPECT_NO_THROW(make_lattice({0.0, 1.0}, states, {{Node{{{0, 0.5}, {1, 0.5}}}}}));
  EXPECT_THROW(make_lattice({0.0, 1.0}, states, {{Node{{{0, 0.5}, {1, 0.4}}}}}), std::invalid_argument);
  EXPECT_THROW(make_lattice({1.0, 1.0}, states, {{Node{{{0, 0.5}, {1, 0.5}}}}}), std::invalid_argument);
  EXPECT_THROW(make_lattice({0.0, 1.0}, states, {{Node{{{0, 0.5}, {2, 0.5}}}}}), std::invalid_argument);
  EXPECT_THROW(make_lattice({0.0, 1.0}, states, {{Node{{{0, 1.0}, {1, 0.0}}}}}), std::invalid_argument);
  EXPECT_THROW(make_lattice({0.0, 1.0}, states, {{Node{}}}), std::invalid_argument);
  EXPECT_THROW(make_lattice({0.0, 1.0}, {{0.0, 1.0}, {-1.0, 1.0}}, {{Node{{{0, 1.0}}}, Node{{{1, 1.0}}}}}),
               std::invalid_argument);
  EXPECT_THROW(make_lattice({0.0}, {{0.0}}, {}), std::invalid_argument);
}

TEST(Nested, ZeroRateOnMartingaleIsStart) {
  EXPECT_NEAR(nested_expectile(binomial_tree(0.7), constant_rate(0.0)).value, 0.7, 1e-15);
  const auto walk = build_random_walk_lattice(1.25, 1.0, 40);
  EXPECT_NEAR(nested_expectile(walk, constant_rate(0.0)).value, 1.25, 1e-12);
}

TEST(Nested, DeterministicChainGivesTerminalValue) {
  const auto chain = make_lattice({0.0, 0.3, 0.9, 2.0}, {{1.0}, {-0.5}, {4.0}, {2.5}},
                                  {{Node{{{0, 1.0}}}}, {Node{{{0, 1.0}}}}, {Node{{{0, 1.0}}}}});
  for (double beta : {0.0, 0.3, 1.0}) EXPECT_DOUBLE_EQ(nested_expectile(chain, constant_rate(beta)).value, 2.5);
}

TEST(Nested, OnePeriodIsRescaledExpectileOfIncrement) {
  std::mt19937_64 rng(31);
  for (int k = 0; k < 50; ++k) {
    const auto s = testing_support::random_sample(rng, 12);
    const auto d = s.dist();
    std::vector<Node> root(1);
    for (std::size_t j = 0; j < d.size(); ++j) root[0].children.push_back({static_cast<std::uint32_t>(j), d.weights()[j]});
    std::vector<double> states(d.values().begin(), d.values().end());
    const double x0 = 0.4;
    const double dt = 0.5;
    const auto lattice = make_lattice({0.0, dt}, {{x0}, states}, {root});
    std::vector<double> increments = states;
    for (double& v : increments) v -= x0;
    const EmpiricalDistribution inc(increments, std::vector<double>(d.weights().begin(), d.weights().end()));
    for (double beta : {0.0, 0.5, 1.5, 2.0}) {
      EXPECT_NEAR(nested_expectile(lattice, constant_rate(std::min(beta, 1.0))).value,
                  x0 + rescaled_expectile(inc, RescaledLevel(std::min(beta, 1.0) * dt)),
                  1e-12 * std::max(1.0, d.max() - d.min()));
    }
  }
}

TEST(Nested, ClampsLargeRateTimesStep) {
  const auto tree = make_lattice({0.0, 2.0}, {{0.0}, {-1.0, 1.0}}, {{Node{{{0, 0.5}, {1, 0.5}}}}});
  const auto r = nested_expectile(tree, constant_rate(0.8));
  EXPECT_EQ(r.clamped_nodes, 1u);
  EXPECT_EQ(r.value, 1.0);
  EXPECT_EQ(nested_expectile(tree, constant_rate(0.4)).clamped_nodes, 0u);
  EXPECT_THROW(nested_expectile(tree, constant_rate(1.5)), std::invalid_argument);
  EXPECT_THROW(nested_expectile(tree, constant_rate(-0.1)), std::invalid_argument);
}

TEST(Nested, RateIsEvaluatedAtTheCurrentNode) {
  // risk only at the upper node of the middle layer
  const auto tree = binomial_tree();
  const RiskRate rate = [](double t, double x) { return t > 0.25 && x > 0.0 ? 1.0 : 0.0; };
  // upper node: ẽ at βΔt = 0.5 of {−1, +1}; lower node: mean 0
  const double upper = rescaled_expectile(EmpiricalDistribution({-1.0, 1.0}), RescaledLevel(0.5));
  EXPECT_NEAR(nested_expectile(tree, rate).value, 0.5 * (1.0 + upper) + 0.5 * (-1.0), 1e-15);
}

TEST(Nested, TranslationAndMonotonicity) {
  const auto base = build_random_walk_lattice(0.0, 1.0, 16);
  const auto shifted = build_random_walk_lattice(3.5, 1.0, 16);
  const double v = nested_expectile(base, constant_rate(0.4)).value;
  EXPECT_NEAR(nested_expectile(shifted, constant_rate(0.4)).value, v + 3.5, 1e-12);
  EXPECT_NEAR(nested_expectile(binomial_tree(2.0), constant_rate(0.6)).value,
              nested_expectile(binomial_tree(), constant_rate(0.6)).value + 2.0, 1e-14);

  const RiskRate low = [](double, double x) { return 0.2 + 0.1 * std::tanh(x); };
  const RiskRate high = [](double t, double x) { return 0.3 + 0.1 * std::tanh(x) + 0.5 * t; };
  const double lo = nested_expectile(base, low).value;
  const double hi = nested_expectile(base, high).value;
  EXPECT_LE(lo, hi);
  double previous = -1.0;
  for (double beta = 0.0; beta <= 1.0; beta += 0.125) {
    const double value = nested_expectile(base, constant_rate(beta)).value;
    EXPECT_GE(value, previous);
    previous = value;
  }
}

TEST(Nested, RandomWalkApproachesDrift) {
  const auto walk = build_random_walk_lattice(0.0, 1.0, 256);
  EXPECT_NEAR(nested_expectile(walk, constant_rate(0.5)).value, std::sqrt(1.0 / std::numbers::pi), 0.02 * 0.5642);
}

TEST(Nested, SplittingAStepChangesValueAtHigherOrder) {
  // one step of length Δt against two half steps at the same rate
  const double beta = 0.6;
  std::vector<double> gaps;
  std::vector<double> dts{0.2, 0.05, 0.0125, 0.003125};
  for (double dt : dts) {
    const double whole = nested_expectile(build_random_walk_lattice(0.0, dt, 1), constant_rate(beta)).value;
    const double split = nested_expectile(build_random_walk_lattice(0.0, dt, 2), constant_rate(beta)).value;
    gaps.push_back(std::abs(split - whole));
  }
  double previous = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < dts.size(); ++i) {
    const double c = gaps[i] / std::pow(dts[i], 1.5);
    EXPECT_LE(c, 0.1) << dts[i];
    EXPECT_LE(c, 1.1 * previous) << dts[i];
    previous = c;
  }
}

TEST(RandomWalk, TwoNodeSingleStep) {
  const auto lattice = build_random_walk_lattice(2.0, 0.25, 1, 2);
  ASSERT_EQ(lattice.layer(1).states.size(), 2u);
  EXPECT_NEAR(lattice.layer(1).states[0], 1.5, 1e-15);
  EXPECT_NEAR(lattice.layer(1).states[1], 2.5, 1e-15);
  for (const Transition& t : lattice.children(0, 0)) EXPECT_NEAR(t.probability, 0.5, 1e-15);
}

TEST(RandomWalk, ChildMomentsMatchIncrements) {
  for (int q : {2, 3, 4, 5, 6, 7, 8, 9}) {
    const double T = 0.9;
    const int steps = 5;
    const auto lattice = build_random_walk_lattice(-0.3, T, steps, q);
    const double dt = T / steps;
    for (std::size_t i = 0; i < lattice.steps(); ++i) {
      const auto& states = lattice.layer(i).states;
      const auto& next = lattice.layer(i + 1).states;
      for (std::size_t j = 0; j < states.size(); ++j) {
        double total = 0.0;
        double mean = 0.0;
        double var = 0.0;
        for (const Transition& t : lattice.children(i, j)) {
          total += t.probability;
          mean += t.probability * (next[t.child] - states[j]);
          var += t.probability * (next[t.child] - states[j]) * (next[t.child] - states[j]);
        }
        EXPECT_NEAR(total, 1.0, 1e-12);
        EXPECT_NEAR(mean, 0.0, 1e-12);
        EXPECT_NEAR(var, dt, 1e-12) << "nodes " << q;
      }
    }
  }
}

TEST(RandomWalk, IncrementRule) {
  for (int q = 2; q <= 12; ++q) {
    const auto rule = random_walk_increment_rule(q);
    double total = 0.0;
    double second = 0.0;
    double absolute = 0.0;
    for (std::size_t r = 0; r < rule.offsets.size(); ++r) {
      const double z = rule.offsets[r] * rule.spacing;
      total += rule.weights[r];
      second += rule.weights[r] * z * z;
      absolute += rule.weights[r] * std::abs(z);
      EXPECT_GT(rule.weights[r], 0.0);
    }
    EXPECT_NEAR(total, 1.0, 1e-14) << q;
    EXPECT_TRUE(rule.variance_matched) << q;
    EXPECT_NEAR(second, 1.0, 1e-12) << q;
    if (rule.abs_moment_matched) {
      EXPECT_NEAR(absolute, kDrift, 1e-12) << q;
    }
  }
  EXPECT_TRUE(random_walk_increment_rule(7).abs_moment_matched);
  EXPECT_THROW(random_walk_increment_rule(1), std::invalid_argument);
  EXPECT_THROW(build_random_walk_lattice(0.0, 1.0, 0), std::invalid_argument);
  EXPECT_THROW(build_random_walk_lattice(0.0, 0.0, 4), std::invalid_argument);
}

TEST(DriftStudy, ZeroRateHasNoError) {
  const auto study = verify_drift_convergence(0.0, 1.0, {4, 16, 64});
  for (const auto& row : study.rows) EXPECT_LE(row.error, 1e-10);
}

TEST(DriftStudy, FullRateConverges) {
  const auto study = verify_drift_convergence(1.0, 1.0, {4, 16, 64});
  ASSERT_EQ(study.rows.size(), 3u);
  EXPECT_TRUE(study.nonincreasing);
  EXPECT_NEAR(study.rows[0].reference, kDrift, 1e-15);
  EXPECT_LT(study.rows[2].error, study.rows[0].error);
  EXPECT_EQ(study.rows[0].clamped_nodes, 0u);
  EXPECT_DOUBLE_EQ(study.rows[1].dt, 1.0 / 16.0);
}

TEST(DriftStudy, TimeDependentRateReference) {
  const auto study = verify_drift_convergence([](double t) { return t; }, 1.0, {8}, 7, 0.5);
  EXPECT_NEAR(study.rows[0].reference, 0.5 + 2.0 / 3.0 * kDrift, 1e-12);
}

TEST(RiskGenerator, Examples) {
  const ScalarField zero = [](double, double) { return 0.0; };
  const ScalarField one = [](double, double) { return 1.0; };
  EXPECT_NEAR(risk_generator_fd([](double, double x) { return x; }, zero, one, constant_rate(0.5), 0.3, 1.2),
              std::sqrt(1.0 / std::numbers::pi), 1e-9);
  EXPECT_NEAR(risk_generator_fd([](double, double) { return 4.0; }, one, one, constant_rate(0.9), 0.3, -2.0), 0.0,
              1e-12);
  EXPECT_NEAR(risk_generator_fd([](double, double x) { return x * x; }, zero, one, constant_rate(0.0), 0.0, 0.7), 1.0,
              1e-5);
}

TEST(RiskGenerator, ZeroRateIsItoGenerator) {
  struct Case {
    ScalarField f, ft, fx, fxx;
  };
  const std::vector<Case> library = {
      {[](double, double x) { return x * x * x; }, [](double, double) { return 0.0; },
       [](double, double x) { return 3.0 * x * x; }, [](double, double x) { return 6.0 * x; }},
      {[](double t, double x) { return t * x * x - x; }, [](double, double x) { return x * x; },
       [](double t, double x) { return 2.0 * t * x - 1.0; }, [](double t, double) { return 2.0 * t; }},
      {[](double t, double x) { return t * t + x * x * x * x; }, [](double t, double) { return 2.0 * t; },
       [](double, double x) { return 4.0 * x * x * x; }, [](double, double x) { return 12.0 * x * x; }},
  };
  const ScalarField mu = [](double t, double x) { return 0.5 - x + t; };
  const ScalarField sigma = [](double, double x) { return 1.0 + 0.3 * x * x; };
  for (const Case& c : library) {
    for (double x : {-1.5, 0.0, 0.4, 2.0}) {
      const double t = 0.6;
      const double s = sigma(t, x);
      const double ito = c.ft(t, x) + mu(t, x) * c.fx(t, x) + 0.5 * s * s * c.fxx(t, x);
      EXPECT_NEAR(risk_generator_fd(c.f, mu, sigma, constant_rate(0.0), t, x), ito, 1e-3 * (1.0 + std::abs(ito)));
      const double risky = ito + std::sqrt(2.0 * 0.3 / std::numbers::pi) * std::abs(s * c.fx(t, x));
      EXPECT_NEAR(risk_generator_fd(c.f, mu, sigma, constant_rate(0.3), t, x), risky, 1e-3 * (1.0 + std::abs(risky)));
    }
  }
}
