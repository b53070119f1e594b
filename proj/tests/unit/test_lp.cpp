#include "helpers.hpp"
#include "oracles/oracles.hpp"

#include "cmdp/inventory.hpp"
#include "cmdp/lp_oracle.hpp"

#include <doctest.h>

using namespace cmdp;
using testing::random_instance;
using testing::random_policy;
using testing::vec;

TEST_SUITE("exact-oracle") {
  TEST_CASE("unconstrained single state picks the cheap action") {
    Tabled cost(1, 2);
    cost << 1.0, 2.0;
    const auto m = testing::deterministic_cmdp({{0, 0}}, cost, 0.8, vec({1.0}));
    const auto sol = solve_lp(m);
    REQUIRE(sol.status == LpStatus::optimal);
    CHECK(sol.c_star == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(sol.nu_star.mass(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::abs(sol.nu_star.mass(0, 1)) < 1e-12);
  }

  TEST_CASE("random K=1 instances agree with the dual grid") {
    for (std::uint64_t seed = 1; seed <= 6; ++seed) {
      auto m = random_instance(4, 2, 1, seed);
      // Tighten the budget so the constraint tends to bind.
      m.thresholds(0) -= 0.04;
      const auto sol = solve_lp(m);
      if (sol.status != LpStatus::optimal) continue;
      CHECK(sol.c_star == doctest::Approx(oracle::dual_grid_value(m, 50.0)).epsilon(1e-7));
      CHECK(check_complementary_slackness(sol, sol.lambda_star));
      CHECK(flow_residual(m, sol.nu_star) < 1e-10);
    }
  }

  TEST_CASE("reduced inventory instance agrees with the dual grid") {
    const auto m = inventory::build_tabular(inventory::reduced_config());
    const auto sol = solve_lp(m);
    REQUIRE(sol.status == LpStatus::optimal);
    CHECK(sol.c_star == doctest::Approx(oracle::dual_grid_value(m, 20.0)).epsilon(1e-7));
  }

  TEST_CASE("complementary slackness examples") {
    OracleSolution sol;
    sol.dual_slacks = vec({0.0, 0.3});
    CHECK(check_complementary_slackness(sol, vec({0.0, 0.0})));
    CHECK(check_complementary_slackness(sol, vec({2.0, 0.0})));
    CHECK_FALSE(check_complementary_slackness(sol, vec({0.0, 0.5})));
    CHECK_THROWS_AS(check_complementary_slackness(sol, vec({0.0})), std::invalid_argument);
  }

  TEST_CASE("LP optimum is below every feasible stationary policy") {
    for (std::uint64_t seed = 1; seed <= 4; ++seed) {
      const auto m = random_instance(5, 3, 2, seed + 10);
      const auto sol = solve_lp(m);
      REQUIRE(sol.status == LpStatus::optimal);
      int feasible = 0;
      for (std::uint64_t k = 0; k < 50; ++k) {
        const auto costs = costs_of_policy(m, random_policy(m, 1000 * seed + k));
        if (((costs.constraints - m.thresholds).array() > 0.0).any()) continue;
        ++feasible;
        CHECK(sol.c_star <= costs.objective + 1e-12);
      }
      CHECK(feasible > 0);
    }
  }

  TEST_CASE("extracted policy reproduces the optimum") {
    for (std::uint64_t seed = 1; seed <= 4; ++seed) {
      const auto m = random_instance(6, 3, 2, seed + 20);
      const auto sol = solve_lp(m);
      REQUIRE(sol.status == LpStatus::optimal);
      const auto costs = costs_of_policy(m, sol.policy_star);
      CHECK(costs.objective == doctest::Approx(sol.c_star).epsilon(1e-8));
      CHECK(((costs.constraints - m.thresholds).array() <= 1e-9).all());
    }
  }

  TEST_CASE("slack thresholds reduce to the unconstrained optimum") {
    for (std::uint64_t seed = 1; seed <= 4; ++seed) {
      auto m = random_instance(5, 3, 1, seed + 30);
      m.thresholds.setConstant(1e3);
      const auto sol = solve_lp(m);
      REQUIRE(sol.status == LpStatus::optimal);
      CHECK(sol.c_star == doctest::Approx(m.init_dist.dot(oracle::value_iteration(m, m.cost))).epsilon(1e-8));
      CHECK(sol.lambda_star.norm() < 1e-9);
    }
  }

  TEST_CASE("unreachable budget is infeasible") {
    auto m = random_instance(4, 2, 1, 41);
    m.thresholds(0) = -0.5;
    CHECK(solve_lp(m).status == LpStatus::infeasible);
  }

  TEST_CASE("standard form with a redundant row") {
    // min -x0 - x1 s.t. x0 + x1 + x2 = 1, 2x0 + 2x1 + 2x2 = 2, x >= 0
    StandardFormLP lp;
    lp.A.resize(2, 3);
    std::vector<Eigen::Triplet<double>> t;
    for (int j = 0; j < 3; ++j) {
      t.emplace_back(0, j, 1.0);
      t.emplace_back(1, j, 2.0);
    }
    lp.A.setFromTriplets(t.begin(), t.end());
    lp.b = vec({1.0, 2.0});
    lp.c = vec({-1.0, -1.0, 0.0});
    const auto r = solve_standard_form(lp);
    REQUIRE(r.status == LpStatus::optimal);
    CHECK(r.objective == doctest::Approx(-1.0));
    CHECK((lp.A * r.x - lp.b).cwiseAbs().maxCoeff() < 1e-12);
  }
}
