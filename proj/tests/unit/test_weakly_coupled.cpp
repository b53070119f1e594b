#include "helpers.hpp"
#include "oracles/oracles.hpp"

#include "cmdp/weakly_coupled.hpp"

#include <doctest.h>

using namespace cmdp;
using testing::random_instance;
using testing::random_policy;
using testing::vec;

namespace {

WeaklyCoupledCMDP random_problem(int parts, Index S, Index A, Index K, std::uint64_t seed) {
  WeaklyCoupledCMDP p;
  p.discount = 0.8;
  for (int i = 0; i < parts; ++i) {
    const auto m = random_instance(S, A, K, derive_seed(seed, static_cast<std::uint64_t>(i)), p.discount);
    p.subproblems.push_back(make_subproblem(m, m.aux_costs));
  }
  p.thresholds = VectorXd::Constant(K, 0.5 * parts);
  return p;
}

DecomposablePolicy random_parts(const WeaklyCoupledCMDP& p, std::uint64_t seed) {
  DecomposablePolicy out;
  for (Index i = 0; i < p.n_subproblems(); ++i)
    out.parts.push_back(random_policy(p.subproblems[i], derive_seed(seed, static_cast<std::uint64_t>(i))));
  return out;
}

// Joint problem built by the test-side oracle.
TabularCMDPd oracle_joint(const WeaklyCoupledCMDP& p) {
  return oracle::to_tabular(oracle::dense_product(p.subproblems), p.discount, p.thresholds);
}

}  // namespace

TEST_SUITE("weakly-coupled") {
  TEST_CASE("validation") {
    auto p = random_problem(2, 3, 2, 1, 1);
    CHECK(validate(p).empty());
    p.subproblems[1].discount = 0.5;
    CHECK_FALSE(validate(p).empty());
    CHECK_THROWS_AS(require_valid(p), std::invalid_argument);
  }

  TEST_CASE("a single part matches the plain update") {
    const auto p = random_problem(1, 4, 3, 1, 2);
    const auto pol = random_parts(p, 3);
    const ExactEvaluator exact;
    const VectorXd lambda = vec({0.8});
    const auto next = decomposed_policy_update(p, pol, lambda, 0.3, {&exact});
    const auto q = evaluate_policy_exact(p.subproblems[0], pol.parts[0], lambda).q;
    const auto direct = policy_update(q, pol.parts[0], 0.3);
    CHECK((next.parts[0].probs - direct.probs).cwiseAbs().maxCoeff() < 1e-15);

    const auto frozen = decomposed_policy_update(p, pol, lambda, 0.0, {&exact});
    CHECK((frozen.parts[0].probs - pol.parts[0].probs).cwiseAbs().maxCoeff() < 1e-15);
  }

  TEST_CASE("sub-Q tables add up to the joint Q") {
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
      const auto p = random_problem(2, 3 + static_cast<Index>(seed % 2), 2, 2, seed * 10);
      const auto pol = random_parts(p, seed);
      const VectorXd lambda = vec({0.6, 1.3});
      const ExactEvaluator exact;
      const auto evs = evaluate_parts(p, pol, lambda, {&exact, &exact}, 0);
      const auto joint = oracle_joint(p);
      const auto jq = evaluate_policy_exact(joint, product_policy(p, pol), lambda).q;
      const double shift = lambda.dot(p.thresholds);
      const Index S1 = p.subproblems[1].n_states, A1 = p.subproblems[1].n_actions;
      double worst = 0.0;
      for (Index s = 0; s < joint.n_states; ++s)
        for (Index a = 0; a < joint.n_actions; ++a) {
          const double sum = evs[0].q(s / S1, a / A1) + evs[1].q(s % S1, a % A1);
          worst = std::max(worst, std::abs(jq(s, a) + shift - sum));
        }
      CHECK(worst < 1e-8);
    }
  }

  TEST_CASE("product construction matches the dense oracle") {
    const auto p = random_problem(2, 3, 2, 1, 77);
    const auto mine = product_cmdp(p);
    const auto ref = oracle_joint(p);
    REQUIRE(mine.n_states == ref.n_states);
    REQUIRE(mine.n_actions == ref.n_actions);
    CHECK((Eigen::MatrixXd(mine.kernel) - Eigen::MatrixXd(ref.kernel)).cwiseAbs().maxCoeff() < 1e-15);
    CHECK((mine.cost - ref.cost).cwiseAbs().maxCoeff() < 1e-15);
    CHECK((mine.aux_costs[0] - ref.aux_costs[0]).cwiseAbs().maxCoeff() < 1e-15);
    CHECK((mine.init_dist - ref.init_dist).cwiseAbs().maxCoeff() < 1e-15);

    auto big = random_problem(3, 50, 8, 1, 5);
    CHECK_THROWS_AS(product_cmdp(big), std::length_error);
  }

  TEST_CASE("aggregated subgradient") {
    const ExactEvaluator exact;
    SUBCASE("zero link costs and zero budget") {
      auto p = random_problem(2, 3, 2, 2, 4);
      for (auto& sub : p.subproblems)
        for (auto& b : sub.aux_costs) b.setZero();
      p.thresholds.setZero();
      CHECK(aggregated_subgradient(p, uniform_policy(p), {&exact, &exact}).norm() == 0.0);
    }
    SUBCASE("joint constraint values") {
      const auto p = random_problem(2, 4, 2, 2, 5);
      const auto pol = random_parts(p, 6);
      const auto joint = oracle_joint(p);
      const VectorXd expect = costs_of_policy(joint, product_policy(p, pol)).constraints - p.thresholds;
      CHECK((aggregated_subgradient(p, pol, {&exact, &exact}) - expect).cwiseAbs().maxCoeff() < 1e-8);
    }
    SUBCASE("linear in the link costs") {
      auto p = random_problem(2, 3, 2, 1, 7);
      const auto pol = random_parts(p, 8);
      const VectorXd base = aggregated_subgradient(p, pol, {&exact, &exact}) + p.thresholds;
      for (auto& sub : p.subproblems) sub.aux_costs[0] *= 2.0;
      const VectorXd doubled = aggregated_subgradient(p, pol, {&exact, &exact}) + p.thresholds;
      CHECK((doubled - 2.0 * base).cwiseAbs().maxCoeff() < 1e-14);
    }
  }

  TEST_CASE("identical parts stay identical") {
    auto p = random_problem(1, 4, 3, 1, 9);
    p.subproblems.push_back(p.subproblems[0]);
    p.thresholds = vec({0.9});
    DecomposedConfig cfg;
    cfg.solver.iterations = 100;
    cfg.solver.schedule = {StepKind::constant, 0.3};
    cfg.solver.domain = {5.0, 1.0};
    const ExactEvaluator exact;
    const auto res = run_decomposed(p, cfg, {&exact, &exact});
    CHECK((res.final_policy.parts[0].probs - res.final_policy.parts[1].probs).cwiseAbs().maxCoeff() == 0.0);
    REQUIRE(res.stationary.size() == 2);
    const auto nu0 = occupation_exact(p.subproblems[0], res.stationary[0]);
    const auto nu1 = occupation_exact(p.subproblems[1], res.stationary[1]);
    CHECK((nu0.mass - nu1.mass).cwiseAbs().maxCoeff() < 1e-12);
  }

  TEST_CASE("decomposed run equals the joint run on the product") {
    const auto p = random_problem(2, 3, 2, 1, 11);
    DecomposedConfig cfg;
    cfg.solver.iterations = 60;
    cfg.solver.schedule = {StepKind::constant, 0.4};
    cfg.solver.domain = {4.0, 1.0};
    const ExactEvaluator exact;
    const auto dec = run_decomposed(p, cfg, {&exact, &exact});
    const auto joint = run(oracle_joint(p), cfg.solver, exact);
    REQUIRE(dec.trail.size() == joint.trail.size());
    for (std::size_t m = 0; m < dec.trail.size(); ++m) {
      CHECK(std::abs(dec.trail[m].objective - joint.trail[m].objective) < 1e-10);
      CHECK((dec.trail[m].lambda - joint.trail[m].lambda).norm() < 1e-10);
    }
    const auto jp = product_policy(p, dec.final_policy);
    CHECK((jp.probs - joint.final_policy.probs).cwiseAbs().maxCoeff() < 1e-10);
  }

  TEST_CASE("vacuous links solve each part on its own") {
    auto p = random_problem(2, 4, 3, 1, 13);
    p.thresholds = vec({10.0});
    DecomposedConfig cfg;
    cfg.solver.iterations = 3000;
    cfg.solver.schedule = {StepKind::constant, 0.5};
    cfg.solver.domain = {1.0, 1.0};
    const ExactEvaluator exact;
    const auto res = run_decomposed(p, cfg, {&exact, &exact});
    CHECK(res.final_lambda.norm() == 0.0);
    for (Index i = 0; i < 2; ++i) {
      const auto& sub = p.subproblems[i];
      const double opt = sub.init_dist.dot(oracle::value_iteration(sub, sub.cost));
      const double got = costs_of_policy(sub, res.final_policy.parts[i]).objective;
      CHECK(got >= opt - 1e-12);
      CHECK(got - opt < 1e-3);
    }
  }

  TEST_CASE("per-iteration work grows linearly in the number of parts") {
    const auto base = random_problem(1, 60, 6, 1, 21);
    auto make = [&](int n) {
      WeaklyCoupledCMDP p;
      p.discount = base.discount;
      for (int i = 0; i < n; ++i) p.subproblems.push_back(base.subproblems[0]);
      p.thresholds = VectorXd::Constant(1, 0.5 * n);
      return p;
    };
    auto per_iteration = [&](const WeaklyCoupledCMDP& p) {
      DecomposedConfig cfg;
      cfg.solver.iterations = 40;
      cfg.solver.domain = {5.0, 1.0};
      cfg.workers = 1;
      const ExactEvaluator exact;
      const SubEvaluators evs(p.subproblems.size(), &exact);
      const auto res = run_decomposed(p, cfg, evs);
      std::vector<double> t(res.iteration_seconds.begin() + 5, res.iteration_seconds.end());
      std::sort(t.begin(), t.end());
      return t[t.size() / 2];
    };
    per_iteration(make(2));  // warm-up
    const double t2 = per_iteration(make(2));
    const double t4 = per_iteration(make(4));
    CHECK(t4 / t2 <= 2.0 * 1.3);
  }
}
