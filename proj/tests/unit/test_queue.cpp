#include "oracles/oracles.hpp"

#include "cmdp/queue.hpp"

#include <doctest.h>

#include <cmath>

using namespace cmdp;
using namespace cmdp::queue;

namespace {

QueueState state_of(const QueueConfig& cfg, std::initializer_list<int> x) {
  QueueState s;
  s.X = IntVector(cfg.n_classes());
  Index i = 0;
  for (int v : x) s.X(i++) = v;
  s.Z = IntMatrix::Zero(cfg.n_classes(), cfg.n_pools());
  return s;
}

IntVector ints(std::initializer_list<int> xs) {
  IntVector v(static_cast<Index>(xs.size()));
  Index i = 0;
  for (int x : xs) v(i++) = x;
  return v;
}

bool state_ok(const QueueConfig& cfg, const QueueState& s) {
  if ((s.X.array() < 0).any() || (s.Z.array() < 0).any()) return false;
  for (Index j = 0; j < cfg.n_pools(); ++j)
    if (s.Z.col(j).sum() > cfg.pool_sizes(j)) return false;
  return true;
}

}  // namespace

TEST_SUITE("env-queue") {
  TEST_CASE("configurations") {
    const auto cfg = scaled_config(CostRegime::large);
    validate(cfg);
    CHECK(cfg.horizon == 100);
    CHECK(paper_config(CostRegime::small, 0.99).horizon == 800);
    CHECK(paper_config(CostRegime::small, 0.95).horizon == 150);
    for (const auto& set : cfg.action_sets) {
      REQUIRE(set.size() == 5);
      CHECK(set.front().pools.size() == 1);
    }
    CHECK(cfg.action_sets[0][3].label() == "(1,2,3,-1)");
    CHECK(cfg.action_sets[1][0].label() == "(2,-1)");
    const VectorXd rho = nominal_traffic_intensity(cfg);
    CHECK(rho(0) == doctest::Approx(1.2 / (4 * 0.3)));
    CHECK(is_valid_state(cfg, cfg.init_state));
    CHECK(routing_costs(CostRegime::small)(1, 0) == doctest::Approx(0.3));
  }

  TEST_CASE("transition edge cases") {
    auto cfg = scaled_config(CostRegime::large);
    RandomStream arr(1, 0, StreamTag::arrivals), svc(1, 0, StreamTag::services);
    auto s = state_of(cfg, {3, 2, 1});
    s.Z.diagonal() << 2, 3, 4;
    const IntMatrix none = IntMatrix::Zero(3, 3);

    auto certain = cfg;
    certain.arrival_rates.setConstant(1e-300);
    certain.service_probs.setOnes();
    const auto gone = transition(certain, s, none, arr, svc);
    CHECK(gone.Z.isZero());
    CHECK(gone.X == s.X);

    IntMatrix too_many = none;
    too_many(0, 0) = 3;  // pool 1 holds 4 with 2 busy
    CHECK_THROWS_AS(transition(cfg, s, too_many, arr, svc), std::invalid_argument);
    CHECK_FALSE(is_feasible_assignment(cfg, s, too_many));
  }

  TEST_CASE("arrival and departure means") {
    const auto cfg = scaled_config(CostRegime::large);
    auto s = state_of(cfg, {0, 0, 0});
    s.Z << 2, 1, 0, 0, 3, 1, 1, 0, 4;
    IntMatrix U = IntMatrix::Zero(3, 3);
    U(0, 0) = 0;
    constexpr long n = 100'000;
    VectorXd sum_a = VectorXd::Zero(3), sq_a = VectorXd::Zero(3);
    Tabled sum_r = Tabled::Zero(3, 3), sq_r = Tabled::Zero(3, 3);
    RandomStream arr(9, 0, StreamTag::arrivals), svc(9, 0, StreamTag::services);
    for (long k = 0; k < n; ++k) {
      const auto next = transition(cfg, s, U, arr, svc);
      for (Index i = 0; i < 3; ++i) {
        const double a = next.X(i) - s.X(i);
        sum_a(i) += a;
        sq_a(i) += a * a;
        for (Index j = 0; j < 3; ++j) {
          const double r = s.Z(i, j) - next.Z(i, j);
          sum_r(i, j) += r;
          sq_r(i, j) += r * r;
        }
      }
    }
    for (Index i = 0; i < 3; ++i) {
      const double mean = sum_a(i) / n;
      const double se = std::sqrt((sq_a(i) / n - mean * mean) / n);
      CHECK(std::abs(mean - cfg.arrival_rates(i)) <= 3.0 * se);
      for (Index j = 0; j < 3; ++j) {
        const double rm = sum_r(i, j) / n;
        const double rse = std::sqrt(std::max(0.0, sq_r(i, j) / n - rm * rm) / n);
        CHECK(std::abs(rm - s.Z(i, j) * cfg.service_probs(i, j)) <= 3.0 * rse + 1e-12);
      }
    }
  }

  TEST_CASE("priority fill") {
    CHECK(apply_priority(5, {{0}}, ints({3, 9, 9})) == ints({3, 0, 0}));
    CHECK(apply_priority(5, {{0, 1}}, ints({3, 10, 0})) == ints({3, 2, 0}));
    CHECK(apply_priority(4, {{0, 1, 2}}, ints({0, 0, 0})) == ints({0, 0, 0}));
    CHECK(apply_priority(2, {{2, 0}}, ints({5, 5, 5})) == ints({0, 0, 2}));
  }

  TEST_CASE("benchmark assignment") {
    auto cfg = scaled_config(CostRegime::large);
    SUBCASE("nonpositive weights assign nothing") {
      const auto s = state_of(cfg, {4, 4, 4});
      CHECK(benchmark_assignment(cfg, s, Tabled::Constant(3, 3, -1.0)).isZero());
      CHECK(benchmark_assignment(cfg, s, Tabled::Zero(3, 3)).isZero());
    }
    SUBCASE("single pair") {
      QueueConfig one;
      one.arrival_rates = VectorXd::Constant(1, 1.0);
      one.service_probs = Tabled::Constant(1, 1, 0.5);
      one.pool_sizes = ints({6});
      one.holding = VectorXd::Constant(1, 1.0);
      one.routing = Tabled::Zero(1, 1);
      one.primary = ints({0});
      one.init_state = state_of(one, {0});
      one.action_sets = primary_first_actions(one);
      auto s = state_of(one, {9});
      s.Z(0, 0) = 2;
      CHECK(benchmark_assignment(one, s, Tabled::Constant(1, 1, 1.0))(0, 0) == 4);
      s.X(0) = 3;
      CHECK(benchmark_assignment(one, s, Tabled::Constant(1, 1, 1.0))(0, 0) == 3);
    }
    SUBCASE("random small instances against enumeration") {
      RandomStream rng(17, 0, StreamTag::fixture);
      for (int trial = 0; trial < 200; ++trial) {
        QueueConfig c = cfg;
        for (Index i = 0; i < 3; ++i)
          for (Index j = 0; j < 3; ++j) c.service_probs(i, j) = rng.below(4) == 0 ? 0.0 : 0.3;
        auto s = state_of(c, {static_cast<int>(rng.below(5)), static_cast<int>(rng.below(5)),
                              static_cast<int>(rng.below(5))});
        std::vector<int> cols(3);
        for (Index j = 0; j < 3; ++j) {
          s.Z(j, j) = static_cast<int>(rng.below(static_cast<std::uint32_t>(c.pool_sizes(j) + 1)));
          cols[j] = std::min(4, c.pool_sizes(j) - s.Z(j, j));
          s.Z(j, j) = c.pool_sizes(j) - cols[j];
        }
        Tabled w(3, 3);
        Mask usable(3, 3);
        for (Index i = 0; i < 3; ++i)
          for (Index j = 0; j < 3; ++j) {
            w(i, j) = std::round((4.0 * rng.uniform() - 1.0) * 10.0) / 10.0;
            usable(i, j) = c.service_probs(i, j) > 0.0;
          }
        const IntMatrix U = benchmark_assignment(c, s, w);
        CHECK(is_feasible_assignment(c, s, U));
        double value = 0.0;
        for (Index i = 0; i < 3; ++i)
          for (Index j = 0; j < 3; ++j) {
            value += w(i, j) * U(i, j);
            if (U(i, j) > 0) CHECK(usable(i, j));
          }
        const std::vector<int> rows{s.X(0), s.X(1), s.X(2)};
        CHECK(value == doctest::Approx(oracle::brute_force_transportation(w, rows, cols, usable)).epsilon(1e-12));
      }
    }
    SUBCASE("weights") {
      const auto s = state_of(cfg, {2, 0, 5});
      CHECK(cmu_weights(cfg)(1, 0) == doctest::Approx(-1.0));
      CHECK(max_pressure_weights(cfg, s)(2, 0) == doctest::Approx(5.0 - 1.0));
    }
  }

  TEST_CASE("feasibility modification") {
    auto cfg = scaled_config(CostRegime::large);
    RandomStream adm(3, 0, StreamTag::admission);
    SUBCASE("no conflict leaves requests unchanged") {
      const auto s = state_of(cfg, {3, 3, 3});
      IntMatrix d = IntMatrix::Zero(3, 3);
      d << 2, 1, 0, 0, 3, 0, 1, 0, 2;
      CHECK(feasibility_modification(cfg, s, d, adm) == d);
    }
    SUBCASE("primary first, then a uniform subset of the overflow") {
      cfg.pool_sizes << 20, 50, 60;
      const auto s = state_of(cfg, {15, 5, 5});
      IntMatrix d = IntMatrix::Zero(3, 3);
      d.col(0) << 15, 5, 5;
      std::vector<long> class2(6, 0);
      constexpr int trials = 20'000;
      for (int t = 0; t < trials; ++t) {
        const IntMatrix U = feasibility_modification(cfg, s, d, adm);
        REQUIRE(U(0, 0) == 15);
        REQUIRE(U(1, 0) + U(2, 0) == 5);
        ++class2[static_cast<std::size_t>(U(1, 0))];
      }
      // Hypergeometric(10, 5, 5) counts for class 2.
      const double pmf[6] = {1, 25, 100, 100, 25, 1};
      for (int k = 0; k <= 5; ++k) {
        const double p = pmf[k] / 252.0;
        const double expect = trials * p;
        CHECK(std::abs(class2[k] - expect) <= 4.0 * std::sqrt(trials * p * (1 - p)) + 1.0);
      }
    }
    SUBCASE("full pool returns everyone") {
      auto s = state_of(cfg, {3, 3, 0});
      s.Z.col(0) << 4, 0, 0;
      IntMatrix d = IntMatrix::Zero(3, 3);
      d.col(0) << 3, 2, 0;
      CHECK(feasibility_modification(cfg, s, d, adm).col(0).isZero());
    }
    SUBCASE("random requests always become feasible") {
      RandomStream rng(4, 0, StreamTag::fixture);
      for (int trial = 0; trial < 500; ++trial) {
        auto s = state_of(cfg, {static_cast<int>(rng.below(8)), static_cast<int>(rng.below(8)),
                                static_cast<int>(rng.below(8))});
        for (Index j = 0; j < 3; ++j) s.Z(j, j) = static_cast<int>(rng.below(static_cast<std::uint32_t>(cfg.pool_sizes(j) + 1)));
        IntMatrix d = IntMatrix::Zero(3, 3);
        for (Index i = 0; i < 3; ++i) {
          int left = s.X(i);
          for (Index j = 0; j < 3; ++j) {
            d(i, j) = static_cast<int>(rng.below(static_cast<std::uint32_t>(left + 1)));
            left -= d(i, j);
          }
        }
        const IntMatrix U = feasibility_modification(cfg, s, d, adm);
        CHECK(is_feasible_assignment(cfg, s, U));
        CHECK(((U.array() <= d.array()).all()));
        for (Index j = 0; j < 3; ++j) {
          const int room = cfg.pool_sizes(j) - s.Z.col(j).sum();
          CHECK(U(j, j) == std::min(d(j, j), room));
        }
      }
    }
  }

  TEST_CASE("quadratic features") {
    const VectorXd zero = VectorXd::Zero(4);
    const VectorXd phi0 = quadratic_features(zero);
    CHECK(phi0(0) == 1.0);
    CHECK(phi0.tail(16).isZero());
    const VectorXd phi = quadratic_features((VectorXd(2) << 2, 3).finished());
    CHECK(phi == (VectorXd(5) << 1, 4, 6, 6, 9).finished());
    CHECK(feature_dimension(3) == 17);
    const ClassModel model(scaled_config(CostRegime::large), 0);
    CHECK(model.features(model.initial()).size() == 17);
  }

  TEST_CASE("least squares recovers realizable targets") {
    const auto cfg = scaled_config(CostRegime::large);
    const ClassModel model(cfg, 1);
    VfaConfig vc;
    vc.states = 300;
    const auto states = sample_states(model, ClassPolicy::uniform(model), vc, 5);
    REQUIRE(states.size() == 300);
    VectorXd truth = VectorXd::Zero(17);
    truth(0) = 2.0;
    truth(1) = 0.5;
    truth(6) = -0.25;
    truth(16) = 0.125;
    VectorXd targets(300);
    for (std::size_t k = 0; k < states.size(); ++k) targets(static_cast<Index>(k)) = model.features(states[k]).dot(truth);
    const auto fit = fit_least_squares(model, states, targets, 1e-10);
    CHECK(fit.rmse < 1e-6);

    const auto flat = fit_least_squares(model, states, VectorXd::Constant(300, 7.0), 1e-10);
    CHECK(flat.theta(0) == doctest::Approx(7.0).epsilon(1e-6));
    CHECK(flat.theta.tail(16).cwiseAbs().maxCoeff() < 1e-4);
  }

  TEST_CASE("fitted Q generalizes to fresh states") {
    const auto cfg = scaled_config(CostRegime::large);
    const ClassModel model(cfg, 0);
    const auto policy = ClassPolicy::uniform(model);
    const VectorXd lambda = VectorXd::Constant(3, 1.0);
    VfaConfig vc;
    vc.states = 200;
    vc.q_replications = 10;
    const auto train = sample_states(model, policy, vc, 11);
    const VectorXd targets = estimate_class_q(model, policy, lambda, train, 1, vc, 12);
    const auto fit = fit_least_squares(model, train, targets, vc.ridge);
    CHECK(std::isfinite(fit.rmse));
    const auto fresh = sample_states(model, policy, vc, 13);
    const VectorXd check = estimate_class_q(model, policy, lambda, fresh, 1, vc, 14);
    double sq = 0.0;
    for (std::size_t k = 0; k < fresh.size(); ++k) {
      const double e = model.features(fresh[k]).dot(fit.theta) - check(static_cast<Index>(k));
      sq += e * e;
    }
    CHECK(std::sqrt(sq / fresh.size()) <= 2.0 * fit.rmse);
  }

  TEST_CASE("class view agrees with the joint system") {
    const auto cfg = scaled_config(CostRegime::large);
    RandomStream rng(21, 0, StreamTag::fixture);
    for (Index c = 0; c < 3; ++c) {
      const ClassModel model(cfg, c);
      for (int trial = 0; trial < 50; ++trial) {
        ClassState cs;
        cs.x = static_cast<int>(rng.below(10));
        QueueState joint = state_of(cfg, {0, 0, 0});
        joint.X(c) = cs.x;
        for (Index j = 0; j < 3; ++j) {
          cs.z[j] = static_cast<int>(rng.below(static_cast<std::uint32_t>(cfg.pool_sizes(j) + 1)));
          joint.Z(c, j) = cs.z[j];
        }
        for (Index a = 0; a < model.n_actions(); ++a) {
          int u[kMaxPools];
          model.assign(cs, a, u);
          const IntVector residual = cfg.pool_sizes - joint.Z.colwise().sum().transpose();
          const IntVector ref = apply_priority(cs.x, model.actions()[a], residual);
          IntMatrix U = IntMatrix::Zero(3, 3);
          for (Index j = 0; j < 3; ++j) {
            CHECK(u[j] == ref(j));
            U(c, j) = u[j];
          }
          ClassState next = cs;
          double occ[kMaxPools];
          RandomStream arr(1, 0, StreamTag::arrivals), svc(1, 0, StreamTag::services);
          const double cost = model.step(next, u, VectorXd(), occ, arr, svc);
          CHECK(cost == doctest::Approx(period_cost(cfg, joint, U)));
        }
      }
    }
  }

  TEST_CASE("threshold scan") {
    const auto cfg = scaled_config(CostRegime::large);
    const ClassModel model(cfg, 0);
    ClassPolicy never = ClassPolicy::uniform(model);
    never.weights.col(0).tail(4).setConstant(10.0);  // every overflow action is penalized
    const auto flat = threshold_scan(model, never, {0, 0, 0}, 0, 0, 4, 30);
    for (int t : flat) CHECK(t == kNoThreshold);

    ClassPolicy always = ClassPolicy::uniform(model);
    always.weights.col(0).setConstant(10.0);
    always.weights(1, 0) = 0.0;  // (1,2,-1)
    const auto curve = threshold_scan(model, always, {0, 0, 0}, 0, 0, 4, 30);
    // Overflow starts one customer past the primary pool's free servers.
    for (int z = 0; z <= 4; ++z) CHECK(curve[z] == 4 - z + 1);
    CHECK_THROWS_AS(threshold_scan(model, always, {0, 0}, 0, 0, 4, 30), std::invalid_argument);
  }

  TEST_CASE("benchmark schedulers never break hard constraints") {
    const auto cfg = scaled_config(CostRegime::small);
    for (SchedulerKind kind : {SchedulerKind::cmu, SchedulerKind::max_pressure}) {
      const auto ev = evaluate_scheduler(cfg, kind, nullptr, 20, 5);
      CHECK(ev.hard_violations == 0);
      CHECK(ev.periods == 20 * cfg.horizon);
      CHECK(std::isfinite(ev.mean));
    }
    std::vector<ClassPolicy> uniform;
    for (Index c = 0; c < 3; ++c) uniform.push_back(ClassPolicy::uniform(ClassModel(cfg, c)));
    const auto pd = evaluate_scheduler(cfg, SchedulerKind::primal_dual, &uniform, 20, 5);
    CHECK(pd.hard_violations == 0);
    const auto again = evaluate_scheduler(cfg, SchedulerKind::primal_dual, &uniform, 20, 5, 2);
    CHECK(again.mean == pd.mean);
  }

  TEST_CASE("simulated states stay valid") {
    const auto cfg = scaled_config(CostRegime::large);
    RandomStream arr(2, 0, StreamTag::arrivals), svc(2, 0, StreamTag::services), adm(2, 0, StreamTag::admission);
    QueueState s = cfg.init_state;
    for (int t = 0; t < 500; ++t) {
      IntMatrix desired = IntMatrix::Zero(3, 3);
      for (Index i = 0; i < 3; ++i) desired.row(i) = apply_priority(s.X(i), cfg.action_sets[i][4], cfg.pool_sizes).transpose();
      const IntMatrix U = feasibility_modification(cfg, s, desired, adm);
      s = transition(cfg, s, U, arr, svc);
      REQUIRE(state_ok(cfg, s));
    }
  }
}
