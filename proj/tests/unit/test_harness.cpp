#include "helpers.hpp"

#include "cmdp/harness.hpp"
#include "cmdp/lp_oracle.hpp"
#include "cmdp/serialization.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace cmdp;
using namespace cmdp::harness;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("cmdp_unit_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_SUITE("harness") {
  TEST_CASE("config parsing") {
    const auto cfg = parse_config(R"(
kind = "inventory"
seed = 7
[solver]
step = "inverse-sqrt"
eta = 0.2
iterations = 50
[monte_carlo]
replications = 30
horizon = 12
[inventory]
preset = "reduced"
budget = 4.5
)");
    CHECK(cfg.kind == ExperimentKind::inventory);
    CHECK(cfg.seed.value() == 7);
    CHECK(cfg.solver.schedule.kind == StepKind::inverse_sqrt);
    CHECK(cfg.inventory_options.iterations == 50);
    CHECK(cfg.inventory_options.replications == 30);
    CHECK(cfg.inventory_options.horizon == 12);
    CHECK(cfg.inventory.budget == 4.5);
    CHECK(cfg.inventory.upper == inventory::reduced_config().upper);

    const auto q = parse_config(R"(
kind = "queue"
seed = 1
[queue]
regime = "small"
iterations = 3
[queue.vfa]
states = 40
[queue.threshold]
class = 2
pool = 3
)");
    CHECK(q.queue.regime == queue::CostRegime::small);
    CHECK(q.queue.options.vfa.states == 40);
    CHECK(q.queue.threshold_class == 1);
    CHECK(q.queue.threshold_pool == 2);
    CHECK_FALSE(q.queue.gated);
    CHECK(parse_config("kind = \"queue\"\n[queue]\nscale = \"paper\"\n").queue.gated);
  }

  TEST_CASE("config errors") {
    CHECK_THROWS_AS(parse_config("seed = 1"), ConfigError);
    CHECK_THROWS_AS(parse_config("kind = \"nonsense\""), std::exception);
    CHECK_THROWS_WITH_AS(parse_config("kind = \"inventory\"\n[solver]\nsteps = 3\n"),
                         doctest::Contains("solver.steps"), ConfigError);
    CHECK_THROWS_AS(parse_config("kind = \"inventory\"\n[solver]\neta = -1.0\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("kind = \"inventory\"\n[solver]\nstep = \"cubic\"\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("kind = = 3"), ConfigError);
    CHECK_THROWS_AS(parse_config("kind = \"oracle-check\"\n[oracle_check]\nfixture = \"no/such.json\"\n"), ConfigError);
    CHECK_THROWS_AS(load_config("/nonexistent/config.toml"), ConfigError);
  }

  TEST_CASE("rate regression") {
    std::vector<double> exact, mismatch;
    for (long T = 1; T <= 500; ++T) {
      exact.push_back(3.0 + 2.0 / static_cast<double>(T));
      mismatch.push_back(3.0 + 2.0 / std::sqrt(static_cast<double>(T)));
    }
    const auto fit = rate_regression(exact, StepKind::constant);
    CHECK(fit.slope == doctest::Approx(2.0).epsilon(1e-10));
    CHECK(fit.intercept == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(fit.r2 == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(fit.points == 400);

    const auto sqrt_fit = rate_regression(mismatch, StepKind::inverse_sqrt);
    CHECK(sqrt_fit.r2 == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(rate_regression(mismatch, StepKind::constant).r2 < 0.995);

    CHECK_THROWS(rate_regression(std::vector<double>(40, 1.0), StepKind::constant));
    CHECK_THROWS(rate_regression(std::vector<double>(100, 1.0), StepKind::constant));
  }

  TEST_CASE("serialization round trips") {
    const auto m = testing::random_instance(4, 3, 2, 5);
    const auto back = cmdp_from_json(Json::parse(to_json(m).dump()));
    CHECK(back.n_states == 4);
    CHECK((Eigen::MatrixXd(back.kernel) - Eigen::MatrixXd(m.kernel)).cwiseAbs().maxCoeff() == 0.0);
    CHECK((back.cost - m.cost).cwiseAbs().maxCoeff() == 0.0);
    CHECK((back.aux_costs[1] - m.aux_costs[1]).cwiseAbs().maxCoeff() == 0.0);
    CHECK(back.thresholds == m.thresholds);
    CHECK(back.discount == m.discount);

    const auto inv = inventory::reduced_config();
    const auto wc = inventory::as_weakly_coupled(inv);
    const auto wc_back = wc_cmdp_from_json(Json::parse(to_json(wc).dump()));
    REQUIRE(wc_back.n_subproblems() == 2);
    CHECK(wc_back.thresholds == wc.thresholds);
    CHECK((wc_back.subproblems[1].allowed == wc.subproblems[1].allowed).all());
    CHECK(solve_lp(product_cmdp(wc_back)).c_star == doctest::Approx(solve_lp(product_cmdp(wc)).c_star).epsilon(1e-12));

    const auto sol = solve_lp(m);
    const Json js = to_json(sol);
    CHECK(js.at("schema") == "cmdp-solution-v1");
    CHECK(js.at("c_star").get<double>() == sol.c_star);

    Json broken = to_json(m);
    broken["kernel"][0][0][0] = 5.0;
    CHECK_THROWS(cmdp_from_json(broken));
    broken = to_json(m);
    broken["schema"] = "other";
    CHECK_THROWS(cmdp_from_json(broken));
  }

  TEST_CASE("theorem check") {
    TheoremCheckSpec spec;
    spec.grid = {100, 1000};
    SUBCASE("four-state K=1 fixture") {
      const auto m = testing::random_instance(4, 2, 1, 99);
      const auto report = theorem_check(m, spec, 0);
      CHECK(report.rows.size() == 4);
      CHECK(report.passed());
      CHECK(report.failures().empty());
    }
    SUBCASE("vacuous constraints") {
      RandomCmdpSpec r;
      r.vacuous = true;
      const auto m = random_cmdp(r, 3);
      const auto report = theorem_check(m, spec, 1);
      CHECK(report.passed());
      for (const auto& row : report.rows) CHECK(row.violation == 0.0);
      std::ostringstream csv;
      write_theorem_csv(csv, report);
      CHECK(csv.str().rfind("fixture,regime,T,violation", 0) == 0);
    }
    SUBCASE("fixtures respect the shape limits") {
      spec.fixtures = 6;
      const auto fx = theorem_fixtures(spec, 5);
      CHECK(fx.size() == 6);
      for (const auto& m : fx) {
        CHECK(m.n_states >= 2);
        CHECK(m.n_states <= spec.max_shape.states);
        CHECK(m.n_actions <= spec.max_shape.actions);
        CHECK(m.n_constraints() <= spec.max_shape.constraints);
      }
    }
  }

  TEST_CASE("runs are reproducible") {
    ExperimentConfig cfg = parse_config(R"(
kind = "random-cmdp"
seed = 4
[solver]
iterations = 60
[random_cmdp]
states = 5
actions = 3
)");
    std::ostringstream log;
    const auto a = scratch("run_a"), b = scratch("run_b");
    REQUIRE(cli_run(cfg, {std::nullopt, a.string(), std::nullopt, false}, log) == 0);
    REQUIRE(cli_run(cfg, {std::nullopt, b.string(), 2, false}, log) == 0);
    for (const char* f : {"trail.csv", "violations.csv", "instance.json", "solution.json", "summary.json"}) {
      CHECK_MESSAGE(fs::exists(a / f), f);
      CHECK(slurp(a / f) == slurp(b / f));
    }
    const auto header = slurp(a / "trail.csv").substr(0, trail_csv_header(1).size());
    CHECK(header == trail_csv_header(1));
  }

  TEST_CASE("exit codes") {
    std::ostringstream log;
    ExperimentConfig no_seed = parse_config("kind = \"random-cmdp\"\n");
    CHECK(cli_run(no_seed, {std::nullopt, scratch("noseed").string(), std::nullopt, false}, log) == 2);

    const auto dir = scratch("oracle");
    const auto m = testing::random_instance(3, 2, 1, 8);
    write_json_file((dir / "fixture.json").string(), to_json(m));
    std::ofstream(dir / "check.toml") << "kind = \"oracle-check\"\nseed = 1\n[oracle_check]\nfixture = \"fixture.json\"\n"
                                         "expected = 1000.0\n";
    const auto cfg = load_config((dir / "check.toml").string());
    CHECK(cli_run(cfg, {std::nullopt, (dir / "out").string(), std::nullopt, false}, log) == 3);
    CHECK(fs::exists(dir / "out" / "solution.json"));

    ExperimentConfig gated = parse_config("kind = \"queue\"\nseed = 1\n[queue]\nscale = \"paper\"\n");
    CHECK(cli_run(gated, {std::nullopt, scratch("gated").string(), std::nullopt, false}, log) == 2);
  }
}
