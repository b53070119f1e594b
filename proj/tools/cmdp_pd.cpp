// cmdp_pd: experiment runner.
//   cmdp_pd run --config FILE [--seed N] [--out DIR] [--workers N] [--long]
//   cmdp_pd solve-lp --instance FILE [--out FILE]
//   cmdp_pd accept NAME|all [--workers N]

#include "acceptance/criteria.hpp"
#include "cmdp/harness.hpp"
#include "cmdp/lp_oracle.hpp"
#include "cmdp/serialization.hpp"
#include "cmdp/weakly_coupled.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 2;
constexpr int kCheckFailed = 3;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Primal-dual solver for constrained MDPs"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  std::uint64_t seed = 0;
  int workers = 0;
  bool allow_long = false;
  auto* run = app.add_subcommand("run", "run an experiment described by a TOML config");
  run->add_option("--config", config_path, "experiment config (TOML)")->required();
  auto* seed_opt = run->add_option("--seed", seed, "RNG seed (overrides the config)");
  run->add_option("--out", out_dir, "output directory");
  auto* workers_opt = run->add_option("--workers", workers, "worker threads (default: CMDP_PD_WORKERS or 1)");
  run->add_flag("--long", allow_long, "allow gated long-running experiments");

  std::string instance_path, solution_path;
  auto* lp = app.add_subcommand("solve-lp", "solve the occupation-measure LP of a cmdp-v1 or wc-cmdp-v1 file");
  lp->add_option("--instance", instance_path, "instance JSON")->required()->check(CLI::ExistingFile);
  lp->add_option("--out", solution_path, "solution JSON (stdout when omitted)");

  std::string criterion;
  int accept_workers = 0;
  auto* accept = app.add_subcommand("accept", "run an acceptance criterion ('all' for every one)");
  accept->add_option("criterion", criterion, "criterion name")->required();
  accept->add_option("--workers", accept_workers, "worker threads");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  if (*run) {
    cmdp::harness::ExperimentConfig cfg;
    try {
      cfg = cmdp::harness::load_config(config_path);
    } catch (const cmdp::harness::ConfigError& e) {
      std::cerr << "config error: " << e.what() << "\n" << run->help();
      return kConfigError;
    }
    cmdp::harness::RunOptions opt;
    if (*seed_opt) opt.seed = seed;
    if (*workers_opt) opt.workers = workers;
    opt.output_dir = out_dir;
    opt.allow_long = allow_long;
    return cmdp::harness::cli_run(cfg, opt, std::cerr);
  }

  if (*lp) {
    try {
      const cmdp::Json j = cmdp::read_json_file(instance_path);
      const cmdp::TabularCMDPd m = j.value("schema", "") == "wc-cmdp-v1"
                                       ? cmdp::product_cmdp(cmdp::wc_cmdp_from_json(j))
                                       : cmdp::cmdp_from_json(j);
      const cmdp::OracleSolution sol = cmdp::solve_lp(m);
      if (solution_path.empty())
        std::cout << cmdp::to_json(sol).dump(2) << "\n";
      else
        cmdp::write_json_file(solution_path, cmdp::to_json(sol));
      return sol.status == cmdp::LpStatus::optimal ? kOk : kCheckFailed;
    } catch (const std::invalid_argument& e) {
      std::cerr << "invalid instance: " << e.what() << "\n";
      return kConfigError;
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      return kCheckFailed;
    }
  }

  std::vector<std::string> names;
  if (criterion == "all")
    for (const auto& c : acceptance::criteria()) names.push_back(c.name);
  else
    names.push_back(criterion);
  bool all = true;
  for (const auto& name : names) {
    acceptance::Outcome out;
    try {
      out = acceptance::run_criterion(name, std::cerr, accept_workers);
    } catch (const std::out_of_range& e) {
      std::cerr << e.what() << "; known criteria:";
      for (const auto& c : acceptance::criteria()) std::cerr << " " << c.name;
      std::cerr << "\n";
      return kConfigError;
    }
    std::cout << acceptance::format_line(name, out) << std::endl;
    all = all && out.pass;
  }
  return all ? kOk : kCheckFailed;
}
