#pragma once

// Experiment configuration, orchestration and artifact emission.

#include "cmdp/inventory.hpp"
#include "cmdp/primal_dual.hpp"
#include "cmdp/queue.hpp"

#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace cmdp::harness {

/// Malformed or incomplete configuration (exit code 2).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A run finished but an invariant or acceptance check failed (exit code 3).
struct CheckFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class ExperimentKind { inventory, queue, random_cmdp, oracle_check, theorem_check };

std::string to_string(ExperimentKind kind);
ExperimentKind parse_experiment_kind(const std::string& text);

struct RandomCmdpSpec {
  Index states = 4;
  Index actions = 2;
  Index constraints = 1;
  double discount = 0.8;
  /// Thresholds are D(uniform) + margin, so the uniform policy is a Slater point.
  double margin = 0.05;
  /// Vacuous constraints: thresholds above every attainable value.
  bool vacuous = false;
};

/// Random dense CMDP with costs in [0, 1], deterministic for a seed.
TabularCMDPd random_cmdp(const RandomCmdpSpec& spec, std::uint64_t seed);

struct SolverSettings {
  StepSchedule schedule{StepKind::constant, 0.1};
  long iterations = 100;
  double slack = 1.0;
  std::optional<double> bound;
};

struct TheoremCheckSpec {
  std::vector<long> grid{100, 1000, 10000};
  long fixtures = 5;
  RandomCmdpSpec max_shape{6, 3, 2, 0.8, 0.05, false};
  double constant_eta = 0.05;
  double inverse_sqrt_base = 0.5;
  /// Optional cmdp-v1 file replacing the random fixtures.
  std::string fixture;
};

struct OracleCheckSpec {
  /// cmdp-v1 or wc-cmdp-v1 file; the inventory preset is used when empty.
  std::string fixture;
  std::string inventory_preset = "paper";
  /// Unnormalized target and tolerance; unchecked when unset.
  std::optional<double> expected;
  double tolerance = 0.02;
};

struct QueueSettings {
  std::string scale = "scaled";  // scaled | paper
  queue::CostRegime regime = queue::CostRegime::large;
  double discount = 0.9;
  queue::QueueExperimentOptions options;
  /// Full-size runs need an explicit opt-in.
  bool gated = false;
  /// Threshold curve: class and pool (0-based) and the scanned range of Z.
  Index threshold_class = 0;
  Index threshold_pool = 0;
  int threshold_lo = 0;
  int threshold_hi = -1;  // pool size when negative
  int threshold_max_queue = 60;
};

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::inventory;
  std::optional<std::uint64_t> seed;
  std::string output_dir;
  int workers = 0;
  std::string source_path;

  inventory::InventoryConfig inventory;
  inventory::ExperimentOptions inventory_options;
  QueueSettings queue;
  RandomCmdpSpec random;
  SolverSettings solver;
  TheoremCheckSpec theorem;
  OracleCheckSpec oracle;
};

/// Parses TOML text; relative fixture paths resolve against `base_dir`.
ExperimentConfig parse_config(const std::string& text, const std::string& base_dir = ".");
ExperimentConfig load_config(const std::string& path);

struct RateFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
  long points = 0;
};

/// OLS of the running averaged cost on 1/T (constant) or 1/sqrt(T)
/// (inverse-sqrt) over the last 80% of the trail.
RateFit rate_regression(const std::vector<double>& running_avg, StepKind regime);
RateFit rate_regression(const std::vector<IterationRecord>& trail, StepKind regime);

struct TheoremCheckRow {
  long fixture = 0;
  StepKind regime = StepKind::constant;
  long T = 0;
  double violation = 0.0;
  double violation_bound = 0.0;
  double gap = 0.0;
  double gap_upper = 0.0;
  double gap_lower = 0.0;
  bool pass = false;
};

struct TheoremCheckReport {
  std::vector<TheoremCheckRow> rows;
  bool passed() const;
  /// "(T, quantity, measured, bound)" for each failed comparison.
  std::vector<std::string> failures() const;
};

/// Random fixtures with shapes drawn up to spec.max_shape (at least 2 states
/// and 2 actions), deterministic for a seed.
std::vector<TabularCMDPd> theorem_fixtures(const TheoremCheckSpec& spec, std::uint64_t seed);

/// Exact-evaluator runs on one instance for both step regimes; bounds use
/// constants measured on the same runs.
TheoremCheckReport theorem_check(const TabularCMDPd& cmdp, const TheoremCheckSpec& spec, long fixture_id = 0);

void write_theorem_csv(std::ostream& out, const TheoremCheckReport& report);

struct RunOptions {
  std::optional<std::uint64_t> seed;
  std::string output_dir;
  std::optional<int> workers;
  bool allow_long = false;
};

/// Runs one experiment and writes its artifacts; returns the process exit code.
int cli_run(const ExperimentConfig& config, const RunOptions& options, std::ostream& log);

}  // namespace cmdp::harness
