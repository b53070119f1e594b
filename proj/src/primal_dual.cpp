#include "cmdp/primal_dual.hpp"

#include "cmdp/random_stream.hpp"

#include <cstdio>
#include <memory>
#include <stdexcept>

namespace cmdp {

std::string to_string(StepKind kind) { return kind == StepKind::constant ? "constant" : "inverse-sqrt"; }

StepKind parse_step_kind(const std::string& text) {
  if (text == "constant") return StepKind::constant;
  if (text == "inverse-sqrt" || text == "inverse_sqrt") return StepKind::inverse_sqrt;
  throw std::invalid_argument("unknown step schedule '" + text + "'");
}

double step_sum(const StepSchedule& schedule, long T) {
  double total = 0.0;
  for (long m = 0; m < T; ++m) total += schedule.eta(m);
  return total;
}

double step_square_sum(const StepSchedule& schedule, long T) {
  double total = 0.0;
  for (long m = 0; m < T; ++m) total += schedule.eta(m) * schedule.eta(m);
  return total;
}

ScheduleConstants schedule_constants(const StepSchedule& schedule, const std::vector<long>& grid) {
  if (grid.empty()) throw std::invalid_argument("schedule_constants: empty grid");
  ScheduleConstants out;
  out.kappa1 = infinity<double>();
  for (long T : grid) {
    if (T < 2) throw std::invalid_argument("schedule_constants: T must be at least 2");
    out.kappa1 = std::min(out.kappa1, step_sum(schedule, T) / std::sqrt(static_cast<double>(T)));
    out.kappa2 = std::max(out.kappa2, step_square_sum(schedule, T) / std::log(static_cast<double>(T)));
  }
  return out;
}

TheoremBounds theorem1_bounds(const TheoremConstants& k, const StepSchedule& schedule, long T, double r,
                              double discount) {
  if (T < 1 || !(r > 0.0) || !(discount > 0.0 && discount < 1.0))
    throw std::invalid_argument("theorem1_bounds: invalid T, r or discount");
  const double G2 = k.G * k.G;
  const double inv = 1.0 / (1.0 - discount);
  const double Td = static_cast<double>(T);
  TheoremBounds b;
  if (schedule.kind == StepKind::constant) {
    const double eta = schedule.base;
    b.violation = (G2 + inv * k.phi0) / (2.0 * r * Td * eta) + (0.5 + inv / 8.0) * G2 * eta / (2.0 * r);
    b.gap_upper = (inv * k.phi0 + 0.5 * k.lambda0_norm * k.lambda0_norm) / (Td * eta) + 5.0 * G2 * eta * inv / 8.0;
  } else {
    if (!(k.kappa1 > 0.0) || !(k.kappa2 > 0.0))
      throw std::invalid_argument("theorem1_bounds: decreasing steps need positive kappa1 and kappa2");
    const double logT = std::log(Td);
    const double denom = (1.0 - discount) * k.kappa1 * std::sqrt(Td);
    b.violation = (G2 * (1.0 + 5.0 / 8.0 * k.kappa2 * logT) + k.phi0) / (2.0 * r * denom);
    b.gap_upper = (5.0 * G2 / 8.0 * k.kappa2 * logT + k.phi0 + 0.5 * k.lambda0_norm * k.lambda0_norm) / denom;
  }
  b.gap_lower = -k.lambda_star_norm * b.violation;
  return b;
}

Evaluation ExactEvaluator::evaluate(const TabularCMDPd& cmdp, const StationaryPolicyd& policy,
                                    const VectorXd& lambda, std::uint64_t) const {
  Evaluation ev;
  ev.q = evaluate_policy_exact(cmdp, policy, lambda).q;
  const PolicyCostsd costs = costs_of_policy(cmdp, policy);
  ev.objective = costs.objective;
  ev.constraints = costs.constraints;
  ev.se_constraints = VectorXd::Zero(costs.constraints.size());
  return ev;
}

void update_running(IterationRecord& rec, const VectorXd& thresholds, WeightedAverage& cost_avg,
                    WeightedAverage& violation_avg) {
  rec.iterate_violation = violation_norm(rec.constraint_vals, thresholds);
  cost_avg.add(rec.eta, rec.objective, rec.constraint_vals);
  violation_avg.add(rec.eta, rec.iterate_violation, VectorXd());
  rec.running_avg_objective = cost_avg.scalar();
  rec.running_violation = violation_norm(cost_avg.vector(), thresholds);
  rec.running_avg_iterate_violation = violation_avg.scalar();
}

void validate_config(const SolverConfig& config, Index n_constraints) {
  if (config.iterations < 1) throw std::invalid_argument("solver config: iterations must be positive");
  if (!(config.schedule.base > 0.0)) throw std::invalid_argument("solver config: step base must be positive");
  if (!(config.domain.slack > 0.0)) throw std::invalid_argument("solver config: slack r must be positive");
  if (config.domain.bound < 0.0) throw std::invalid_argument("solver config: M must be nonnegative");
  if (config.initial_lambda.size() != 0) {
    if (config.initial_lambda.size() != n_constraints)
      throw std::invalid_argument("solver config: initial lambda has wrong dimension");
    if (!in_domain(config.initial_lambda, config.domain))
      throw std::invalid_argument("solver config: initial lambda lies outside the dual domain");
  }
}

namespace {

double max_abs_allowed(const TabularCMDPd& cmdp, const Tabled& q) {
  double out = 0.0;
  for (Index s = 0; s < cmdp.n_states; ++s)
    for (Index a = 0; a < cmdp.n_actions; ++a)
      if (cmdp.is_allowed(s, a)) out = std::max(out, std::abs(q(s, a)));
  return out;
}

}  // namespace

SolverResult run(const TabularCMDPd& cmdp, const SolverConfig& config, const PolicyEvaluator& evaluator) {
  require_valid(cmdp);
  validate_config(config, cmdp.n_constraints());
  StationaryPolicyd policy = config.initial_policy ? *config.initial_policy : uniform_policy(cmdp);
  if (!is_valid_policy(cmdp, policy) || !has_full_support(cmdp, policy))
    throw std::invalid_argument("solver config: initial policy must be valid with full support");

  DualStated dual;
  dual.domain = config.domain;
  dual.lambda = config.initial_lambda.size() ? config.initial_lambda : VectorXd::Zero(cmdp.n_constraints());

  SolverResult result;
  result.trail.reserve(static_cast<std::size_t>(config.iterations));
  std::vector<double> weights;
  VectorXd lambda_sum = VectorXd::Zero(cmdp.n_constraints());
  WeightedAverage cost_avg, violation_avg;

  for (long m = 0; m < config.iterations; ++m) {
    const double eta = config.schedule.eta(m);
    Evaluation ev;
    try {
      ev = evaluator.evaluate(cmdp, policy, dual.lambda, derive_seed(config.seed, static_cast<std::uint64_t>(m)));
    } catch (const std::exception& e) {
      throw std::runtime_error("evaluation failed at iteration " + std::to_string(m) + ": " + e.what());
    }
    IterationRecord rec;
    rec.m = m;
    rec.eta = eta;
    rec.lambda = dual.lambda;
    rec.objective = ev.objective;
    rec.constraint_vals = ev.constraints;
    rec.se_objective = ev.se_objective;
    const VectorXd subgrad = ev.constraints - cmdp.thresholds;
    rec.max_abs_q = max_abs_allowed(cmdp, ev.q);
    rec.subgrad_norm = subgrad.norm();
    update_running(rec, cmdp.thresholds, cost_avg, violation_avg);
    result.trail.push_back(rec);

    weights.push_back(eta);
    lambda_sum += eta * dual.lambda;
    if (config.keep_members) result.mixing.members.push_back(policy);

    if (m + 1 < config.iterations) {
      policy = policy_update(ev.q, policy, eta);
      dual = dual_update(dual, subgrad, eta);
    }
  }

  const double total = cost_avg.total();
  result.averaged_lambda = lambda_sum / total;
  result.averaged_objective = cost_avg.scalar();
  result.averaged_constraints = cost_avg.vector();
  result.final_policy = policy;
  result.final_lambda = dual.lambda;
  if (config.keep_members) {
    result.mixing.weights = Eigen::Map<const VectorXd>(weights.data(), static_cast<Index>(weights.size())) / total;
    result.stationary = mixing_to_stationary(cmdp, result.mixing);
  }
  return result;
}

std::string trail_csv_header(Index K) {
  std::string h = "m,eta";
  for (Index k = 0; k < K; ++k) h += ",lambda_" + std::to_string(k + 1);
  h += ",objective";
  for (Index k = 0; k < K; ++k) h += ",D_" + std::to_string(k + 1);
  h += ",running_avg_objective,running_violation,se_objective";
  return h;
}

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};

std::unique_ptr<std::FILE, FileCloser> open_for_write(const std::string& path) {
  std::unique_ptr<std::FILE, FileCloser> f(std::fopen(path.c_str(), "w"));
  if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
  return f;
}

}  // namespace

void write_trail_csv(const std::string& path, const std::vector<IterationRecord>& trail) {
  auto f = open_for_write(path);
  const Index K = trail.empty() ? 0 : trail.front().lambda.size();
  std::fprintf(f.get(), "%s\n", trail_csv_header(K).c_str());
  for (const auto& r : trail) {
    std::fprintf(f.get(), "%ld,%.17g", r.m, r.eta);
    for (Index k = 0; k < K; ++k) std::fprintf(f.get(), ",%.17g", r.lambda(k));
    std::fprintf(f.get(), ",%.17g", r.objective);
    for (Index k = 0; k < K; ++k) std::fprintf(f.get(), ",%.17g", r.constraint_vals(k));
    std::fprintf(f.get(), ",%.17g,%.17g,%.17g\n", r.running_avg_objective, r.running_violation, r.se_objective);
  }
}

void write_violation_csv(const std::string& path, const std::vector<IterationRecord>& trail) {
  auto f = open_for_write(path);
  std::fprintf(f.get(), "m,averaged_policy_violation,iterate_violation,running_avg_iterate_violation\n");
  for (const auto& r : trail)
    std::fprintf(f.get(), "%ld,%.17g,%.17g,%.17g\n", r.m, r.running_violation, r.iterate_violation,
                 r.running_avg_iterate_violation);
}

}  // namespace cmdp
