#pragma once

#include "cmdp/tabular.hpp"

#include <algorithm>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace cmdp {

// ---------------------------------------------------------------------------
// Dual domain

/// {lambda >= 0, ||lambda|| <= radius} with radius = M + slack.
template <typename Scalar>
struct DualDomain {
  Scalar bound = Scalar(0);  // M
  Scalar slack = Scalar(1);  // r
  Scalar radius() const { return bound + slack; }
};

template <typename Scalar>
struct DualState {
  Vector<Scalar> lambda;
  DualDomain<Scalar> domain;
  /// lambda + eta * subgrad before projection, kept for diagnostics.
  Vector<Scalar> unprojected;
};

using DualDomaind = DualDomain<double>;
using DualStated = DualState<double>;

/// Euclidean projection onto the domain: clip to the orthant, then scale into the ball.
template <typename Derived, typename Scalar = typename Derived::Scalar>
Vector<Scalar> project_lambda(const Eigen::MatrixBase<Derived>& v, const DualDomain<Scalar>& domain) {
  if (!(domain.slack > Scalar(0))) throw std::invalid_argument("project_lambda: slack must be positive");
  Vector<Scalar> out = v.cwiseMax(Scalar(0));
  const Scalar norm = out.norm();
  const Scalar radius = domain.radius();
  if (norm > radius) out *= radius / norm;
  return out;
}

template <typename Scalar>
bool in_domain(const Vector<Scalar>& lambda, const DualDomain<Scalar>& domain, Scalar tol = Scalar(1e-12)) {
  return (lambda.array() >= Scalar(0)).all() && lambda.norm() <= domain.radius() + tol;
}

template <typename Scalar, typename Derived>
DualState<Scalar> dual_update(const DualState<Scalar>& state, const Eigen::MatrixBase<Derived>& subgrad, Scalar eta) {
  if (!(eta > Scalar(0))) throw std::invalid_argument("dual_update: eta must be positive");
  if (subgrad.size() != state.lambda.size()) throw std::invalid_argument("dual_update: dimension mismatch");
  DualState<Scalar> next;
  next.domain = state.domain;
  next.unprojected = state.lambda + eta * subgrad;
  next.lambda = project_lambda(next.unprojected, state.domain);
  return next;
}

/// ||[D - q]^+||_2
template <typename D1, typename D2>
typename D1::Scalar violation_norm(const Eigen::MatrixBase<D1>& d, const Eigen::MatrixBase<D2>& q) {
  return (d - q).cwiseMax(typename D1::Scalar(0)).norm();
}

/// -(C - c_tilde) / max_k (D_k - q_k) for a strictly feasible policy.
template <typename Scalar>
Scalar slater_lambda_bound(Scalar c_tilde, const PolicyCosts<Scalar>& slater, const Vector<Scalar>& q) {
  if (slater.constraints.size() != q.size() || q.size() == 0)
    throw std::invalid_argument("slater_lambda_bound: dimension mismatch");
  for (Index k = 0; k < q.size(); ++k)
    if (!(slater.constraints(k) < q(k)))
      throw std::invalid_argument("slater_lambda_bound: constraint " + std::to_string(k) +
                                  " is not strictly satisfied");
  const Scalar gap = (slater.constraints - q).maxCoeff();
  return -(slater.objective - c_tilde) / gap;
}

// ---------------------------------------------------------------------------
// Policy update

constexpr double kProbabilityFloor = 1e-300;

/// pi'(.|s) proportional to pi(.|s) exp(-eta Q(s,.)), computed in log space.
/// Entries where pi is exactly zero (masked actions) stay zero.
template <typename Scalar>
StationaryPolicy<Scalar> policy_update(const Table<Scalar>& q, const StationaryPolicy<Scalar>& policy, Scalar eta) {
  if (eta < Scalar(0)) throw std::invalid_argument("policy_update: eta must be nonnegative");
  if (q.rows() != policy.probs.rows() || q.cols() != policy.probs.cols())
    throw std::invalid_argument("policy_update: shape mismatch");
  StationaryPolicy<Scalar> out{Table<Scalar>::Zero(q.rows(), q.cols())};
  Vector<Scalar> logits(q.cols());
  for (Index s = 0; s < q.rows(); ++s) {
    Scalar top = -infinity<Scalar>();
    for (Index a = 0; a < q.cols(); ++a) {
      const Scalar p = policy.probs(s, a);
      logits(a) = p > Scalar(0) ? std::log(p) - eta * q(s, a) : -infinity<Scalar>();
      top = std::max(top, logits(a));
    }
    Scalar total = 0;
    for (Index a = 0; a < q.cols(); ++a) {
      if (policy.probs(s, a) > Scalar(0)) {
        out.probs(s, a) = std::max(std::exp(logits(a) - top), Scalar(kProbabilityFloor));
        total += out.probs(s, a);
      }
    }
    out.probs.row(s) /= total;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Step schedules

enum class StepKind { constant, inverse_sqrt };

struct StepSchedule {
  StepKind kind = StepKind::constant;
  double base = 0.1;

  /// eta_m = base or base / sqrt(m + 1).
  double eta(long m) const {
    return kind == StepKind::constant ? base : base / std::sqrt(static_cast<double>(m + 1));
  }
};

std::string to_string(StepKind kind);
StepKind parse_step_kind(const std::string& text);

/// Sum of eta_m for m < T.
double step_sum(const StepSchedule& schedule, long T);
/// Sum of eta_m^2 for m < T.
double step_square_sum(const StepSchedule& schedule, long T);

struct ScheduleConstants {
  double kappa1 = 0.0;
  double kappa2 = 0.0;
};

/// kappa1 = min_T sum eta / sqrt(T), kappa2 = max_T sum eta^2 / log T over the grid.
ScheduleConstants schedule_constants(const StepSchedule& schedule, const std::vector<long>& grid);

// ---------------------------------------------------------------------------
// Convergence bounds

struct TheoremConstants {
  double G = 0.0;
  double kappa1 = 0.0;
  double kappa2 = 0.0;
  double phi0 = 0.0;
  double lambda_star_norm = 0.0;
  double lambda0_norm = 0.0;
};

struct TheoremBounds {
  double violation = 0.0;
  double gap_upper = 0.0;
  double gap_lower = 0.0;
};

TheoremBounds theorem1_bounds(const TheoremConstants& constants, const StepSchedule& schedule, long T, double r,
                              double discount);

// ---------------------------------------------------------------------------
// Evaluators and the driver

/// Q of the modified cost plus objective / constraint values of a policy.
struct Evaluation {
  Tabled q;
  double objective = 0.0;
  VectorXd constraints;
  double se_objective = 0.0;
  VectorXd se_constraints;
};

class PolicyEvaluator {
 public:
  virtual ~PolicyEvaluator() = default;
  virtual Evaluation evaluate(const TabularCMDPd& cmdp, const StationaryPolicyd& policy, const VectorXd& lambda,
                              std::uint64_t seed) const = 0;
  virtual bool exact() const = 0;
};

class ExactEvaluator final : public PolicyEvaluator {
 public:
  Evaluation evaluate(const TabularCMDPd& cmdp, const StationaryPolicyd& policy, const VectorXd& lambda,
                      std::uint64_t seed) const override;
  bool exact() const override { return true; }
};

struct SolverConfig {
  StepSchedule schedule;
  long iterations = 100;  // T
  std::optional<StationaryPolicyd> initial_policy;  // uniform over allowed actions when unset
  VectorXd initial_lambda;                          // zero when empty
  DualDomaind domain;
  std::uint64_t seed = 0;
  bool keep_members = true;
};

struct IterationRecord {
  long m = 0;
  double eta = 0.0;
  VectorXd lambda;
  double objective = 0.0;
  VectorXd constraint_vals;
  double running_avg_objective = 0.0;
  double running_violation = 0.0;
  double se_objective = 0.0;
  /// ||[D(pi_m) - q]^+|| and its eta-weighted running average.
  double iterate_violation = 0.0;
  double running_avg_iterate_violation = 0.0;
  /// Largest |Q| and ||D - q|| seen in this evaluation.
  double max_abs_q = 0.0;
  double subgrad_norm = 0.0;
};

struct SolverResult {
  MixingPolicyd mixing;
  VectorXd averaged_lambda;
  std::optional<StationaryPolicyd> stationary;
  StationaryPolicyd final_policy;
  VectorXd final_lambda;
  std::vector<IterationRecord> trail;
  /// eta-weighted averages of C(pi_m) and D(pi_m).
  double averaged_objective = 0.0;
  VectorXd averaged_constraints;
};

/// Running eta-weighted averages of scalar and vector sequences.
class WeightedAverage {
 public:
  void add(double weight, double value, const VectorXd& vec) {
    if (total_ == 0.0) vec_ = VectorXd::Zero(vec.size());
    total_ += weight;
    scalar_ += weight * value;
    vec_ += weight * vec;
  }
  double scalar() const { return scalar_ / total_; }
  VectorXd vector() const { return vec_ / total_; }
  double total() const { return total_; }

 private:
  double total_ = 0.0;
  double scalar_ = 0.0;
  VectorXd vec_;
};

/// Fill the running-average fields of `rec` and advance the accumulators.
void update_running(IterationRecord& rec, const VectorXd& thresholds, WeightedAverage& cost_avg,
                    WeightedAverage& violation_avg);

void validate_config(const SolverConfig& config, Index n_constraints);

SolverResult run(const TabularCMDPd& cmdp, const SolverConfig& config, const PolicyEvaluator& evaluator);

/// Trail CSV with a fixed header; values printed with %.17g.
void write_trail_csv(const std::string& path, const std::vector<IterationRecord>& trail);
std::string trail_csv_header(Index n_constraints);
/// Per-iterate violation and its running average.
void write_violation_csv(const std::string& path, const std::vector<IterationRecord>& trail);

}  // namespace cmdp
