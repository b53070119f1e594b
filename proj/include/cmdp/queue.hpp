#pragma once

// Multi-class multi-pool parallel server system in discrete time.
// State: queue lengths X_i and customers in service Z_ij. Each period the
// scheduler assigns U_ij waiting class-i customers to pool j, then arrivals
// A_i ~ Poisson(theta_i) and departures R_ij ~ Binomial(Z_ij + U_ij, mu_ij)
// are realized. Period cost: sum_i h_i X_i + sum_ij r_ij U_ij.

#include "cmdp/primal_dual.hpp"
#include "cmdp/random_stream.hpp"
#include "cmdp/types.hpp"

#include <array>
#include <limits>
#include <string>
#include <vector>

namespace cmdp::queue {

using IntVector = Eigen::VectorXi;
using IntMatrix = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class CostRegime { large, small };

std::string to_string(CostRegime regime);
CostRegime parse_cost_regime(const std::string& text);

struct QueueState {
  IntVector X;
  IntMatrix Z;
};

/// Ordered pools (0-based) to try before waiting; the terminal wait marker is implicit.
struct PriorityAction {
  std::vector<int> pools;
  /// 1-based list with the -1 wait marker, e.g. "(1,2,-1)".
  std::string label() const;
};

struct QueueConfig {
  VectorXd arrival_rates;
  Tabled service_probs;
  IntVector pool_sizes;
  VectorXd holding;
  Tabled routing;
  double discount = 0.9;
  long horizon = 100;
  QueueState init_state;
  /// Primary pool of each class.
  IntVector primary;
  std::vector<std::vector<PriorityAction>> action_sets;
  CostRegime regime = CostRegime::large;

  Index n_classes() const { return arrival_rates.size(); }
  Index n_pools() const { return pool_sizes.size(); }
};

Tabled routing_costs(CostRegime regime);

/// Three classes and pools with theta=(12,16,20), N=(40,50,60), h=(3,2,1),
/// X(0)=50 and Z_ii(0)=(20,30,40). Horizon 100/150/800 for discount
/// 0.9/0.95/0.99, otherwise the discount^H <= 1e-4 rule.
QueueConfig paper_config(CostRegime regime, double discount);

/// Same service and cost parameters with N=(4,5,6), theta=(1.2,1.6,2.0),
/// X(0)=5, Z_ii(0)=(2,3,4) and horizon 100.
QueueConfig scaled_config(CostRegime regime, double discount = 0.9);

/// Action sets with the primary pool first, then every ordered subset of
/// compatible other pools (5 actions per class for three pools).
std::vector<std::vector<PriorityAction>> primary_first_actions(const QueueConfig& cfg);

void validate(const QueueConfig& cfg);
bool is_valid_state(const QueueConfig& cfg, const QueueState& state);

/// Eq-style feasibility of an assignment: sum_j U_ij <= X_i and
/// sum_i Z_ij + U_ij <= N_j with U >= 0.
bool is_feasible_assignment(const QueueConfig& cfg, const QueueState& state, const IntMatrix& U);

/// theta_i / (N_i mu_ii) with i's primary pool.
VectorXd nominal_traffic_intensity(const QueueConfig& cfg);

QueueState transition(const QueueConfig& cfg, const QueueState& state, const IntMatrix& U, RandomStream& arrivals,
                      RandomStream& services);

double period_cost(const QueueConfig& cfg, const QueueState& state, const IntMatrix& U);

/// Greedy fill along the priority list; never exceeds residual capacity or the queue.
IntVector apply_priority(int queue_length, const PriorityAction& action, const IntVector& residual);

/// Maximizes sum w_ij U_ij subject to row budgets X_i, column budgets
/// N_j - sum_i Z_ij and integrality. Pairs with nonpositive weight or zero
/// service probability are never used.
IntMatrix benchmark_assignment(const QueueConfig& cfg, const QueueState& state, const Tabled& weights);

/// w_ij = h_i - r_ij.
Tabled cmu_weights(const QueueConfig& cfg);
/// w_ij = h_i X_i - r_ij.
Tabled max_pressure_weights(const QueueConfig& cfg, const QueueState& state);

/// Per pool: admit primary-class requests first, then a uniformly random
/// subset of the other requests up to the residual capacity.
IntMatrix feasibility_modification(const QueueConfig& cfg, const QueueState& state, const IntMatrix& desired,
                                   RandomStream& admission);

/// [1, vec(s s')] for s = (x, z_1..z_J); dimension (J+1)^2 + 1.
VectorXd quadratic_features(const VectorXd& s);
inline Index feature_dimension(Index n_pools) { return (n_pools + 1) * (n_pools + 1) + 1; }

// ---------------------------------------------------------------------------
// Single-class subproblem

constexpr int kMaxPools = 8;

struct ClassState {
  int x = 0;
  std::array<int, kMaxPools> z{};
};

/// One class seen in isolation: pools offer their full size N_j minus the
/// class's own servers in use, and lambda prices pool occupancy.
class ClassModel {
 public:
  ClassModel(const QueueConfig& cfg, Index cls);

  Index n_pools() const { return J_; }
  Index n_actions() const { return static_cast<Index>(actions_.size()); }
  const std::vector<PriorityAction>& actions() const { return actions_; }
  ClassState initial() const { return init_; }
  double discount() const { return discount_; }
  Index cls() const { return cls_; }

  VectorXd features(const ClassState& s) const;
  /// Assignment for `action` under the class's own view of capacity.
  void assign(const ClassState& s, Index action, int* u) const;
  /// Applies u, returns the period cost h x + r'u + lambda'(z + u) and writes
  /// occupancy z + u into `occupancy`, then samples the next state.
  double step(ClassState& s, const int* u, const VectorXd& lambda, double* occupancy, RandomStream& arrivals,
              RandomStream& services) const;

 private:
  Index cls_;
  Index J_;
  double theta_;
  double holding_;
  std::array<double, kMaxPools> mu_{};
  std::array<double, kMaxPools> route_{};
  std::array<int, kMaxPools> N_{};
  std::vector<PriorityAction> actions_;
  ClassState init_;
  double discount_;
};

/// Softmax policy over priority actions with logits -<phi(s), W_a>, where W
/// accumulates eta_t theta_t^a over updates (uniform when W = 0).
struct ClassPolicy {
  Tabled weights;  // n_actions x feature dimension

  static ClassPolicy uniform(const ClassModel& model);
  VectorXd probabilities(const VectorXd& phi) const;
  Index sample(const VectorXd& phi, RandomStream& rng) const;
  Index most_probable(const VectorXd& phi) const;
};

struct VfaConfig {
  long states = 1000;       // M
  long burn_in = 10;
  long stride = 5;
  long q_replications = 10;
  long horizon = 100;
  double ridge = 1e-6;
  int workers = 0;
};

struct QuadraticVFA {
  VectorXd theta;
  double rmse = 0.0;
};

/// On-policy sample of M sub-states: trajectories from the initial state,
/// burn-in steps skipped, then every stride-th state kept.
std::vector<ClassState> sample_states(const ClassModel& model, const ClassPolicy& policy, const VfaConfig& cfg,
                                      std::uint64_t seed);

/// Monte Carlo Q(s, action) of the lambda-modified cost for each state.
VectorXd estimate_class_q(const ClassModel& model, const ClassPolicy& policy, const VectorXd& lambda,
                          const std::vector<ClassState>& states, Index action, const VfaConfig& cfg,
                          std::uint64_t seed);

/// Ridge least squares of targets on quadratic features.
QuadraticVFA fit_least_squares(const ClassModel& model, const std::vector<ClassState>& states, const VectorXd& targets,
                               double ridge);

QuadraticVFA fit_vfa(const ClassModel& model, const ClassPolicy& policy, const VectorXd& lambda, Index action,
                     const VfaConfig& cfg, std::uint64_t seed);

struct ClassCosts {
  double objective = 0.0;
  double se_objective = 0.0;
  VectorXd occupancy;  // discounted Z + U per pool
};

ClassCosts simulate_class_costs(const ClassModel& model, const ClassPolicy& policy, long replications, long horizon,
                                std::uint64_t seed, int workers = 0);

// ---------------------------------------------------------------------------
// Joint evaluation and the experiment driver

enum class SchedulerKind { primal_dual, cmu, max_pressure };

struct PolicyEvaluation {
  double mean = 0.0;
  double se = 0.0;
  /// Periods whose executed assignment broke a hard constraint.
  long hard_violations = 0;
  /// Periods in which feasibility modification had to reject customers.
  long modified_periods = 0;
  long periods = 0;
};

/// Discounted normalized cost over cfg.horizon periods from the initial
/// state, averaged over replications.
PolicyEvaluation evaluate_scheduler(const QueueConfig& cfg, SchedulerKind kind,
                                    const std::vector<ClassPolicy>* policies, long replications, std::uint64_t seed,
                                    int workers = 0);

struct QueueExperimentOptions {
  long iterations = 10;
  double step = 0.1;
  VectorXd initial_lambda;  // (10, ..., 10) when empty
  double bound = 30.0;      // M
  double slack = 1.0;       // r
  long constraint_replications = 200;
  long eval_replications = 200;
  VfaConfig vfa;
  std::uint64_t seed = 0;
  int workers = 0;
};

struct QueueExperimentResult {
  std::vector<ClassPolicy> final_policies;
  std::vector<IterationRecord> trail;
  std::vector<std::vector<double>> fit_rmse;  // per iteration, per class (mean over actions)
  PolicyEvaluation primal_dual;
  PolicyEvaluation cmu;
  PolicyEvaluation max_pressure;
};

QueueExperimentResult run_queue_experiment(const QueueConfig& cfg, const QueueExperimentOptions& options);

constexpr int kNoThreshold = std::numeric_limits<int>::max();

/// For each value of Z(cls, varied_pool) in [lo, hi] (other entries from
/// `fixed_z`), the smallest queue length at which the policy's most probable
/// action sends someone outside the primary pool; kNoThreshold if none up to
/// max_queue.
std::vector<int> threshold_scan(const ClassModel& model, const ClassPolicy& policy, const std::vector<int>& fixed_z,
                                Index varied_pool, int lo, int hi, int max_queue);

}  // namespace cmdp::queue
