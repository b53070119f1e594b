#pragma once

#include "cmdp/primal_dual.hpp"
#include "cmdp/tabular.hpp"

#include <optional>
#include <string>
#include <vector>

namespace cmdp {

/// Independent sub-MDPs linked through expected resource constraints
/// sum_i B^i(pi^i) <= q. Each subproblem is stored as a TabularCMDP whose
/// cost is c^i, whose aux_costs are the link costs b^i_k and whose own
/// thresholds are zero, so that its modified cost is c^i + lambda' b^i.
struct WeaklyCoupledCMDP {
  std::vector<TabularCMDPd> subproblems;
  VectorXd thresholds;
  double discount = 0.5;

  Index n_subproblems() const { return static_cast<Index>(subproblems.size()); }
  Index n_constraints() const { return thresholds.size(); }
};

std::vector<std::string> validate(const WeaklyCoupledCMDP& problem);
void require_valid(const WeaklyCoupledCMDP& problem);

/// Sub-MDP entry for a weakly coupled problem: copies `mdp` with link costs
/// as aux costs and zero own thresholds.
TabularCMDPd make_subproblem(const TabularCMDPd& mdp, const std::vector<Tabled>& link_costs);

struct DecomposablePolicy {
  std::vector<StationaryPolicyd> parts;
};

DecomposablePolicy uniform_policy(const WeaklyCoupledCMDP& problem);

constexpr Index kMaxProductPairs = 100'000;

/// Joint CMDP on the product space: joint indices are mixed-radix with
/// subproblem 0 most significant, costs and link costs add, and q becomes the
/// joint threshold. Throws std::length_error beyond kMaxProductPairs allowed pairs.
TabularCMDPd product_cmdp(const WeaklyCoupledCMDP& problem);

/// Joint stationary policy pi(a|s) = prod_i pi^i(a_i|s_i).
StationaryPolicyd product_policy(const WeaklyCoupledCMDP& problem, const DecomposablePolicy& policy);

/// One evaluator per subproblem (the same object may be repeated).
using SubEvaluators = std::vector<const PolicyEvaluator*>;

/// Evaluates every part under lambda; the seed of part i is derived from (seed, i).
std::vector<Evaluation> evaluate_parts(const WeaklyCoupledCMDP& problem, const DecomposablePolicy& policy,
                                       const VectorXd& lambda, const SubEvaluators& evaluators, std::uint64_t seed,
                                       int workers = 0);

DecomposablePolicy decomposed_policy_update(const WeaklyCoupledCMDP& problem, const DecomposablePolicy& policy,
                                            const VectorXd& lambda, double eta, const SubEvaluators& evaluators,
                                            std::uint64_t seed = 0, int workers = 0);

/// sum_i B^i(pi^i) - q.
VectorXd aggregated_subgradient(const WeaklyCoupledCMDP& problem, const DecomposablePolicy& policy,
                                const SubEvaluators& evaluators, std::uint64_t seed = 0, int workers = 0);

struct DecomposedConfig {
  SolverConfig solver;  // solver.initial_policy is ignored
  std::optional<DecomposablePolicy> initial_policy;
  int workers = 0;
};

struct DecomposedResult {
  std::vector<MixingPolicyd> mixing;
  std::vector<StationaryPolicyd> stationary;
  DecomposablePolicy final_policy;
  VectorXd averaged_lambda;
  VectorXd final_lambda;
  std::vector<IterationRecord> trail;
  double averaged_objective = 0.0;
  VectorXd averaged_constraints;
  /// Wall-clock seconds per iteration.
  std::vector<double> iteration_seconds;
};

DecomposedResult run_decomposed(const WeaklyCoupledCMDP& problem, const DecomposedConfig& config,
                                const SubEvaluators& evaluators);

}  // namespace cmdp
