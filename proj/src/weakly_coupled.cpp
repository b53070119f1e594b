#include "cmdp/weakly_coupled.hpp"

#include "cmdp/parallel.hpp"
#include "cmdp/random_stream.hpp"

#include <chrono>
#include <stdexcept>

namespace cmdp {

std::vector<std::string> validate(const WeaklyCoupledCMDP& problem) {
  std::vector<std::string> report;
  if (problem.subproblems.empty()) report.push_back("no subproblems");
  if (!(problem.discount > 0.0 && problem.discount < 1.0)) report.push_back("discount must lie in (0, 1)");
  for (Index i = 0; i < problem.n_subproblems(); ++i) {
    const auto& sub = problem.subproblems[static_cast<std::size_t>(i)];
    const std::string tag = "subproblem " + std::to_string(i) + ": ";
    for (const auto& msg : validate(sub)) report.push_back(tag + msg);
    if (sub.n_constraints() != problem.n_constraints()) report.push_back(tag + "link cost count differs from K");
    if (sub.discount != problem.discount) report.push_back(tag + "discount differs from the shared discount");
    if (sub.thresholds.size() == problem.n_constraints() && !sub.thresholds.isZero(0.0))
      report.push_back(tag + "own thresholds must be zero");
  }
  return report;
}

void require_valid(const WeaklyCoupledCMDP& problem) {
  const auto report = validate(problem);
  if (!report.empty()) throw std::invalid_argument("invalid weakly coupled CMDP: " + report.front());
}

TabularCMDPd make_subproblem(const TabularCMDPd& mdp, const std::vector<Tabled>& link_costs) {
  TabularCMDPd sub = mdp;
  sub.aux_costs = link_costs;
  sub.thresholds = VectorXd::Zero(static_cast<Index>(link_costs.size()));
  return sub;
}

DecomposablePolicy uniform_policy(const WeaklyCoupledCMDP& problem) {
  DecomposablePolicy out;
  for (const auto& sub : problem.subproblems) out.parts.push_back(uniform_policy(sub));
  return out;
}

namespace {

struct Radix {
  std::vector<Index> sizes;
  Index total = 1;

  explicit Radix(std::vector<Index> s) : sizes(std::move(s)) {
    for (Index n : sizes) total *= n;
  }
  void digits(Index k, std::vector<Index>& out) const {
    out.resize(sizes.size());
    for (std::size_t i = sizes.size(); i-- > 0;) {
      out[i] = k % sizes[i];
      k /= sizes[i];
    }
  }
};

}  // namespace

TabularCMDPd product_cmdp(const WeaklyCoupledCMDP& problem) {
  require_valid(problem);
  std::vector<Index> ns, na;
  double pairs = 1.0;
  for (const auto& sub : problem.subproblems) {
    ns.push_back(sub.n_states);
    na.push_back(sub.n_actions);
    pairs *= static_cast<double>(sub.n_allowed_pairs());
  }
  if (pairs > static_cast<double>(kMaxProductPairs))
    throw std::length_error("product_cmdp: " + std::to_string(static_cast<long long>(pairs)) +
                            " allowed joint pairs exceed the limit");
  const Radix states(ns), actions(na);
  const Index K = problem.n_constraints();
  const std::size_t I = problem.subproblems.size();

  TabularCMDPd joint;
  joint.n_states = states.total;
  joint.n_actions = actions.total;
  joint.discount = problem.discount;
  joint.thresholds = problem.thresholds;
  joint.cost = Tabled::Zero(states.total, actions.total);
  joint.aux_costs.assign(static_cast<std::size_t>(K), Tabled::Zero(states.total, actions.total));
  joint.allowed = Mask::Constant(states.total, actions.total, false);
  joint.init_dist = VectorXd::Ones(states.total);
  joint.cost_lower_bound = 0.0;
  for (const auto& sub : problem.subproblems) joint.cost_lower_bound += sub.cost_lower_bound;

  std::vector<Index> sd, ad;
  for (Index s = 0; s < states.total; ++s) {
    states.digits(s, sd);
    for (std::size_t i = 0; i < I; ++i) joint.init_dist(s) *= problem.subproblems[i].init_dist(sd[i]);
  }

  std::vector<Eigen::Triplet<double>> entries;
  std::vector<std::pair<Index, double>> row, next;
  for (Index s = 0; s < states.total; ++s) {
    states.digits(s, sd);
    for (Index a = 0; a < actions.total; ++a) {
      actions.digits(a, ad);
      bool ok = true;
      for (std::size_t i = 0; i < I && ok; ++i) ok = problem.subproblems[i].is_allowed(sd[i], ad[i]);
      if (!ok) continue;
      joint.allowed(s, a) = true;
      row.assign(1, {0, 1.0});
      for (std::size_t i = 0; i < I; ++i) {
        const auto& sub = problem.subproblems[i];
        joint.cost(s, a) += sub.cost(sd[i], ad[i]);
        for (Index k = 0; k < K; ++k)
          joint.aux_costs[static_cast<std::size_t>(k)](s, a) += sub.aux_costs[static_cast<std::size_t>(k)](sd[i], ad[i]);
        next.clear();
        for (const auto& [idx, p] : row)
          for (Kernel<double>::InnerIterator it(sub.kernel, sub.pair(sd[i], ad[i])); it; ++it)
            next.emplace_back(idx * sub.n_states + it.col(), p * it.value());
        row.swap(next);
      }
      const Index r = joint.pair(s, a);
      for (const auto& [idx, p] : row) entries.emplace_back(r, idx, p);
    }
  }
  joint.kernel.resize(states.total * actions.total, states.total);
  joint.kernel.setFromTriplets(entries.begin(), entries.end());
  return joint;
}

StationaryPolicyd product_policy(const WeaklyCoupledCMDP& problem, const DecomposablePolicy& policy) {
  if (policy.parts.size() != problem.subproblems.size())
    throw std::invalid_argument("product_policy: one part per subproblem required");
  std::vector<Index> ns, na;
  for (const auto& sub : problem.subproblems) {
    ns.push_back(sub.n_states);
    na.push_back(sub.n_actions);
  }
  const Radix states(ns), actions(na);
  StationaryPolicyd out{Tabled::Zero(states.total, actions.total)};
  std::vector<Index> sd, ad;
  for (Index s = 0; s < states.total; ++s) {
    states.digits(s, sd);
    for (Index a = 0; a < actions.total; ++a) {
      actions.digits(a, ad);
      double p = 1.0;
      for (std::size_t i = 0; i < sd.size(); ++i) p *= policy.parts[i].probs(sd[i], ad[i]);
      out.probs(s, a) = p;
    }
  }
  return out;
}

namespace {

void check_shapes(const WeaklyCoupledCMDP& problem, const DecomposablePolicy& policy, const SubEvaluators& evaluators) {
  if (static_cast<Index>(policy.parts.size()) != problem.n_subproblems())
    throw std::invalid_argument("decomposable policy needs one part per subproblem");
  if (static_cast<Index>(evaluators.size()) != problem.n_subproblems())
    throw std::invalid_argument("one evaluator per subproblem required");
}

}  // namespace

std::vector<Evaluation> evaluate_parts(const WeaklyCoupledCMDP& problem, const DecomposablePolicy& policy,
                                       const VectorXd& lambda, const SubEvaluators& evaluators, std::uint64_t seed,
                                       int workers) {
  check_shapes(problem, policy, evaluators);
  std::vector<Evaluation> out(problem.subproblems.size());
  parallel_for(problem.n_subproblems(), resolve_workers(workers), [&](long i) {
    const auto idx = static_cast<std::size_t>(i);
    try {
      out[idx] = evaluators[idx]->evaluate(problem.subproblems[idx], policy.parts[idx], lambda,
                                           derive_seed(seed, static_cast<std::uint64_t>(i) + 1));
    } catch (const std::exception& e) {
      throw std::runtime_error("subproblem " + std::to_string(i) + ": " + e.what());
    }
  });
  return out;
}

DecomposablePolicy decomposed_policy_update(const WeaklyCoupledCMDP& problem, const DecomposablePolicy& policy,
                                            const VectorXd& lambda, double eta, const SubEvaluators& evaluators,
                                            std::uint64_t seed, int workers) {
  const auto evals = evaluate_parts(problem, policy, lambda, evaluators, seed, workers);
  DecomposablePolicy out;
  for (std::size_t i = 0; i < evals.size(); ++i) out.parts.push_back(policy_update(evals[i].q, policy.parts[i], eta));
  return out;
}

VectorXd aggregated_subgradient(const WeaklyCoupledCMDP& problem, const DecomposablePolicy& policy,
                                const SubEvaluators& evaluators, std::uint64_t seed, int workers) {
  const VectorXd zero = VectorXd::Zero(problem.n_constraints());
  const auto evals = evaluate_parts(problem, policy, zero, evaluators, seed, workers);
  VectorXd total = -problem.thresholds;
  for (const auto& ev : evals) total += ev.constraints;
  return total;
}

DecomposedResult run_decomposed(const WeaklyCoupledCMDP& problem, const DecomposedConfig& config,
                                const SubEvaluators& evaluators) {
  require_valid(problem);
  const SolverConfig& sc = config.solver;
  const Index K = problem.n_constraints();
  validate_config(sc, K);
  DecomposablePolicy policy = config.initial_policy ? *config.initial_policy : uniform_policy(problem);
  check_shapes(problem, policy, evaluators);
  for (Index i = 0; i < problem.n_subproblems(); ++i) {
    const auto& sub = problem.subproblems[static_cast<std::size_t>(i)];
    const auto& part = policy.parts[static_cast<std::size_t>(i)];
    if (!is_valid_policy(sub, part) || !has_full_support(sub, part))
      throw std::invalid_argument("initial policy part " + std::to_string(i) + " must be valid with full support");
  }

  DualStated dual;
  dual.domain = sc.domain;
  dual.lambda = sc.initial_lambda.size() ? sc.initial_lambda : VectorXd::Zero(K);

  DecomposedResult result;
  result.mixing.resize(problem.subproblems.size());
  std::vector<double> weights;
  VectorXd lambda_sum = VectorXd::Zero(K);
  WeightedAverage cost_avg, violation_avg;

  for (long m = 0; m < sc.iterations; ++m) {
    const auto start = std::chrono::steady_clock::now();
    const double eta = sc.schedule.eta(m);
    std::vector<Evaluation> evals;
    try {
      evals = evaluate_parts(problem, policy, dual.lambda, evaluators,
                             derive_seed(sc.seed, static_cast<std::uint64_t>(m)), config.workers);
    } catch (const std::exception& e) {
      throw std::runtime_error("evaluation failed at iteration " + std::to_string(m) + ": " + e.what());
    }

    IterationRecord rec;
    rec.m = m;
    rec.eta = eta;
    rec.lambda = dual.lambda;
    rec.constraint_vals = VectorXd::Zero(K);
    double var = 0.0;
    for (std::size_t i = 0; i < evals.size(); ++i) {
      rec.objective += evals[i].objective;
      rec.constraint_vals += evals[i].constraints;
      var += evals[i].se_objective * evals[i].se_objective;
      const auto& sub = problem.subproblems[i];
      for (Index s = 0; s < sub.n_states; ++s)
        for (Index a = 0; a < sub.n_actions; ++a)
          if (sub.is_allowed(s, a)) rec.max_abs_q = std::max(rec.max_abs_q, std::abs(evals[i].q(s, a)));
    }
    rec.se_objective = std::sqrt(var);
    const VectorXd subgrad = rec.constraint_vals - problem.thresholds;
    rec.subgrad_norm = subgrad.norm();
    update_running(rec, problem.thresholds, cost_avg, violation_avg);
    result.trail.push_back(rec);

    weights.push_back(eta);
    lambda_sum += eta * dual.lambda;
    if (sc.keep_members)
      for (std::size_t i = 0; i < evals.size(); ++i) result.mixing[i].members.push_back(policy.parts[i]);

    if (m + 1 < sc.iterations) {
      for (std::size_t i = 0; i < evals.size(); ++i) policy.parts[i] = policy_update(evals[i].q, policy.parts[i], eta);
      dual = dual_update(dual, subgrad, eta);
    }
    result.iteration_seconds.push_back(
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
  }

  const double total = cost_avg.total();
  result.averaged_lambda = lambda_sum / total;
  result.averaged_objective = cost_avg.scalar();
  result.averaged_constraints = cost_avg.vector();
  result.final_policy = policy;
  result.final_lambda = dual.lambda;
  if (sc.keep_members) {
    const VectorXd w = Eigen::Map<const VectorXd>(weights.data(), static_cast<Index>(weights.size())) / total;
    for (std::size_t i = 0; i < result.mixing.size(); ++i) {
      result.mixing[i].weights = w;
      result.stationary.push_back(mixing_to_stationary(problem.subproblems[i], result.mixing[i]));
    }
  }
  return result;
}

}  // namespace cmdp
