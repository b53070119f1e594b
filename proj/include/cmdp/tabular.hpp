#pragma once

// Finite constrained MDPs and their exact (linear-algebraic) evaluation.
//
// Values follow the normalized convention: V, Q, C and D all carry the
// (1 - discount) factor, so a constant cost c yields V = c.

#include "cmdp/types.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace cmdp {

template <typename Scalar>
struct TabularCMDP {
  Index n_states = 0;
  Index n_actions = 0;
  /// Row `pair(s, a)` holds P(. | s, a). Rows of disallowed pairs are empty.
  Kernel<Scalar> kernel;
  Table<Scalar> cost;
  std::vector<Table<Scalar>> aux_costs;
  Vector<Scalar> thresholds;
  Scalar discount = Scalar(0.5);
  Vector<Scalar> init_dist;
  Scalar cost_lower_bound = Scalar(0);
  /// Feasible actions per state; empty means every action is allowed.
  Mask allowed;

  Index n_constraints() const { return static_cast<Index>(aux_costs.size()); }
  Index pair(Index s, Index a) const { return s * n_actions + a; }
  bool is_allowed(Index s, Index a) const { return allowed.size() == 0 || allowed(s, a); }
  Index n_allowed_pairs() const {
    return allowed.size() == 0 ? n_states * n_actions : static_cast<Index>(allowed.count());
  }
};

template <typename Scalar>
struct StationaryPolicy {
  Table<Scalar> probs;

  Index n_states() const { return probs.rows(); }
  Index n_actions() const { return probs.cols(); }
  Scalar operator()(Index s, Index a) const { return probs(s, a); }
};

template <typename Scalar>
struct MixingPolicy {
  std::vector<StationaryPolicy<Scalar>> members;
  Vector<Scalar> weights;
};

template <typename Scalar>
struct OccupationMeasure {
  Table<Scalar> mass;

  Vector<Scalar> state_mass() const { return mass.rowwise().sum(); }
};

template <typename Scalar>
struct ValueTables {
  Vector<Scalar> v;
  Table<Scalar> q;
};

template <typename Scalar>
struct PolicyCosts {
  Scalar objective = Scalar(0);
  Vector<Scalar> constraints;
};

using TabularCMDPd = TabularCMDP<double>;
using StationaryPolicyd = StationaryPolicy<double>;
using MixingPolicyd = MixingPolicy<double>;
using OccupationMeasured = OccupationMeasure<double>;
using ValueTablesd = ValueTables<double>;
using PolicyCostsd = PolicyCosts<double>;

// ---------------------------------------------------------------------------
// Construction helpers

template <typename Scalar>
StationaryPolicy<Scalar> uniform_policy(const TabularCMDP<Scalar>& cmdp) {
  StationaryPolicy<Scalar> policy{Table<Scalar>::Zero(cmdp.n_states, cmdp.n_actions)};
  for (Index s = 0; s < cmdp.n_states; ++s) {
    Index count = 0;
    for (Index a = 0; a < cmdp.n_actions; ++a) count += cmdp.is_allowed(s, a) ? 1 : 0;
    for (Index a = 0; a < cmdp.n_actions; ++a)
      if (cmdp.is_allowed(s, a)) policy.probs(s, a) = Scalar(1) / Scalar(count);
  }
  return policy;
}

/// Deterministic policy from one action per state.
template <typename Scalar>
StationaryPolicy<Scalar> deterministic_policy(const TabularCMDP<Scalar>& cmdp,
                                              const std::vector<Index>& actions) {
  if (static_cast<Index>(actions.size()) != cmdp.n_states)
    throw std::invalid_argument("deterministic_policy: one action per state required");
  StationaryPolicy<Scalar> policy{Table<Scalar>::Zero(cmdp.n_states, cmdp.n_actions)};
  for (Index s = 0; s < cmdp.n_states; ++s) {
    if (!cmdp.is_allowed(s, actions[s]))
      throw std::invalid_argument("deterministic_policy: action not allowed in state " +
                                  std::to_string(s));
    policy.probs(s, actions[s]) = Scalar(1);
  }
  return policy;
}

/// Mixing policy with a single member.
template <typename Scalar>
MixingPolicy<Scalar> as_mixing(const StationaryPolicy<Scalar>& policy) {
  return {{policy}, Vector<Scalar>::Ones(1)};
}

// ---------------------------------------------------------------------------
// Validation

template <typename Scalar>
std::vector<std::string> validate(const TabularCMDP<Scalar>& cmdp) {
  std::vector<std::string> report;
  auto add = [&report](const std::string& msg) { report.push_back(msg); };
  const Index S = cmdp.n_states;
  const Index A = cmdp.n_actions;
  if (S <= 0 || A <= 0) {
    add("n_states and n_actions must be positive");
    return report;
  }
  if (cmdp.kernel.rows() != S * A || cmdp.kernel.cols() != S) add("kernel shape mismatch");
  if (cmdp.cost.rows() != S || cmdp.cost.cols() != A) add("cost shape mismatch");
  if (cmdp.init_dist.size() != S) add("init_dist size mismatch");
  if (cmdp.allowed.size() != 0 && (cmdp.allowed.rows() != S || cmdp.allowed.cols() != A))
    add("allowed mask shape mismatch");
  if (cmdp.thresholds.size() != cmdp.n_constraints())
    add("thresholds size does not match the number of auxiliary costs");
  for (Index k = 0; k < cmdp.n_constraints(); ++k)
    if (cmdp.aux_costs[k].rows() != S || cmdp.aux_costs[k].cols() != A)
      add("aux_costs[" + std::to_string(k) + "] shape mismatch");
  if (!report.empty()) return report;

  if (!(cmdp.discount > Scalar(0) && cmdp.discount < Scalar(1)))
    add("discount must lie in (0, 1)");

  const Scalar tol = Scalar(1e-12);
  for (Index s = 0; s < S; ++s) {
    bool any = false;
    for (Index a = 0; a < A; ++a) {
      const Index row = cmdp.pair(s, a);
      Scalar sum = 0;
      bool negative = false;
      for (typename Kernel<Scalar>::InnerIterator it(cmdp.kernel, row); it; ++it) {
        sum += it.value();
        negative = negative || it.value() < Scalar(0);
      }
      if (!cmdp.is_allowed(s, a)) {
        if (sum != Scalar(0)) add("disallowed pair (" + std::to_string(s) + "," + std::to_string(a) +
                                  ") has kernel mass");
        continue;
      }
      any = true;
      if (negative)
        add("kernel row (" + std::to_string(s) + "," + std::to_string(a) + ") has a negative entry");
      if (std::abs(sum - Scalar(1)) > tol) {
        std::ostringstream os;
        os << "kernel row (" << s << "," << a << ") sums to " << sum;
        add(os.str());
      }
      if (!(cmdp.cost(s, a) > cmdp.cost_lower_bound))
        add("cost at (" + std::to_string(s) + "," + std::to_string(a) +
            ") violates the strict lower bound W");
      for (Index k = 0; k < cmdp.n_constraints(); ++k)
        if (!(cmdp.aux_costs[k](s, a) > cmdp.cost_lower_bound))
          add("aux cost " + std::to_string(k) + " at (" + std::to_string(s) + "," +
              std::to_string(a) + ") violates the strict lower bound W");
    }
    if (!any) add("state " + std::to_string(s) + " has no allowed action");
  }
  if ((cmdp.init_dist.array() < Scalar(0)).any()) add("init_dist has a negative entry");
  if (std::abs(cmdp.init_dist.sum() - Scalar(1)) > tol) add("init_dist does not sum to 1");
  return report;
}

template <typename Scalar>
void require_valid(const TabularCMDP<Scalar>& cmdp) {
  const auto report = validate(cmdp);
  if (!report.empty()) throw std::invalid_argument("invalid CMDP: " + report.front());
}

/// Rows on the simplex over allowed actions.
template <typename Scalar>
bool is_valid_policy(const TabularCMDP<Scalar>& cmdp, const StationaryPolicy<Scalar>& policy,
                     Scalar tol = Scalar(1e-12)) {
  if (policy.n_states() != cmdp.n_states || policy.n_actions() != cmdp.n_actions) return false;
  for (Index s = 0; s < cmdp.n_states; ++s) {
    Scalar sum = 0;
    for (Index a = 0; a < cmdp.n_actions; ++a) {
      const Scalar p = policy.probs(s, a);
      if (p < Scalar(0) || (!cmdp.is_allowed(s, a) && p != Scalar(0))) return false;
      sum += p;
    }
    if (std::abs(sum - Scalar(1)) > tol) return false;
  }
  return true;
}

template <typename Scalar>
bool has_full_support(const TabularCMDP<Scalar>& cmdp, const StationaryPolicy<Scalar>& policy) {
  for (Index s = 0; s < cmdp.n_states; ++s)
    for (Index a = 0; a < cmdp.n_actions; ++a)
      if (cmdp.is_allowed(s, a) && !(policy.probs(s, a) > Scalar(0))) return false;
  return true;
}

// ---------------------------------------------------------------------------
// Exact evaluation

/// c(s,a) + sum_k lambda_k (d_k(s,a) - q_k).
template <typename Scalar, typename Derived>
Table<Scalar> modified_cost(const TabularCMDP<Scalar>& cmdp, const Eigen::MatrixBase<Derived>& lambda) {
  if (lambda.size() != cmdp.n_constraints())
    throw std::invalid_argument("modified_cost: lambda has wrong dimension");
  if ((lambda.array() < Scalar(0)).any())
    throw std::invalid_argument("modified_cost: lambda must be entrywise nonnegative");
  Table<Scalar> c = cmdp.cost;
  for (Index k = 0; k < cmdp.n_constraints(); ++k)
    c += lambda(k) * (cmdp.aux_costs[k].array() - cmdp.thresholds(k)).matrix();
  return c;
}

/// Dense state-to-state kernel under a policy.
template <typename Scalar>
Table<Scalar> policy_kernel(const TabularCMDP<Scalar>& cmdp, const StationaryPolicy<Scalar>& policy) {
  Table<Scalar> P = Table<Scalar>::Zero(cmdp.n_states, cmdp.n_states);
  for (Index s = 0; s < cmdp.n_states; ++s)
    for (Index a = 0; a < cmdp.n_actions; ++a) {
      const Scalar p = policy.probs(s, a);
      if (p == Scalar(0)) continue;
      for (typename Kernel<Scalar>::InnerIterator it(cmdp.kernel, cmdp.pair(s, a)); it; ++it)
        P(s, it.col()) += p * it.value();
    }
  return P;
}

/// V and Q of an arbitrary per-(s,a) cost table under a policy.
template <typename Scalar>
ValueTables<Scalar> evaluate_cost_table(const TabularCMDP<Scalar>& cmdp,
                                        const StationaryPolicy<Scalar>& policy,
                                        const Table<Scalar>& cost) {
  const Scalar g = cmdp.discount;
  const Index S = cmdp.n_states;
  const Table<Scalar> P = policy_kernel(cmdp, policy);
  Vector<Scalar> c_pi = (policy.probs.array() * cost.array()).rowwise().sum().matrix();
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> system =
      Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>::Identity(S, S) - g * P;
  ValueTables<Scalar> out;
  out.v = system.partialPivLu().solve((Scalar(1) - g) * c_pi);
  const Vector<Scalar> next = cmdp.kernel * out.v;
  out.q = (Scalar(1) - g) * cost;
  for (Index s = 0; s < S; ++s)
    for (Index a = 0; a < cmdp.n_actions; ++a) out.q(s, a) += g * next(cmdp.pair(s, a));
  return out;
}

template <typename Scalar, typename Derived>
ValueTables<Scalar> evaluate_policy_exact(const TabularCMDP<Scalar>& cmdp,
                                          const StationaryPolicy<Scalar>& policy,
                                          const Eigen::MatrixBase<Derived>& lambda) {
  return evaluate_cost_table(cmdp, policy, modified_cost(cmdp, lambda));
}

template <typename Scalar>
OccupationMeasure<Scalar> occupation_exact(const TabularCMDP<Scalar>& cmdp,
                                           const StationaryPolicy<Scalar>& policy) {
  const Scalar g = cmdp.discount;
  const Index S = cmdp.n_states;
  const Table<Scalar> P = policy_kernel(cmdp, policy);
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> system =
      Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>::Identity(S, S) - g * P.transpose();
  const Vector<Scalar> nu_s = system.partialPivLu().solve((Scalar(1) - g) * cmdp.init_dist);
  OccupationMeasure<Scalar> out{policy.probs};
  out.mass.array().colwise() *= nu_s.array();
  return out;
}

/// Weight-averaged occupation measure of a mixing policy.
template <typename Scalar>
OccupationMeasure<Scalar> occupation_exact(const TabularCMDP<Scalar>& cmdp,
                                           const MixingPolicy<Scalar>& mix) {
  if (mix.members.empty() || static_cast<Index>(mix.members.size()) != mix.weights.size())
    throw std::invalid_argument("mixing policy needs one weight per member");
  OccupationMeasure<Scalar> out{Table<Scalar>::Zero(cmdp.n_states, cmdp.n_actions)};
  for (std::size_t m = 0; m < mix.members.size(); ++m)
    if (mix.weights(m) != Scalar(0)) out.mass += mix.weights(m) * occupation_exact(cmdp, mix.members[m]).mass;
  return out;
}

/// Max-abs residual of the discounted flow equations.
template <typename Scalar>
Scalar flow_residual(const TabularCMDP<Scalar>& cmdp, const OccupationMeasure<Scalar>& nu) {
  const Scalar g = cmdp.discount;
  Vector<Scalar> lhs = nu.state_mass();
  Vector<Scalar> flat(cmdp.n_states * cmdp.n_actions);
  for (Index s = 0; s < cmdp.n_states; ++s)
    for (Index a = 0; a < cmdp.n_actions; ++a) flat(cmdp.pair(s, a)) = nu.mass(s, a);
  lhs -= g * (cmdp.kernel.transpose() * flat);
  return (lhs - (Scalar(1) - g) * cmdp.init_dist).cwiseAbs().maxCoeff();
}

template <typename Scalar>
PolicyCosts<Scalar> costs_of_occupation(const TabularCMDP<Scalar>& cmdp,
                                        const OccupationMeasure<Scalar>& nu) {
  PolicyCosts<Scalar> out;
  out.objective = (cmdp.cost.array() * nu.mass.array()).sum();
  out.constraints.resize(cmdp.n_constraints());
  for (Index k = 0; k < cmdp.n_constraints(); ++k)
    out.constraints(k) = (cmdp.aux_costs[k].array() * nu.mass.array()).sum();
  return out;
}

template <typename Scalar>
PolicyCosts<Scalar> costs_of_policy(const TabularCMDP<Scalar>& cmdp, const StationaryPolicy<Scalar>& policy) {
  return costs_of_occupation(cmdp, occupation_exact(cmdp, policy));
}

template <typename Scalar>
PolicyCosts<Scalar> costs_of_policy(const TabularCMDP<Scalar>& cmdp, const MixingPolicy<Scalar>& mix) {
  return costs_of_occupation(cmdp, occupation_exact(cmdp, mix));
}

/// pi(a|s) = nu(s,a) / sum_a nu(s,a); zero-mass states get the uniform
/// distribution over allowed actions.
template <typename Scalar>
StationaryPolicy<Scalar> policy_from_occupation(const TabularCMDP<Scalar>& cmdp,
                                                const OccupationMeasure<Scalar>& nu) {
  StationaryPolicy<Scalar> out = uniform_policy(cmdp);
  for (Index s = 0; s < cmdp.n_states; ++s) {
    Scalar total = 0;
    for (Index a = 0; a < cmdp.n_actions; ++a)
      if (cmdp.is_allowed(s, a)) total += std::max(nu.mass(s, a), Scalar(0));
    if (!(total > Scalar(0))) continue;
    for (Index a = 0; a < cmdp.n_actions; ++a)
      out.probs(s, a) = cmdp.is_allowed(s, a) ? std::max(nu.mass(s, a), Scalar(0)) / total : Scalar(0);
  }
  return out;
}

template <typename Scalar>
StationaryPolicy<Scalar> mixing_to_stationary(const TabularCMDP<Scalar>& cmdp, const MixingPolicy<Scalar>& mix) {
  return policy_from_occupation(cmdp, occupation_exact(cmdp, mix));
}

/// E_{s ~ nu_s^anchor} KL(p1(.|s) || p2(.|s)); +inf on an absolute-continuity
/// violation at a visited state.
template <typename Scalar>
Scalar weighted_kl(const TabularCMDP<Scalar>& cmdp, const StationaryPolicy<Scalar>& anchor,
                   const StationaryPolicy<Scalar>& p1, const StationaryPolicy<Scalar>& p2) {
  const Vector<Scalar> weight = occupation_exact(cmdp, anchor).state_mass();
  Scalar total = 0;
  for (Index s = 0; s < cmdp.n_states; ++s) {
    if (!(weight(s) > Scalar(0))) continue;
    Scalar kl = 0;
    for (Index a = 0; a < cmdp.n_actions; ++a) {
      const Scalar x = p1.probs(s, a);
      if (!(x > Scalar(0))) continue;
      const Scalar y = p2.probs(s, a);
      if (!(y > Scalar(0))) return infinity<Scalar>();
      kl += x * std::log(x / y);
    }
    total += weight(s) * std::max(kl, Scalar(0));
  }
  return total;
}

/// Both sides of the performance-difference identity under modified costs:
/// lhs = E_mu0[V^{p2}] - E_mu0[V^{p1}],
/// rhs = (1 - discount)^{-1} E_{(s,a) ~ nu^{p2}}[Q^{p1}(s,a) - V^{p1}(s)].
template <typename Scalar, typename Derived>
std::pair<Scalar, Scalar> performance_difference(const TabularCMDP<Scalar>& cmdp,
                                                 const Eigen::MatrixBase<Derived>& lambda,
                                                 const StationaryPolicy<Scalar>& p1,
                                                 const StationaryPolicy<Scalar>& p2) {
  const auto t1 = evaluate_policy_exact(cmdp, p1, lambda);
  const auto t2 = evaluate_policy_exact(cmdp, p2, lambda);
  const Scalar lhs = cmdp.init_dist.dot(t2.v) - cmdp.init_dist.dot(t1.v);
  const auto nu2 = occupation_exact(cmdp, p2);
  Table<Scalar> advantage = t1.q;
  advantage.colwise() -= t1.v;
  const Scalar rhs = (nu2.mass.array() * advantage.array()).sum() / (Scalar(1) - cmdp.discount);
  return {lhs, rhs};
}

}  // namespace cmdp
