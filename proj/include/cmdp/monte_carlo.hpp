#pragma once

// Monte Carlo estimation of Q-functions and discounted costs through a
// generative environment. An environment type provides
//
//   Index n_states() const, n_actions() const, n_constraints() const;
//   double discount() const;
//   const VectorXd& thresholds() const;
//   bool is_allowed(Index s, Index a) const;
//   Index sample_initial(RandomStream&) const;
//   Index step(Index s, Index a, RandomStream&, double& cost, double* aux) const;
//   double cost_bound() const;   // max |c|
//   double aux_bound() const;    // max |d_k|
//   StreamTag random_tag() const;

#include "cmdp/parallel.hpp"
#include "cmdp/primal_dual.hpp"
#include "cmdp/random_stream.hpp"
#include "cmdp/tabular.hpp"

#include <cmath>
#include <concepts>
#include <utility>
#include <vector>

namespace cmdp {

template <typename Env>
concept GenerativeEnvironment = requires(const Env& env, Index s, Index a, RandomStream& rng, double& c, double* d) {
  { env.n_states() } -> std::convertible_to<Index>;
  { env.n_actions() } -> std::convertible_to<Index>;
  { env.n_constraints() } -> std::convertible_to<Index>;
  { env.discount() } -> std::convertible_to<double>;
  { env.thresholds() } -> std::convertible_to<const VectorXd&>;
  { env.is_allowed(s, a) } -> std::convertible_to<bool>;
  { env.sample_initial(rng) } -> std::convertible_to<Index>;
  { env.step(s, a, rng, c, d) } -> std::convertible_to<Index>;
  { env.cost_bound() } -> std::convertible_to<double>;
  { env.aux_bound() } -> std::convertible_to<double>;
  { env.random_tag() } -> std::convertible_to<StreamTag>;
};

struct MCConfig {
  long replications = 400;
  long horizon = 40;
  std::uint64_t seed = 0;
  /// Only plain sampling is implemented; true is rejected.
  bool antithetic = false;
  /// Largest admissible truncation bias of a normalized estimate.
  double max_truncation_bias = infinity<double>();
  int workers = 0;
};

/// Horizon H with discount^H <= target (1e-4 by default).
long default_horizon(double discount, double target = 1e-4);

/// Normalized truncation bias bound: discount^H * max |cost|.
inline double truncation_bias_bound(double discount, long horizon, double max_abs_cost) {
  return std::pow(discount, static_cast<double>(horizon)) * max_abs_cost;
}

void validate_mc_config(const MCConfig& cfg);

struct QEstimate {
  VectorXd mean;
  VectorXd se;
};

struct CostEstimate {
  double objective = 0.0;
  double se_objective = 0.0;
  VectorXd constraints;
  VectorXd se_constraints;
};

/// Per-state cumulative action distribution for fast sampling.
class PolicySampler {
 public:
  explicit PolicySampler(const StationaryPolicyd& policy) : cdf_(policy.probs), last_(policy.probs.rows()) {
    for (Index s = 0; s < cdf_.rows(); ++s) {
      double run = 0.0;
      last_(s) = 0;
      for (Index a = 0; a < cdf_.cols(); ++a) {
        if (policy.probs(s, a) > 0.0) last_(s) = a;
        run += policy.probs(s, a);
        cdf_(s, a) = run;
      }
    }
  }

  Index sample(Index s, RandomStream& rng) const {
    const double u = rng.uniform() * cdf_(s, cdf_.cols() - 1);
    const Index stop = last_(s);
    for (Index a = 0; a < stop; ++a)
      if (u < cdf_(s, a)) return a;
    return stop;
  }

 private:
  Tabled cdf_;
  Eigen::Matrix<Index, Eigen::Dynamic, 1> last_;
};

namespace detail {

// Welford accumulator; `sum` is kept separately so the mean is the plain
// left-to-right sum over n.
struct Moments {
  long n = 0;
  double sum = 0.0;
  double running = 0.0;
  double m2 = 0.0;

  void add(double x) {
    ++n;
    sum += x;
    const double delta = x - running;
    running += delta / static_cast<double>(n);
    m2 += delta * (x - running);
  }
};

inline double standard_error(const Moments& m) {
  if (m.n < 2) return 0.0;
  const double var = std::max(0.0, m.m2 / static_cast<double>(m.n - 1));
  return std::sqrt(var / static_cast<double>(m.n));
}

template <typename Env>
double modified_bound(const Env& env, const VectorXd& lambda) {
  double out = env.cost_bound();
  for (Index k = 0; k < lambda.size(); ++k) out += lambda(k) * (env.aux_bound() + std::abs(env.thresholds()(k)));
  return out;
}

template <typename Env>
void check_bias(const Env& env, const MCConfig& cfg, double bound) {
  const double bias = truncation_bias_bound(env.discount(), cfg.horizon, bound);
  if (bias > cfg.max_truncation_bias)
    throw std::invalid_argument("monte carlo: truncation bias bound " + std::to_string(bias) +
                                " exceeds the configured tolerance");
}

}  // namespace detail

/// Mean and standard error of (1 - discount) sum_{t < H} discount^t c^lambda
/// from each queried (s, a), then following `policy`. Query i uses its own
/// pair of streams (environment and policy draws) with index i.
template <GenerativeEnvironment Env>
QEstimate estimate_q(const Env& env, const StationaryPolicyd& policy, const VectorXd& lambda,
                     const std::vector<std::pair<Index, Index>>& queries, const MCConfig& cfg) {
  validate_mc_config(cfg);
  const Index K = env.n_constraints();
  if (lambda.size() != K) throw std::invalid_argument("estimate_q: lambda has wrong dimension");
  if ((lambda.array() < 0.0).any()) throw std::invalid_argument("estimate_q: lambda must be nonnegative");
  if (policy.probs.rows() != env.n_states() || policy.probs.cols() != env.n_actions())
    throw std::invalid_argument("estimate_q: policy shape mismatch");
  detail::check_bias(env, cfg, detail::modified_bound(env, lambda));

  const PolicySampler sampler(policy);
  const double g = env.discount();
  const double shift = lambda.dot(env.thresholds());
  const long R = cfg.replications;
  const long H = cfg.horizon;
  QEstimate out{VectorXd(static_cast<Index>(queries.size())), VectorXd(static_cast<Index>(queries.size()))};

  parallel_for(static_cast<long>(queries.size()), resolve_workers(cfg.workers), [&](long i) {
    RandomStream env_rng(cfg.seed, static_cast<std::uint64_t>(i), env.random_tag());
    RandomStream pol_rng(cfg.seed, static_cast<std::uint64_t>(i), StreamTag::policy);
    std::vector<double> aux(static_cast<std::size_t>(std::max<Index>(K, 1)));
    detail::Moments mom;
    const auto [s0, a0] = queries[static_cast<std::size_t>(i)];
    for (long r = 0; r < R; ++r) {
      Index s = s0;
      Index a = a0;
      double weight = 1.0;
      double total = 0.0;
      for (long t = 0; t < H; ++t) {
        double c = 0.0;
        const Index next = env.step(s, a, env_rng, c, aux.data());
        for (Index k = 0; k < K; ++k) c += lambda(k) * aux[static_cast<std::size_t>(k)];
        total += weight * (c - shift);
        weight *= g;
        s = next;
        if (t + 1 < H) a = sampler.sample(s, pol_rng);
      }
      total *= (1.0 - g);
      mom.add(total);
    }
    out.mean(i) = mom.sum / static_cast<double>(R);
    out.se(i) = detail::standard_error(mom);
  });
  return out;
}

/// Q estimates for every allowed pair, laid out as (S x A) tables.
template <GenerativeEnvironment Env>
std::pair<Tabled, Tabled> estimate_q_table(const Env& env, const StationaryPolicyd& policy, const VectorXd& lambda,
                                           const MCConfig& cfg) {
  std::vector<std::pair<Index, Index>> queries;
  for (Index s = 0; s < env.n_states(); ++s)
    for (Index a = 0; a < env.n_actions(); ++a)
      if (env.is_allowed(s, a)) queries.emplace_back(s, a);
  const QEstimate est = estimate_q(env, policy, lambda, queries, cfg);
  Tabled mean = Tabled::Zero(env.n_states(), env.n_actions());
  Tabled se = Tabled::Zero(env.n_states(), env.n_actions());
  for (std::size_t i = 0; i < queries.size(); ++i) {
    mean(queries[i].first, queries[i].second) = est.mean(static_cast<Index>(i));
    se(queries[i].first, queries[i].second) = est.se(static_cast<Index>(i));
  }
  return {mean, se};
}

/// Discounted truncated estimates of C and D_k from initial states drawn
/// from the environment's initial distribution. Replication r uses streams
/// with index r; per-replication totals are folded in index order.
template <GenerativeEnvironment Env>
CostEstimate estimate_constraints(const Env& env, const StationaryPolicyd& policy, const MCConfig& cfg) {
  validate_mc_config(cfg);
  if (policy.probs.rows() != env.n_states() || policy.probs.cols() != env.n_actions())
    throw std::invalid_argument("estimate_constraints: policy shape mismatch");
  detail::check_bias(env, cfg, std::max(env.cost_bound(), env.aux_bound()));
  const Index K = env.n_constraints();
  const PolicySampler sampler(policy);
  const double g = env.discount();
  const long R = cfg.replications;
  const long H = cfg.horizon;
  Tabled totals = Tabled::Zero(R, K + 1);

  parallel_for(R, resolve_workers(cfg.workers), [&](long r) {
    RandomStream env_rng(cfg.seed, static_cast<std::uint64_t>(r), env.random_tag());
    RandomStream pol_rng(cfg.seed, static_cast<std::uint64_t>(r), StreamTag::policy);
    std::vector<double> aux(static_cast<std::size_t>(std::max<Index>(K, 1)));
    Index s = env.sample_initial(env_rng);
    double weight = 1.0 - g;
    for (long t = 0; t < H; ++t) {
      const Index a = sampler.sample(s, pol_rng);
      double c = 0.0;
      const Index next = env.step(s, a, env_rng, c, aux.data());
      totals(r, 0) += weight * c;
      for (Index k = 0; k < K; ++k) totals(r, k + 1) += weight * aux[static_cast<std::size_t>(k)];
      weight *= g;
      s = next;
    }
  });

  CostEstimate out;
  VectorXd mean(K + 1), se(K + 1);
  for (Index j = 0; j <= K; ++j) {
    detail::Moments mom;
    for (long r = 0; r < R; ++r) mom.add(totals(r, j));
    mean(j) = mom.sum / static_cast<double>(R);
    se(j) = detail::standard_error(mom);
  }
  out.objective = mean(0);
  out.se_objective = se(0);
  out.constraints = mean.tail(K);
  out.se_constraints = se.tail(K);
  return out;
}

/// Samples transitions of a TabularCMDP; costs are the tabulated (expected) values.
class TabularEnvironment {
 public:
  explicit TabularEnvironment(const TabularCMDPd& cmdp);

  Index n_states() const { return cmdp_->n_states; }
  Index n_actions() const { return cmdp_->n_actions; }
  Index n_constraints() const { return cmdp_->n_constraints(); }
  double discount() const { return cmdp_->discount; }
  const VectorXd& thresholds() const { return cmdp_->thresholds; }
  bool is_allowed(Index s, Index a) const { return cmdp_->is_allowed(s, a); }
  double cost_bound() const { return cost_bound_; }
  double aux_bound() const { return aux_bound_; }
  StreamTag random_tag() const { return StreamTag::state_sampling; }

  Index sample_initial(RandomStream& rng) const;

  Index step(Index s, Index a, RandomStream& rng, double& cost, double* aux) const {
    const Index row = cmdp_->pair(s, a);
    cost = cmdp_->cost(s, a);
    for (Index k = 0; k < cmdp_->n_constraints(); ++k) aux[k] = cmdp_->aux_costs[static_cast<std::size_t>(k)](s, a);
    const Index begin = offsets_[static_cast<std::size_t>(row)];
    const Index end = offsets_[static_cast<std::size_t>(row) + 1];
    const double u = rng.uniform();
    for (Index i = begin; i + 1 < end; ++i)
      if (u < cdf_[static_cast<std::size_t>(i)]) return next_[static_cast<std::size_t>(i)];
    return next_[static_cast<std::size_t>(end - 1)];
  }

 private:
  const TabularCMDPd* cmdp_;
  std::vector<Index> offsets_;
  std::vector<Index> next_;
  std::vector<double> cdf_;
  std::vector<double> init_cdf_;
  double cost_bound_ = 0.0;
  double aux_bound_ = 0.0;
};

/// Policy evaluator backed by Monte Carlo on a generative environment. The
/// CMDP passed to evaluate() only fixes the shape; all values are sampled.
template <GenerativeEnvironment Env>
class MonteCarloEvaluator final : public PolicyEvaluator {
 public:
  MonteCarloEvaluator(const Env& env, MCConfig cfg) : env_(&env), cfg_(cfg) {}

  Evaluation evaluate(const TabularCMDPd&, const StationaryPolicyd& policy, const VectorXd& lambda,
                      std::uint64_t seed) const override {
    MCConfig q_cfg = cfg_;
    q_cfg.seed = derive_seed(seed, 1);
    MCConfig c_cfg = cfg_;
    c_cfg.seed = derive_seed(seed, 2);
    Evaluation ev;
    ev.q = estimate_q_table(*env_, policy, lambda, q_cfg).first;
    const CostEstimate costs = estimate_constraints(*env_, policy, c_cfg);
    ev.objective = costs.objective;
    ev.se_objective = costs.se_objective;
    ev.constraints = costs.constraints;
    ev.se_constraints = costs.se_constraints;
    return ev;
  }
  bool exact() const override { return false; }

 private:
  const Env* env_;
  MCConfig cfg_;
};

}  // namespace cmdp
