#pragma once

// Multi-product newsvendor with a shared budget on post-order inventory.
// Per product: s' = max(s + a - w, lower), orders a in {0, ..., upper - s},
// cost h [s+a-w]^+ + b [w-s-a]^+, budget usage v [s+a]^+.

#include "cmdp/monte_carlo.hpp"
#include "cmdp/primal_dual.hpp"
#include "cmdp/random_stream.hpp"
#include "cmdp/weakly_coupled.hpp"

#include <utility>
#include <vector>

namespace cmdp::inventory {

struct InventoryConfig {
  /// pmf[i][w] = P(W_i = w), w = 0, 1, ...
  std::vector<std::vector<double>> demand_pmfs;
  std::vector<double> holding;
  std::vector<double> backlog;
  std::vector<double> resource;
  double budget = 10.0;
  double discount = 0.75;
  int lower = -10;
  int upper = 10;
  /// Per-product order cap; negative means upper - s only.
  int max_order = -1;
  /// Deterministic initial inventory per product (zero when empty).
  std::vector<int> init_state;
  /// Strict lower bound W on all costs.
  double cost_lower_bound = -1.0;

  Index n_products() const { return static_cast<Index>(holding.size()); }
  Index n_levels() const { return upper - lower + 1; }
};

/// Two products, demand uniform on {1..10}, h=(1,2), b=(2,3), v=(1.5,1),
/// q=10, discount 0.75, inventory in [-10, 10], zero initial inventory.
InventoryConfig paper_config();

/// Same economics with bounds [-3, 3] and demand uniform on {0, 1, 2}.
InventoryConfig reduced_config();

std::vector<double> uniform_pmf(int lo, int hi);

void validate(const InventoryConfig& cfg);

/// Largest feasible order at inventory level s.
int max_feasible_order(const InventoryConfig& cfg, int s);

int transition(const InventoryConfig& cfg, int s, int a, int w);
std::vector<int> transition(const InventoryConfig& cfg, const std::vector<int>& s, const std::vector<int>& a,
                            const std::vector<int>& w);

struct StepCosts {
  double cost = 0.0;
  double budget = 0.0;
};

/// Realized cost and budget usage of one product.
StepCosts step_costs(const InventoryConfig& cfg, Index product, int s, int a, int w);
StepCosts step_costs(const InventoryConfig& cfg, const std::vector<int>& s, const std::vector<int>& a,
                     const std::vector<int>& w);

/// Per-product MDP with expected costs; aux cost 0 is the product's budget
/// usage and the threshold is the full budget.
TabularCMDPd build_product(const InventoryConfig& cfg, Index product);

constexpr Index kMaxJointPairs = 100'000;

/// Joint CMDP over all products. Joint state index is the mixed-radix number
/// of per-product levels with product 0 most significant; joint actions
/// likewise. Throws std::length_error beyond kMaxJointPairs feasible pairs.
TabularCMDPd build_tabular(const InventoryConfig& cfg);

WeaklyCoupledCMDP as_weakly_coupled(const InventoryConfig& cfg);

/// Sampling model of one product with state index s - lower and action index a.
class ProductEnvironment {
 public:
  ProductEnvironment(const InventoryConfig& cfg, Index product);

  Index n_states() const { return levels_; }
  Index n_actions() const { return levels_; }
  Index n_constraints() const { return 1; }
  double discount() const { return discount_; }
  const VectorXd& thresholds() const { return thresholds_; }
  bool is_allowed(Index s, Index a) const { return a <= cap(s); }
  double cost_bound() const { return cost_bound_; }
  double aux_bound() const { return aux_bound_; }
  StreamTag random_tag() const { return StreamTag::demand; }

  Index sample_initial(RandomStream&) const { return init_; }

  int sample_demand(RandomStream& rng) const {
    if (uniform_span_ > 0) return uniform_lo_ + static_cast<int>(rng.below(static_cast<std::uint32_t>(uniform_span_)));
    const double u = rng.uniform();
    for (std::size_t w = 0; w + 1 < cdf_.size(); ++w)
      if (u < cdf_[w]) return static_cast<int>(w);
    return static_cast<int>(cdf_.size()) - 1;
  }

  Index step(Index s, Index a, RandomStream& rng, double& cost, double* aux) const {
    const int level = static_cast<int>(s) + lower_;
    const int post = level + static_cast<int>(a);
    const int w = sample_demand(rng);
    const int net = post - w;
    cost = net >= 0 ? holding_ * net : backlog_ * (-net);
    aux[0] = post > 0 ? resource_ * post : 0.0;
    return (net < lower_ ? lower_ : net) - lower_;
  }

 private:
  Index cap(Index s) const;

  Index levels_;
  int lower_;
  int upper_;
  int max_order_;
  double holding_;
  double backlog_;
  double resource_;
  double discount_;
  VectorXd thresholds_;
  Index init_;
  std::vector<double> cdf_;
  int uniform_lo_ = 0;
  int uniform_span_ = 0;
  double cost_bound_ = 0.0;
  double aux_bound_ = 0.0;
};

struct ExperimentOptions {
  StepSchedule schedule{StepKind::constant, 0.2};
  long iterations = 500;
  long replications = 400;
  long horizon = 40;
  std::uint64_t seed = 0;
  double slack = 1.0;
  /// Lambda-domain bound M; computed from the never-order policy when unset.
  std::optional<double> bound;
  int workers = 0;
};

struct ExperimentResult {
  DecomposedResult run;
  double bound_M = 0.0;
  /// (1 - discount)-normalized trail values at the last iteration.
  double final_running_avg_cost = 0.0;
  double final_violation = 0.0;
  double final_avg_iterate_violation = 0.0;
  /// Exact costs of the averaged policy from the per-product tables.
  double exact_avg_cost = 0.0;
  double exact_violation = 0.0;
  double discount = 0.75;
};

/// Decomposed primal-dual with Monte Carlo evaluation on the given config.
ExperimentResult run_experiment(const InventoryConfig& cfg, const ExperimentOptions& options);

/// Lambda bound from the never-order policy with c_tilde = 0.
double never_order_bound(const InventoryConfig& cfg);

}  // namespace cmdp::inventory
