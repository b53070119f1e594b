#include "cmdp/inventory.hpp"

#include <algorithm>
#include <memory>
#include <numeric>
#include <stdexcept>

namespace cmdp::inventory {

std::vector<double> uniform_pmf(int lo, int hi) {
  if (lo < 0 || hi < lo) throw std::invalid_argument("uniform_pmf: need 0 <= lo <= hi");
  std::vector<double> pmf(static_cast<std::size_t>(hi) + 1, 0.0);
  for (int w = lo; w <= hi; ++w) pmf[static_cast<std::size_t>(w)] = 1.0 / (hi - lo + 1);
  return pmf;
}

InventoryConfig paper_config() {
  InventoryConfig cfg;
  cfg.demand_pmfs = {uniform_pmf(1, 10), uniform_pmf(1, 10)};
  cfg.holding = {1.0, 2.0};
  cfg.backlog = {2.0, 3.0};
  cfg.resource = {1.5, 1.0};
  cfg.budget = 10.0;
  cfg.discount = 0.75;
  cfg.lower = -10;
  cfg.upper = 10;
  cfg.init_state = {0, 0};
  return cfg;
}

InventoryConfig reduced_config() {
  InventoryConfig cfg = paper_config();
  cfg.demand_pmfs = {uniform_pmf(0, 2), uniform_pmf(0, 2)};
  cfg.lower = -3;
  cfg.upper = 3;
  return cfg;
}

void validate(const InventoryConfig& cfg) {
  const auto I = static_cast<std::size_t>(cfg.n_products());
  if (I == 0) throw std::invalid_argument("inventory: at least one product required");
  if (cfg.backlog.size() != I || cfg.resource.size() != I || cfg.demand_pmfs.size() != I)
    throw std::invalid_argument("inventory: per-product parameter lengths differ");
  if (!cfg.init_state.empty() && cfg.init_state.size() != I)
    throw std::invalid_argument("inventory: init_state length differs from the product count");
  if (!(cfg.lower < cfg.upper)) throw std::invalid_argument("inventory: lower bound must be below upper bound");
  if (!(cfg.discount > 0.0 && cfg.discount < 1.0)) throw std::invalid_argument("inventory: discount must lie in (0,1)");
  if (!(cfg.cost_lower_bound < 0.0)) throw std::invalid_argument("inventory: costs can be zero, so W must be negative");
  for (std::size_t i = 0; i < I; ++i) {
    if (!(cfg.holding[i] > 0.0 && cfg.backlog[i] > 0.0 && cfg.resource[i] > 0.0))
      throw std::invalid_argument("inventory: h, b, v must be positive");
    const auto& pmf = cfg.demand_pmfs[i];
    if (pmf.empty() || std::any_of(pmf.begin(), pmf.end(), [](double p) { return p < 0.0; }))
      throw std::invalid_argument("inventory: demand pmf entries must be nonnegative");
    if (std::abs(std::accumulate(pmf.begin(), pmf.end(), 0.0) - 1.0) > 1e-12)
      throw std::invalid_argument("inventory: demand pmf must sum to 1");
    if (!cfg.init_state.empty() && (cfg.init_state[i] < cfg.lower || cfg.init_state[i] > cfg.upper))
      throw std::invalid_argument("inventory: initial state outside the bounds");
  }
}

int max_feasible_order(const InventoryConfig& cfg, int s) {
  const int room = cfg.upper - s;
  return cfg.max_order >= 0 ? std::min(room, cfg.max_order) : room;
}

int transition(const InventoryConfig& cfg, int s, int a, int w) {
  if (s < cfg.lower || s > cfg.upper) throw std::invalid_argument("inventory: state outside the bounds");
  if (a < 0 || a > max_feasible_order(cfg, s)) throw std::invalid_argument("inventory: infeasible order");
  if (w < 0) throw std::invalid_argument("inventory: negative demand");
  return std::clamp(s + a - w, cfg.lower, cfg.upper);
}

std::vector<int> transition(const InventoryConfig& cfg, const std::vector<int>& s, const std::vector<int>& a,
                            const std::vector<int>& w) {
  if (s.size() != a.size() || s.size() != w.size()) throw std::invalid_argument("inventory: length mismatch");
  std::vector<int> out(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) out[i] = transition(cfg, s[i], a[i], w[i]);
  return out;
}

StepCosts step_costs(const InventoryConfig& cfg, Index product, int s, int a, int w) {
  const auto i = static_cast<std::size_t>(product);
  const int net = s + a - w;
  StepCosts out;
  out.cost = cfg.holding[i] * std::max(net, 0) + cfg.backlog[i] * std::max(-net, 0);
  out.budget = cfg.resource[i] * std::max(s + a, 0);
  return out;
}

StepCosts step_costs(const InventoryConfig& cfg, const std::vector<int>& s, const std::vector<int>& a,
                     const std::vector<int>& w) {
  if (s.size() != a.size() || s.size() != w.size()) throw std::invalid_argument("inventory: length mismatch");
  StepCosts out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const StepCosts part = step_costs(cfg, static_cast<Index>(i), s[i], a[i], w[i]);
    out.cost += part.cost;
    out.budget += part.budget;
  }
  return out;
}

namespace {

struct ProductTables {
  Tabled cost;
  Tabled budget;
  Mask allowed;
  /// next[(s * L + a)] = sorted (level index, prob) pairs.
  std::vector<std::vector<std::pair<Index, double>>> next;
};

ProductTables product_tables(const InventoryConfig& cfg, Index product) {
  const Index L = cfg.n_levels();
  const auto& pmf = cfg.demand_pmfs[static_cast<std::size_t>(product)];
  ProductTables t;
  t.cost = Tabled::Zero(L, L);
  t.budget = Tabled::Zero(L, L);
  t.allowed = Mask::Constant(L, L, false);
  t.next.resize(static_cast<std::size_t>(L * L));
  for (Index si = 0; si < L; ++si) {
    const int s = static_cast<int>(si) + cfg.lower;
    for (int a = 0; a <= max_feasible_order(cfg, s); ++a) {
      t.allowed(si, a) = true;
      std::vector<double> dist(static_cast<std::size_t>(L), 0.0);
      double c = 0.0;
      for (std::size_t w = 0; w < pmf.size(); ++w) {
        if (pmf[w] == 0.0) continue;
        const int wi = static_cast<int>(w);
        c += pmf[w] * step_costs(cfg, product, s, a, wi).cost;
        dist[static_cast<std::size_t>(transition(cfg, s, a, wi) - cfg.lower)] += pmf[w];
      }
      t.cost(si, a) = c;
      t.budget(si, a) = step_costs(cfg, product, s, a, 0).budget;
      auto& row = t.next[static_cast<std::size_t>(si * L + a)];
      for (Index n = 0; n < L; ++n)
        if (dist[static_cast<std::size_t>(n)] > 0.0) row.emplace_back(n, dist[static_cast<std::size_t>(n)]);
    }
  }
  return t;
}

Index init_level(const InventoryConfig& cfg, Index product) {
  const int s = cfg.init_state.empty() ? 0 : cfg.init_state[static_cast<std::size_t>(product)];
  return s - cfg.lower;
}

}  // namespace

TabularCMDPd build_product(const InventoryConfig& cfg, Index product) {
  validate(cfg);
  if (product < 0 || product >= cfg.n_products()) throw std::out_of_range("inventory: product index");
  const Index L = cfg.n_levels();
  const ProductTables t = product_tables(cfg, product);
  TabularCMDPd m;
  m.n_states = L;
  m.n_actions = L;
  m.cost = t.cost;
  m.aux_costs = {t.budget};
  m.thresholds = VectorXd::Constant(1, cfg.budget);
  m.discount = cfg.discount;
  m.init_dist = VectorXd::Zero(L);
  m.init_dist(init_level(cfg, product)) = 1.0;
  m.cost_lower_bound = cfg.cost_lower_bound;
  m.allowed = t.allowed;
  std::vector<Eigen::Triplet<double>> triplets;
  for (Index s = 0; s < L; ++s)
    for (Index a = 0; a < L; ++a)
      for (const auto& [n, p] : t.next[static_cast<std::size_t>(s * L + a)]) triplets.emplace_back(s * L + a, n, p);
  m.kernel.resize(L * L, L);
  m.kernel.setFromTriplets(triplets.begin(), triplets.end());
  return m;
}

TabularCMDPd build_tabular(const InventoryConfig& cfg) {
  validate(cfg);
  const Index I = cfg.n_products();
  const Index L = cfg.n_levels();
  std::vector<ProductTables> tables;
  for (Index i = 0; i < I; ++i) tables.push_back(product_tables(cfg, i));

  Index S = 1;
  Index pairs = 1;
  for (Index i = 0; i < I; ++i) {
    S *= L;
    pairs *= tables[static_cast<std::size_t>(i)].allowed.count();
    if (pairs > kMaxJointPairs || S > kMaxJointPairs)
      throw std::length_error("inventory: joint instance exceeds " + std::to_string(kMaxJointPairs) +
                              " feasible state-action pairs");
  }
  const Index A = S;

  auto decode = [&](Index x, std::vector<Index>& digits) {
    for (Index i = I - 1; i >= 0; --i) {
      digits[static_cast<std::size_t>(i)] = x % L;
      x /= L;
    }
  };

  TabularCMDPd m;
  m.n_states = S;
  m.n_actions = A;
  m.cost = Tabled::Zero(S, A);
  m.aux_costs = {Tabled::Zero(S, A)};
  m.thresholds = VectorXd::Constant(1, cfg.budget);
  m.discount = cfg.discount;
  m.cost_lower_bound = cfg.cost_lower_bound;
  m.allowed = Mask::Constant(S, A, false);
  m.init_dist = VectorXd::Zero(S);
  Index init = 0;
  for (Index i = 0; i < I; ++i) init = init * L + init_level(cfg, i);
  m.init_dist(init) = 1.0;

  std::vector<Index> sd(static_cast<std::size_t>(I)), ad(static_cast<std::size_t>(I));
  Eigen::VectorXi row_nnz = Eigen::VectorXi::Zero(S * A);
  for (Index s = 0; s < S; ++s) {
    decode(s, sd);
    for (Index a = 0; a < A; ++a) {
      decode(a, ad);
      bool ok = true;
      int nnz = 1;
      for (Index i = 0; i < I && ok; ++i) {
        const auto& t = tables[static_cast<std::size_t>(i)];
        ok = t.allowed(sd[static_cast<std::size_t>(i)], ad[static_cast<std::size_t>(i)]);
        if (ok) nnz *= static_cast<int>(t.next[static_cast<std::size_t>(sd[i] * L + ad[i])].size());
      }
      if (!ok) continue;
      m.allowed(s, a) = true;
      row_nnz(s * A + a) = nnz;
      for (Index i = 0; i < I; ++i) {
        const auto& t = tables[static_cast<std::size_t>(i)];
        m.cost(s, a) += t.cost(sd[static_cast<std::size_t>(i)], ad[static_cast<std::size_t>(i)]);
        m.aux_costs[0](s, a) += t.budget(sd[static_cast<std::size_t>(i)], ad[static_cast<std::size_t>(i)]);
      }
    }
  }

  m.kernel.resize(S * A, S);
  m.kernel.reserve(row_nnz);
  std::vector<std::size_t> pos(static_cast<std::size_t>(I));
  for (Index s = 0; s < S; ++s) {
    decode(s, sd);
    for (Index a = 0; a < A; ++a) {
      if (!m.allowed(s, a)) continue;
      decode(a, ad);
      std::vector<const std::vector<std::pair<Index, double>>*> rows(static_cast<std::size_t>(I));
      for (Index i = 0; i < I; ++i)
        rows[static_cast<std::size_t>(i)] =
            &tables[static_cast<std::size_t>(i)].next[static_cast<std::size_t>(sd[i] * L + ad[i])];
      std::fill(pos.begin(), pos.end(), 0);
      // Odometer over per-product next levels; lexicographic order keeps columns sorted.
      for (;;) {
        Index col = 0;
        double p = 1.0;
        for (Index i = 0; i < I; ++i) {
          const auto& e = (*rows[static_cast<std::size_t>(i)])[pos[static_cast<std::size_t>(i)]];
          col = col * L + e.first;
          p *= e.second;
        }
        m.kernel.insert(s * A + a, col) = p;
        Index i = I - 1;
        while (i >= 0 && ++pos[static_cast<std::size_t>(i)] == rows[static_cast<std::size_t>(i)]->size()) {
          pos[static_cast<std::size_t>(i)] = 0;
          --i;
        }
        if (i < 0) break;
      }
    }
  }
  m.kernel.makeCompressed();
  return m;
}

WeaklyCoupledCMDP as_weakly_coupled(const InventoryConfig& cfg) {
  validate(cfg);
  WeaklyCoupledCMDP wc;
  wc.discount = cfg.discount;
  wc.thresholds = VectorXd::Constant(1, cfg.budget);
  for (Index i = 0; i < cfg.n_products(); ++i) {
    const TabularCMDPd product = build_product(cfg, i);
    wc.subproblems.push_back(make_subproblem(product, product.aux_costs));
  }
  return wc;
}

ProductEnvironment::ProductEnvironment(const InventoryConfig& cfg, Index product) {
  validate(cfg);
  const auto i = static_cast<std::size_t>(product);
  levels_ = cfg.n_levels();
  lower_ = cfg.lower;
  upper_ = cfg.upper;
  max_order_ = cfg.max_order;
  holding_ = cfg.holding[i];
  backlog_ = cfg.backlog[i];
  resource_ = cfg.resource[i];
  discount_ = cfg.discount;
  thresholds_ = VectorXd::Zero(1);
  init_ = init_level(cfg, product);
  const auto& pmf = cfg.demand_pmfs[i];
  double run = 0.0;
  for (double p : pmf) cdf_.push_back(run += p);
  // Contiguous uniform support gets an exact integer sampler.
  int lo = -1, hi = -1;
  bool uniform = true;
  for (std::size_t w = 0; w < pmf.size(); ++w) {
    if (pmf[w] == 0.0) continue;
    if (lo < 0) lo = static_cast<int>(w);
    if (hi >= 0 && static_cast<int>(w) != hi + 1) uniform = false;
    hi = static_cast<int>(w);
    if (pmf[w] != pmf[static_cast<std::size_t>(lo)]) uniform = false;
  }
  if (uniform) {
    uniform_lo_ = lo;
    uniform_span_ = hi - lo + 1;
  }
  const int max_w = static_cast<int>(pmf.size()) - 1;
  cost_bound_ = std::max(holding_ * (upper_ - 0), backlog_ * (max_w - lower_));
  aux_bound_ = resource_ * upper_;
}

Index ProductEnvironment::cap(Index s) const {
  const int room = upper_ - (static_cast<int>(s) + lower_);
  return max_order_ >= 0 ? std::min(room, max_order_) : room;
}

double never_order_bound(const InventoryConfig& cfg) {
  PolicyCostsd total{0.0, VectorXd::Zero(1)};
  for (Index i = 0; i < cfg.n_products(); ++i) {
    const TabularCMDPd product = build_product(cfg, i);
    const StationaryPolicyd never =
        deterministic_policy(product, std::vector<Index>(static_cast<std::size_t>(product.n_states), 0));
    const PolicyCostsd c = costs_of_policy(product, never);
    total.objective += c.objective;
    total.constraints += c.constraints;
  }
  return slater_lambda_bound(0.0, total, VectorXd(VectorXd::Constant(1, cfg.budget)));
}

ExperimentResult run_experiment(const InventoryConfig& cfg, const ExperimentOptions& options) {
  const WeaklyCoupledCMDP wc = as_weakly_coupled(cfg);
  std::vector<ProductEnvironment> envs;
  for (Index i = 0; i < cfg.n_products(); ++i) envs.emplace_back(cfg, i);
  MCConfig mc;
  mc.replications = options.replications;
  mc.horizon = options.horizon;
  mc.workers = options.workers;
  std::vector<std::unique_ptr<MonteCarloEvaluator<ProductEnvironment>>> owned;
  SubEvaluators evaluators;
  for (const auto& env : envs) {
    owned.push_back(std::make_unique<MonteCarloEvaluator<ProductEnvironment>>(env, mc));
    evaluators.push_back(owned.back().get());
  }

  ExperimentResult out;
  out.discount = cfg.discount;
  out.bound_M = options.bound ? *options.bound : never_order_bound(cfg);
  DecomposedConfig dc;
  dc.solver.schedule = options.schedule;
  dc.solver.iterations = options.iterations;
  dc.solver.seed = options.seed;
  dc.solver.domain = {out.bound_M, options.slack};
  dc.solver.initial_lambda = VectorXd::Zero(1);
  dc.workers = 1;
  out.run = run_decomposed(wc, dc, evaluators);

  const IterationRecord& last = out.run.trail.back();
  out.final_running_avg_cost = last.running_avg_objective;
  out.final_violation = last.running_violation;
  out.final_avg_iterate_violation = last.running_avg_iterate_violation;
  VectorXd d = VectorXd::Zero(1);
  for (std::size_t i = 0; i < wc.subproblems.size(); ++i) {
    const PolicyCostsd c = costs_of_policy(wc.subproblems[i], out.run.mixing[i]);
    out.exact_avg_cost += c.objective;
    d += c.constraints;
  }
  out.exact_violation = violation_norm(d, wc.thresholds);
  return out;
}

}  // namespace cmdp::inventory
