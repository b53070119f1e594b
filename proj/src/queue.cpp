#include "cmdp/queue.hpp"

#include "cmdp/monte_carlo.hpp"
#include "cmdp/parallel.hpp"

#include <boost/graph/adjacency_list.hpp>
#include <boost/graph/successive_shortest_path_nonnegative_weights.hpp>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>

namespace cmdp::queue {

std::string to_string(CostRegime regime) { return regime == CostRegime::large ? "large" : "small"; }

CostRegime parse_cost_regime(const std::string& text) {
  if (text == "large") return CostRegime::large;
  if (text == "small") return CostRegime::small;
  throw std::invalid_argument("unknown cost regime '" + text + "'");
}

std::string PriorityAction::label() const {
  std::ostringstream os;
  os << "(";
  for (int p : pools) os << p + 1 << ",";
  os << "-1)";
  return os.str();
}

Tabled routing_costs(CostRegime regime) {
  Tabled r(3, 3);
  if (regime == CostRegime::large)
    r << 0, 2, 2, 3, 0, 3, 1, 1, 0;
  else
    r << 0, 0.2, 0.2, 0.3, 0, 0.3, 0.1, 0.1, 0;
  return r;
}

namespace {

QueueConfig base_config(CostRegime regime, double discount) {
  QueueConfig cfg;
  cfg.service_probs.resize(3, 3);
  cfg.service_probs << 0.3, 0.25, 0.2, 0.15, 0.3, 0.2, 0.25, 0.1, 0.4;
  cfg.holding = (VectorXd(3) << 3, 2, 1).finished();
  cfg.routing = routing_costs(regime);
  cfg.regime = regime;
  cfg.discount = discount;
  cfg.primary = (IntVector(3) << 0, 1, 2).finished();
  return cfg;
}

}  // namespace

QueueConfig paper_config(CostRegime regime, double discount) {
  QueueConfig cfg = base_config(regime, discount);
  cfg.arrival_rates = (VectorXd(3) << 12, 16, 20).finished();
  cfg.pool_sizes = (IntVector(3) << 40, 50, 60).finished();
  if (discount == 0.9)
    cfg.horizon = 100;
  else if (discount == 0.95)
    cfg.horizon = 150;
  else if (discount == 0.99)
    cfg.horizon = 800;
  else
    cfg.horizon = default_horizon(discount);
  cfg.init_state.X = IntVector::Constant(3, 50);
  cfg.init_state.Z = IntMatrix::Zero(3, 3);
  cfg.init_state.Z.diagonal() << 20, 30, 40;
  cfg.action_sets = primary_first_actions(cfg);
  return cfg;
}

QueueConfig scaled_config(CostRegime regime, double discount) {
  QueueConfig cfg = base_config(regime, discount);
  cfg.arrival_rates = (VectorXd(3) << 1.2, 1.6, 2.0).finished();
  cfg.pool_sizes = (IntVector(3) << 4, 5, 6).finished();
  cfg.horizon = 100;
  cfg.init_state.X = IntVector::Constant(3, 5);
  cfg.init_state.Z = IntMatrix::Zero(3, 3);
  cfg.init_state.Z.diagonal() << 2, 3, 4;
  cfg.action_sets = primary_first_actions(cfg);
  return cfg;
}

std::vector<std::vector<PriorityAction>> primary_first_actions(const QueueConfig& cfg) {
  std::vector<std::vector<PriorityAction>> sets;
  for (Index i = 0; i < cfg.n_classes(); ++i) {
    const int p = cfg.primary(i);
    std::vector<int> others;
    for (Index j = 0; j < cfg.n_pools(); ++j)
      if (j != p && cfg.service_probs(i, j) > 0.0) others.push_back(static_cast<int>(j));
    std::vector<PriorityAction> actions{{{p}}};
    // Ordered subsets of the other pools, shortest first.
    for (std::size_t len = 1; len <= others.size(); ++len) {
      std::vector<int> pick(others);
      std::sort(pick.begin(), pick.end());
      std::vector<std::vector<int>> seen;
      do {
        std::vector<int> prefix(pick.begin(), pick.begin() + static_cast<long>(len));
        if (std::find(seen.begin(), seen.end(), prefix) != seen.end()) continue;
        seen.push_back(prefix);
        PriorityAction a{{p}};
        a.pools.insert(a.pools.end(), prefix.begin(), prefix.end());
        actions.push_back(a);
      } while (std::next_permutation(pick.begin(), pick.end()));
    }
    sets.push_back(actions);
  }
  return sets;
}

void validate(const QueueConfig& cfg) {
  const Index I = cfg.n_classes();
  const Index J = cfg.n_pools();
  if (I < 1 || J < 1) throw std::invalid_argument("queue: need at least one class and one pool");
  if (J > kMaxPools) throw std::invalid_argument("queue: too many pools");
  if (cfg.service_probs.rows() != I || cfg.service_probs.cols() != J || cfg.routing.rows() != I ||
      cfg.routing.cols() != J || cfg.holding.size() != I || cfg.primary.size() != I)
    throw std::invalid_argument("queue: parameter shapes disagree");
  if ((cfg.arrival_rates.array() <= 0.0).any()) throw std::invalid_argument("queue: arrival rates must be positive");
  if ((cfg.service_probs.array() < 0.0).any() || (cfg.service_probs.array() > 1.0).any())
    throw std::invalid_argument("queue: service probabilities must lie in [0,1]");
  if ((cfg.pool_sizes.array() < 1).any()) throw std::invalid_argument("queue: pool sizes must be at least 1");
  if (!(cfg.discount > 0.0 && cfg.discount < 1.0)) throw std::invalid_argument("queue: discount must lie in (0,1)");
  if (cfg.horizon < 1) throw std::invalid_argument("queue: horizon must be positive");
  for (Index i = 0; i < I; ++i)
    if (cfg.primary(i) < 0 || cfg.primary(i) >= J) throw std::invalid_argument("queue: primary pool out of range");
  if (static_cast<Index>(cfg.action_sets.size()) != I) throw std::invalid_argument("queue: one action set per class");
  for (Index i = 0; i < I; ++i) {
    if (cfg.action_sets[static_cast<std::size_t>(i)].empty()) throw std::invalid_argument("queue: empty action set");
    for (const auto& a : cfg.action_sets[static_cast<std::size_t>(i)])
      for (int p : a.pools)
        if (p < 0 || p >= J) throw std::invalid_argument("queue: action references an unknown pool");
  }
  if (!is_valid_state(cfg, cfg.init_state)) throw std::invalid_argument("queue: invalid initial state");
}

bool is_valid_state(const QueueConfig& cfg, const QueueState& state) {
  if (state.X.size() != cfg.n_classes() || state.Z.rows() != cfg.n_classes() || state.Z.cols() != cfg.n_pools())
    return false;
  if ((state.X.array() < 0).any() || (state.Z.array() < 0).any()) return false;
  for (Index j = 0; j < cfg.n_pools(); ++j)
    if (state.Z.col(j).sum() > cfg.pool_sizes(j)) return false;
  return true;
}

bool is_feasible_assignment(const QueueConfig& cfg, const QueueState& state, const IntMatrix& U) {
  if (U.rows() != cfg.n_classes() || U.cols() != cfg.n_pools()) return false;
  if ((U.array() < 0).any()) return false;
  for (Index i = 0; i < cfg.n_classes(); ++i)
    if (U.row(i).sum() > state.X(i)) return false;
  for (Index j = 0; j < cfg.n_pools(); ++j)
    if (state.Z.col(j).sum() + U.col(j).sum() > cfg.pool_sizes(j)) return false;
  return true;
}

VectorXd nominal_traffic_intensity(const QueueConfig& cfg) {
  VectorXd rho(cfg.n_classes());
  for (Index i = 0; i < cfg.n_classes(); ++i) {
    const Index p = cfg.primary(i);
    rho(i) = cfg.arrival_rates(i) / (cfg.pool_sizes(p) * cfg.service_probs(i, p));
  }
  return rho;
}

namespace {

int poisson(double mean, RandomStream& rng) { return std::poisson_distribution<int>(mean)(rng); }

int binomial(int n, double p, RandomStream& rng) {
  if (n <= 0 || p <= 0.0) return 0;
  if (p >= 1.0) return n;
  return std::binomial_distribution<int>(n, p)(rng);
}

}  // namespace

QueueState transition(const QueueConfig& cfg, const QueueState& state, const IntMatrix& U, RandomStream& arrivals,
                      RandomStream& services) {
  if (!is_feasible_assignment(cfg, state, U)) throw std::invalid_argument("queue: assignment violates hard constraints");
  QueueState next = state;
  for (Index i = 0; i < cfg.n_classes(); ++i) {
    next.X(i) += poisson(cfg.arrival_rates(i), arrivals) - U.row(i).sum();
    for (Index j = 0; j < cfg.n_pools(); ++j) {
      const int busy = state.Z(i, j) + U(i, j);
      next.Z(i, j) = busy - binomial(busy, cfg.service_probs(i, j), services);
    }
  }
  return next;
}

double period_cost(const QueueConfig& cfg, const QueueState& state, const IntMatrix& U) {
  return cfg.holding.dot(state.X.cast<double>()) + (cfg.routing.array() * U.cast<double>().array()).sum();
}

IntVector apply_priority(int queue_length, const PriorityAction& action, const IntVector& residual) {
  IntVector u = IntVector::Zero(residual.size());
  int left = std::max(queue_length, 0);
  for (int p : action.pools) {
    if (left == 0) break;
    const int take = std::min(left, std::max(residual(p) - u(p), 0));
    u(p) += take;
    left -= take;
  }
  return u;
}

IntMatrix benchmark_assignment(const QueueConfig& cfg, const QueueState& state, const Tabled& weights) {
  using Traits = boost::adjacency_list_traits<boost::vecS, boost::vecS, boost::directedS>;
  using Graph = boost::adjacency_list<
      boost::vecS, boost::vecS, boost::directedS, boost::no_property,
      boost::property<boost::edge_capacity_t, long,
                      boost::property<boost::edge_residual_capacity_t, long,
                                      boost::property<boost::edge_reverse_t, Traits::edge_descriptor,
                                                      boost::property<boost::edge_weight_t, long>>>>>;
  using Edge = Traits::edge_descriptor;

  const Index I = cfg.n_classes();
  const Index J = cfg.n_pools();
  if (weights.rows() != I || weights.cols() != J) throw std::invalid_argument("benchmark_assignment: weight shape");
  IntMatrix U = IntMatrix::Zero(I, J);
  if (state.X.sum() == 0) return U;

  double shift = 0.0;
  for (Index i = 0; i < I; ++i)
    for (Index j = 0; j < J; ++j)
      if (cfg.service_probs(i, j) > 0.0) shift = std::max(shift, weights(i, j));
  if (!(shift > 0.0)) return U;

  Graph g(static_cast<std::size_t>(I + J + 2));
  auto cap = boost::get(boost::edge_capacity, g);
  auto rev = boost::get(boost::edge_reverse, g);
  auto cost = boost::get(boost::edge_weight, g);
  // Integer arc costs keep the reduced costs exact inside Dijkstra; doubles
  // drift slightly negative and the solver rejects them.
  const double scale = std::ldexp(1.0, 32) / shift;
  auto add = [&](Index u, Index v, long c, double wd) {
    const long w = std::lround(wd * scale);
    const Edge e = boost::add_edge(static_cast<std::size_t>(u), static_cast<std::size_t>(v), g).first;
    const Edge r = boost::add_edge(static_cast<std::size_t>(v), static_cast<std::size_t>(u), g).first;
    cap[e] = c;
    cap[r] = 0;
    cost[e] = w;
    cost[r] = -w;
    rev[e] = r;
    rev[r] = e;
    return e;
  };
  const Index source = 0;
  const Index sink = I + J + 1;
  std::vector<std::pair<Edge, std::pair<Index, Index>>> arcs;
  // Every unit of queue leaves through a pool or through the bypass arc at
  // cost `shift`; an arc to pool j costs shift - w_ij, so the min-cost flow
  // maximizes sum w_ij U_ij.
  for (Index i = 0; i < I; ++i) {
    if (state.X(i) <= 0) continue;
    add(source, 1 + i, state.X(i), 0.0);
    add(1 + i, sink, state.X(i), shift);
    for (Index j = 0; j < J; ++j)
      if (weights(i, j) > 0.0 && cfg.service_probs(i, j) > 0.0)
        arcs.push_back({add(1 + i, 1 + I + j, state.X(i), shift - weights(i, j)), {i, j}});
  }
  for (Index j = 0; j < J; ++j) {
    const long residual = cfg.pool_sizes(j) - state.Z.col(j).sum();
    if (residual > 0) add(1 + I + j, sink, residual, 0.0);
  }
  boost::successive_shortest_path_nonnegative_weights(g, static_cast<std::size_t>(source),
                                                      static_cast<std::size_t>(sink));
  auto residual = boost::get(boost::edge_residual_capacity, g);
  for (const auto& [e, ij] : arcs) U(ij.first, ij.second) = static_cast<int>(cap[e] - residual[e]);
  return U;
}

Tabled cmu_weights(const QueueConfig& cfg) {
  Tabled w = -cfg.routing;
  w.colwise() += cfg.holding;
  return w;
}

Tabled max_pressure_weights(const QueueConfig& cfg, const QueueState& state) {
  Tabled w = -cfg.routing;
  w.colwise() += cfg.holding.cwiseProduct(state.X.cast<double>());
  return w;
}

IntMatrix feasibility_modification(const QueueConfig& cfg, const QueueState& state, const IntMatrix& desired,
                                   RandomStream& admission) {
  const Index I = cfg.n_classes();
  const Index J = cfg.n_pools();
  if (desired.rows() != I || desired.cols() != J || (desired.array() < 0).any())
    throw std::invalid_argument("feasibility_modification: bad request shape or sign");
  for (Index i = 0; i < I; ++i)
    if (desired.row(i).sum() > state.X(i))
      throw std::invalid_argument("feasibility_modification: class " + std::to_string(i) + " requests exceed its queue");
  IntMatrix U = IntMatrix::Zero(I, J);
  for (Index j = 0; j < J; ++j) {
    int room = std::max(0, cfg.pool_sizes(j) - state.Z.col(j).sum());
    for (Index i = 0; i < I; ++i) {
      if (cfg.primary(i) != j) continue;
      U(i, j) = std::min(desired(i, j), room);
      room -= U(i, j);
    }
    int others = 0;
    for (Index i = 0; i < I; ++i)
      if (cfg.primary(i) != j) others += desired(i, j);
    if (others <= room) {
      for (Index i = 0; i < I; ++i)
        if (cfg.primary(i) != j) U(i, j) = desired(i, j);
      continue;
    }
    // Selection sampling: each of the `others` customers is admitted with
    // probability need/left, which yields a uniform room-subset.
    int need = room;
    int left = others;
    for (Index i = 0; i < I; ++i) {
      if (cfg.primary(i) == j) continue;
      for (int c = 0; c < desired(i, j); ++c, --left)
        if (need > 0 && static_cast<int>(admission.below(static_cast<std::uint32_t>(left))) < need) {
          ++U(i, j);
          --need;
        }
    }
  }
  return U;
}

VectorXd quadratic_features(const VectorXd& s) {
  const Index n = s.size();
  VectorXd phi(n * n + 1);
  phi(0) = 1.0;
  for (Index a = 0; a < n; ++a)
    for (Index b = 0; b < n; ++b) phi(1 + a * n + b) = s(a) * s(b);
  return phi;
}

// ---------------------------------------------------------------------------

ClassModel::ClassModel(const QueueConfig& cfg, Index cls) : cls_(cls) {
  validate(cfg);
  if (cls < 0 || cls >= cfg.n_classes()) throw std::out_of_range("queue: class index");
  J_ = cfg.n_pools();
  theta_ = cfg.arrival_rates(cls);
  holding_ = cfg.holding(cls);
  for (Index j = 0; j < J_; ++j) {
    mu_[static_cast<std::size_t>(j)] = cfg.service_probs(cls, j);
    route_[static_cast<std::size_t>(j)] = cfg.routing(cls, j);
    N_[static_cast<std::size_t>(j)] = cfg.pool_sizes(j);
    init_.z[static_cast<std::size_t>(j)] = cfg.init_state.Z(cls, j);
  }
  init_.x = cfg.init_state.X(cls);
  actions_ = cfg.action_sets[static_cast<std::size_t>(cls)];
  discount_ = cfg.discount;
}

VectorXd ClassModel::features(const ClassState& s) const {
  VectorXd v(J_ + 1);
  v(0) = s.x;
  for (Index j = 0; j < J_; ++j) v(1 + j) = s.z[static_cast<std::size_t>(j)];
  return quadratic_features(v);
}

void ClassModel::assign(const ClassState& s, Index action, int* u) const {
  std::fill(u, u + J_, 0);
  int left = s.x;
  for (int p : actions_[static_cast<std::size_t>(action)].pools) {
    if (left == 0) break;
    const int take = std::min(left, std::max(N_[static_cast<std::size_t>(p)] - s.z[static_cast<std::size_t>(p)] - u[p], 0));
    u[p] += take;
    left -= take;
  }
}

double ClassModel::step(ClassState& s, const int* u, const VectorXd& lambda, double* occupancy, RandomStream& arrivals,
                        RandomStream& services) const {
  double cost = holding_ * s.x;
  int assigned = 0;
  for (Index j = 0; j < J_; ++j) {
    const auto jj = static_cast<std::size_t>(j);
    const int busy = s.z[jj] + u[j];
    occupancy[j] = busy;
    cost += route_[jj] * u[j];
    if (lambda.size()) cost += lambda(j) * busy;
    assigned += u[j];
    s.z[jj] = busy - binomial(busy, mu_[jj], services);
  }
  s.x += poisson(theta_, arrivals) - assigned;
  return cost;
}

ClassPolicy ClassPolicy::uniform(const ClassModel& model) {
  return {Tabled::Zero(model.n_actions(), feature_dimension(model.n_pools()))};
}

VectorXd ClassPolicy::probabilities(const VectorXd& phi) const {
  VectorXd logits = -(weights * phi);
  logits.array() -= logits.maxCoeff();
  VectorXd p = logits.array().exp().max(kProbabilityFloor).matrix();
  return p / p.sum();
}

Index ClassPolicy::sample(const VectorXd& phi, RandomStream& rng) const {
  if (weights.isZero(0.0)) return static_cast<Index>(rng.below(static_cast<std::uint32_t>(weights.rows())));
  const VectorXd p = probabilities(phi);
  const double u = rng.uniform();
  double run = 0.0;
  for (Index a = 0; a + 1 < p.size(); ++a) {
    run += p(a);
    if (u < run) return a;
  }
  return p.size() - 1;
}

Index ClassPolicy::most_probable(const VectorXd& phi) const {
  const VectorXd logits = -(weights * phi);
  Index best = 0;
  for (Index a = 1; a < logits.size(); ++a)
    if (logits(a) > logits(best)) best = a;
  return best;
}

namespace {

long effective_horizon(const ClassModel& model, long horizon) {
  return horizon > 0 ? horizon : default_horizon(model.discount());
}

}  // namespace

std::vector<ClassState> sample_states(const ClassModel& model, const ClassPolicy& policy, const VfaConfig& cfg,
                                      std::uint64_t seed) {
  if (cfg.states < 1 || cfg.stride < 1 || cfg.burn_in < 0) throw std::invalid_argument("sample_states: bad config");
  const long length = std::max(effective_horizon(model, cfg.horizon), cfg.burn_in + cfg.stride);
  std::vector<ClassState> out;
  out.reserve(static_cast<std::size_t>(cfg.states));
  std::vector<int> u(static_cast<std::size_t>(model.n_pools()));
  std::vector<double> occ(static_cast<std::size_t>(model.n_pools()));
  const VectorXd no_lambda;
  for (std::uint64_t traj = 0; static_cast<long>(out.size()) < cfg.states; ++traj) {
    RandomStream arr(seed, traj, StreamTag::arrivals);
    RandomStream svc(seed, traj, StreamTag::services);
    RandomStream pol(seed, traj, StreamTag::policy);
    ClassState s = model.initial();
    for (long t = 0; t < length && static_cast<long>(out.size()) < cfg.states; ++t) {
      if (t >= cfg.burn_in && (t - cfg.burn_in) % cfg.stride == 0) out.push_back(s);
      model.assign(s, policy.sample(model.features(s), pol), u.data());
      model.step(s, u.data(), no_lambda, occ.data(), arr, svc);
    }
  }
  return out;
}

VectorXd estimate_class_q(const ClassModel& model, const ClassPolicy& policy, const VectorXd& lambda,
                          const std::vector<ClassState>& states, Index action, const VfaConfig& cfg,
                          std::uint64_t seed) {
  if (action < 0 || action >= model.n_actions()) throw std::out_of_range("estimate_class_q: action");
  if (lambda.size() != model.n_pools()) throw std::invalid_argument("estimate_class_q: lambda dimension");
  const long H = effective_horizon(model, cfg.horizon);
  const long R = std::max(1L, cfg.q_replications);
  const double g = model.discount();
  VectorXd out(static_cast<Index>(states.size()));
  parallel_for(static_cast<long>(states.size()), resolve_workers(cfg.workers), [&](long k) {
    const auto index = static_cast<std::uint64_t>(k) * static_cast<std::uint64_t>(model.n_actions()) +
                       static_cast<std::uint64_t>(action);
    RandomStream arr(seed, index, StreamTag::arrivals);
    RandomStream svc(seed, index, StreamTag::services);
    RandomStream pol(seed, index, StreamTag::policy);
    std::vector<int> u(static_cast<std::size_t>(model.n_pools()));
    std::vector<double> occ(static_cast<std::size_t>(model.n_pools()));
    double sum = 0.0;
    for (long r = 0; r < R; ++r) {
      ClassState s = states[static_cast<std::size_t>(k)];
      Index a = action;
      double weight = 1.0;
      double total = 0.0;
      for (long t = 0; t < H; ++t) {
        if (t > 0) a = policy.sample(model.features(s), pol);
        model.assign(s, a, u.data());
        total += weight * model.step(s, u.data(), lambda, occ.data(), arr, svc);
        weight *= g;
      }
      sum += (1.0 - g) * total;
    }
    out(k) = sum / static_cast<double>(R);
  });
  return out;
}

QuadraticVFA fit_least_squares(const ClassModel& model, const std::vector<ClassState>& states, const VectorXd& targets,
                               double ridge) {
  const auto M = static_cast<Index>(states.size());
  const Index d = feature_dimension(model.n_pools());
  if (targets.size() != M || M == 0) throw std::invalid_argument("fit_least_squares: need one target per state");
  if (ridge < 0.0) throw std::invalid_argument("fit_least_squares: ridge must be nonnegative");
  // min (1/M) ||Phi theta - y||^2 + ridge ||theta||^2 as a stacked least-squares problem.
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(M + d, d);
  VectorXd b = VectorXd::Zero(M + d);
  const double scale = 1.0 / std::sqrt(static_cast<double>(M));
  for (Index k = 0; k < M; ++k) {
    A.row(k) = scale * model.features(states[static_cast<std::size_t>(k)]).transpose();
    b(k) = scale * targets(k);
  }
  A.bottomRows(d).diagonal().setConstant(std::sqrt(ridge));
  QuadraticVFA out;
  out.theta = A.colPivHouseholderQr().solve(b);
  out.rmse = ((A.topRows(M) * out.theta - b.head(M)) / scale).norm() / std::sqrt(static_cast<double>(M));
  return out;
}

QuadraticVFA fit_vfa(const ClassModel& model, const ClassPolicy& policy, const VectorXd& lambda, Index action,
                     const VfaConfig& cfg, std::uint64_t seed) {
  if (cfg.states < feature_dimension(model.n_pools()))
    throw std::invalid_argument("fit_vfa: need at least as many states as features");
  const auto states = sample_states(model, policy, cfg, derive_seed(seed, 1));
  const VectorXd q = estimate_class_q(model, policy, lambda, states, action, cfg, derive_seed(seed, 2));
  return fit_least_squares(model, states, q, cfg.ridge);
}

ClassCosts simulate_class_costs(const ClassModel& model, const ClassPolicy& policy, long replications, long horizon,
                                std::uint64_t seed, int workers) {
  if (replications < 1) throw std::invalid_argument("simulate_class_costs: replications must be positive");
  const long H = effective_horizon(model, horizon);
  const Index J = model.n_pools();
  const double g = model.discount();
  Tabled totals = Tabled::Zero(replications, J + 1);
  parallel_for(replications, resolve_workers(workers), [&](long r) {
    RandomStream arr(seed, static_cast<std::uint64_t>(r), StreamTag::arrivals);
    RandomStream svc(seed, static_cast<std::uint64_t>(r), StreamTag::services);
    RandomStream pol(seed, static_cast<std::uint64_t>(r), StreamTag::policy);
    std::vector<int> u(static_cast<std::size_t>(J));
    std::vector<double> occ(static_cast<std::size_t>(J));
    const VectorXd no_lambda;
    ClassState s = model.initial();
    double weight = 1.0 - g;
    for (long t = 0; t < H; ++t) {
      model.assign(s, policy.sample(model.features(s), pol), u.data());
      totals(r, 0) += weight * model.step(s, u.data(), no_lambda, occ.data(), arr, svc);
      for (Index j = 0; j < J; ++j) totals(r, 1 + j) += weight * occ[static_cast<std::size_t>(j)];
      weight *= g;
    }
  });
  ClassCosts out;
  const VectorXd mean = totals.colwise().mean().transpose();
  out.objective = mean(0);
  out.occupancy = mean.tail(J);
  if (replications > 1) {
    const double var = (totals.col(0).array() - mean(0)).square().sum() / static_cast<double>(replications - 1);
    out.se_objective = std::sqrt(var / static_cast<double>(replications));
  }
  return out;
}

// ---------------------------------------------------------------------------

PolicyEvaluation evaluate_scheduler(const QueueConfig& cfg, SchedulerKind kind,
                                    const std::vector<ClassPolicy>* policies, long replications, std::uint64_t seed,
                                    int workers) {
  validate(cfg);
  if (replications < 1) throw std::invalid_argument("evaluate_scheduler: replications must be positive");
  const Index I = cfg.n_classes();
  const Index J = cfg.n_pools();
  std::vector<ClassModel> models;
  if (kind == SchedulerKind::primal_dual) {
    if (!policies || static_cast<Index>(policies->size()) != I)
      throw std::invalid_argument("evaluate_scheduler: one policy per class required");
    for (Index i = 0; i < I; ++i) models.emplace_back(cfg, i);
  }
  const Tabled cmu = cmu_weights(cfg);
  const double g = cfg.discount;
  std::vector<double> totals(static_cast<std::size_t>(replications), 0.0);
  std::vector<long> violations(static_cast<std::size_t>(replications), 0);
  std::vector<long> modified(static_cast<std::size_t>(replications), 0);
  std::vector<long> periods(static_cast<std::size_t>(replications), 0);

  parallel_for(replications, resolve_workers(workers), [&](long r) {
    const auto idx = static_cast<std::uint64_t>(r);
    RandomStream arr(seed, idx, StreamTag::arrivals);
    RandomStream svc(seed, idx, StreamTag::services);
    RandomStream adm(seed, idx, StreamTag::admission);
    RandomStream pol(seed, idx, StreamTag::policy);
    QueueState state = cfg.init_state;
    double weight = 1.0 - g;
    double total = 0.0;
    const auto ri = static_cast<std::size_t>(r);
    for (long t = 0; t < cfg.horizon; ++t) {
      IntMatrix U;
      if (kind == SchedulerKind::cmu) {
        U = benchmark_assignment(cfg, state, cmu);
      } else if (kind == SchedulerKind::max_pressure) {
        U = benchmark_assignment(cfg, state, max_pressure_weights(cfg, state));
      } else {
        IntVector residual(J);
        for (Index j = 0; j < J; ++j) residual(j) = cfg.pool_sizes(j) - state.Z.col(j).sum();
        IntMatrix desired(I, J);
        for (Index i = 0; i < I; ++i) {
          ClassState cs;
          cs.x = state.X(i);
          for (Index j = 0; j < J; ++j) cs.z[static_cast<std::size_t>(j)] = state.Z(i, j);
          const Index a = (*policies)[static_cast<std::size_t>(i)].sample(models[static_cast<std::size_t>(i)].features(cs), pol);
          desired.row(i) = apply_priority(state.X(i), cfg.action_sets[static_cast<std::size_t>(i)][static_cast<std::size_t>(a)],
                                          residual)
                               .transpose();
        }
        U = feasibility_modification(cfg, state, desired, adm);
        if (U != desired) ++modified[ri];
      }
      ++periods[ri];
      if (!is_feasible_assignment(cfg, state, U)) {
        ++violations[ri];
        break;
      }
      total += weight * period_cost(cfg, state, U);
      weight *= g;
      state = transition(cfg, state, U, arr, svc);
    }
    totals[ri] = total;
  });

  PolicyEvaluation out;
  double sum = 0.0;
  for (std::size_t r = 0; r < totals.size(); ++r) {
    sum += totals[r];
    out.hard_violations += violations[r];
    out.modified_periods += modified[r];
    out.periods += periods[r];
  }
  out.mean = sum / static_cast<double>(replications);
  if (replications > 1) {
    double ss = 0.0;
    for (double v : totals) ss += (v - out.mean) * (v - out.mean);
    out.se = std::sqrt(ss / static_cast<double>(replications - 1) / static_cast<double>(replications));
  }
  return out;
}

QueueExperimentResult run_queue_experiment(const QueueConfig& cfg, const QueueExperimentOptions& options) {
  validate(cfg);
  const Index I = cfg.n_classes();
  const Index J = cfg.n_pools();
  if (options.iterations < 1) throw std::invalid_argument("queue experiment: iterations must be positive");
  if (!(options.step > 0.0)) throw std::invalid_argument("queue experiment: step must be positive");
  std::vector<ClassModel> models;
  std::vector<ClassPolicy> policies;
  for (Index i = 0; i < I; ++i) {
    models.emplace_back(cfg, i);
    policies.push_back(ClassPolicy::uniform(models.back()));
  }
  VfaConfig vfa = options.vfa;
  if (vfa.horizon <= 0) vfa.horizon = cfg.horizon;
  if (vfa.workers <= 0) vfa.workers = options.workers;

  DualStated dual;
  dual.domain = {options.bound, options.slack};
  dual.lambda = options.initial_lambda.size() ? options.initial_lambda : VectorXd::Constant(J, 10.0);
  if (dual.lambda.size() != J || !in_domain(dual.lambda, dual.domain))
    throw std::invalid_argument("queue experiment: initial lambda must be a J-vector inside the dual domain");
  const VectorXd q = cfg.pool_sizes.cast<double>();

  QueueExperimentResult result;
  WeightedAverage cost_avg, violation_avg;
  for (long m = 0; m < options.iterations; ++m) {
    const std::uint64_t seed_m = derive_seed(options.seed, static_cast<std::uint64_t>(m));
    IterationRecord rec;
    rec.m = m;
    rec.eta = options.step;
    rec.lambda = dual.lambda;
    rec.constraint_vals = VectorXd::Zero(J);
    double var = 0.0;
    std::vector<double> rmse;
    for (Index i = 0; i < I; ++i) {
      const auto ii = static_cast<std::size_t>(i);
      const ClassCosts costs = simulate_class_costs(models[ii], policies[ii], options.constraint_replications,
                                                    cfg.horizon, derive_seed(seed_m, 100 + ii), options.workers);
      rec.objective += costs.objective;
      rec.constraint_vals += costs.occupancy;
      var += costs.se_objective * costs.se_objective;

      // Regularized policy step through per-action quadratic Q fits on a
      // shared on-policy state sample.
      const auto states = sample_states(models[ii], policies[ii], vfa, derive_seed(seed_m, 200 + ii));
      Tabled step = Tabled::Zero(models[ii].n_actions(), feature_dimension(J));
      double rmse_sum = 0.0;
      for (Index a = 0; a < models[ii].n_actions(); ++a) {
        const VectorXd targets =
            estimate_class_q(models[ii], policies[ii], dual.lambda, states, a, vfa, derive_seed(seed_m, 300 + ii));
        const QuadraticVFA fit = fit_least_squares(models[ii], states, targets, vfa.ridge);
        step.row(a) = options.step * fit.theta.transpose();
        rmse_sum += fit.rmse;
      }
      policies[ii].weights += step;
      rmse.push_back(rmse_sum / static_cast<double>(models[ii].n_actions()));
    }
    rec.se_objective = std::sqrt(var);
    const VectorXd subgrad = rec.constraint_vals - q;
    rec.subgrad_norm = subgrad.norm();
    update_running(rec, q, cost_avg, violation_avg);
    result.trail.push_back(rec);
    result.fit_rmse.push_back(rmse);
    dual = dual_update(dual, subgrad, options.step);
  }
  result.final_policies = policies;

  const std::uint64_t eval_seed = derive_seed(options.seed, 0xE7A1);
  result.primal_dual =
      evaluate_scheduler(cfg, SchedulerKind::primal_dual, &policies, options.eval_replications, eval_seed, options.workers);
  result.cmu = evaluate_scheduler(cfg, SchedulerKind::cmu, nullptr, options.eval_replications, eval_seed, options.workers);
  result.max_pressure =
      evaluate_scheduler(cfg, SchedulerKind::max_pressure, nullptr, options.eval_replications, eval_seed, options.workers);
  return result;
}

std::vector<int> threshold_scan(const ClassModel& model, const ClassPolicy& policy, const std::vector<int>& fixed_z,
                                Index varied_pool, int lo, int hi, int max_queue) {
  if (static_cast<Index>(fixed_z.size()) != model.n_pools() || varied_pool < 0 || varied_pool >= model.n_pools() ||
      lo > hi || max_queue < 0)
    throw std::invalid_argument("threshold_scan: bad arguments");
  const int primary = model.actions().front().pools.front();
  std::vector<int> out;
  std::vector<int> u(static_cast<std::size_t>(model.n_pools()));
  for (int v = lo; v <= hi; ++v) {
    ClassState s;
    for (Index j = 0; j < model.n_pools(); ++j) s.z[static_cast<std::size_t>(j)] = fixed_z[static_cast<std::size_t>(j)];
    s.z[static_cast<std::size_t>(varied_pool)] = v;
    int threshold = kNoThreshold;
    for (int x = 0; x <= max_queue && threshold == kNoThreshold; ++x) {
      s.x = x;
      model.assign(s, policy.most_probable(model.features(s)), u.data());
      for (Index j = 0; j < model.n_pools(); ++j)
        if (j != primary && u[static_cast<std::size_t>(j)] > 0) threshold = x;
    }
    out.push_back(threshold);
  }
  return out;
}

}  // namespace cmdp::queue
