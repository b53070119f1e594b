#include "cmdp/harness.hpp"

#include "cmdp/lp_oracle.hpp"
#include "cmdp/random_stream.hpp"
#include "cmdp/serialization.hpp"
#include "cmdp/weakly_coupled.hpp"

#include <toml.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

namespace cmdp::harness {

namespace fs = std::filesystem;

std::string to_string(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::inventory: return "inventory";
    case ExperimentKind::queue: return "queue";
    case ExperimentKind::random_cmdp: return "random-cmdp";
    case ExperimentKind::oracle_check: return "oracle-check";
    case ExperimentKind::theorem_check: return "theorem-check";
  }
  return "?";
}

ExperimentKind parse_experiment_kind(const std::string& text) {
  for (auto k : {ExperimentKind::inventory, ExperimentKind::queue, ExperimentKind::random_cmdp,
                 ExperimentKind::oracle_check, ExperimentKind::theorem_check})
    if (to_string(k) == text) return k;
  throw ConfigError("unknown experiment kind '" + text + "'");
}

// ---------------------------------------------------------------------------
// Config parsing

namespace {

/// Typed access to one TOML table; every key must be consumed.
class Section {
 public:
  Section(const toml::table* table, std::string name) : table_(table), name_(std::move(name)) {}

  bool present() const { return table_ != nullptr; }
  bool has(const std::string& key) const { return table_ && table_->contains(key); }

  Section child(const std::string& key) {
    if (!has(key)) return {nullptr, path(key)};
    used_.insert(key);
    const auto* t = (*table_)[key].as_table();
    if (!t) throw ConfigError(qualified(key) + " must be a table");
    return {t, path(key)};
  }

  template <typename T>
  std::optional<T> get(const std::string& key) {
    if (!has(key)) return std::nullopt;
    used_.insert(key);
    const auto node = (*table_)[key];
    if constexpr (std::is_same_v<T, double>) {
      if (!node.is_number()) throw ConfigError(qualified(key) + " must be a number");
      return node.value<double>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!node.is_string()) throw ConfigError(qualified(key) + " must be a string");
      return node.value<std::string>();
    } else if constexpr (std::is_same_v<T, bool>) {
      if (!node.is_boolean()) throw ConfigError(qualified(key) + " must be a boolean");
      return node.value<bool>();
    } else {
      if (!node.is_integer()) throw ConfigError(qualified(key) + " must be an integer");
      const auto v = *node.value<std::int64_t>();
      if constexpr (std::is_unsigned_v<T>) {
        if (v < 0) throw ConfigError(qualified(key) + " must be nonnegative");
      }
      return static_cast<T>(v);
    }
  }

  template <typename T>
  T get_or(const std::string& key, T fallback) {
    const auto v = get<T>(key);
    return v ? *v : fallback;
  }

  std::optional<std::vector<double>> numbers(const std::string& key) {
    if (!has(key)) return std::nullopt;
    used_.insert(key);
    const auto* arr = (*table_)[key].as_array();
    if (!arr) throw ConfigError(qualified(key) + " must be an array");
    std::vector<double> out;
    for (const auto& el : *arr) {
      if (!el.is_number()) throw ConfigError(qualified(key) + " must hold numbers");
      out.push_back(*el.value<double>());
    }
    return out;
  }

  void finish() const {
    if (!table_) return;
    for (const auto& [key, node] : *table_)
      if (!used_.count(std::string(key.str()))) throw ConfigError("unknown key " + qualified(std::string(key.str())));
  }

 private:
  std::string path(const std::string& key) const { return name_.empty() ? key : name_ + "." + key; }
  std::string qualified(const std::string& key) const { return "'" + path(key) + "'"; }

  const toml::table* table_;
  std::string name_;
  std::set<std::string> used_;
};

template <typename T>
T positive(std::optional<T> v, T fallback, const std::string& what) {
  const T x = v ? *v : fallback;
  if (!(x > T(0))) throw ConfigError(what + " must be positive");
  return x;
}

std::string resolve(const std::string& path, const std::string& base_dir) {
  if (path.empty()) return path;
  const fs::path p(path);
  return p.is_absolute() ? path : (fs::path(base_dir) / p).lexically_normal().string();
}

void parse_solver(Section s, SolverSettings& out) {
  if (auto step = s.get<std::string>("step")) {
    try {
      out.schedule.kind = parse_step_kind(*step);
    } catch (const std::exception& e) {
      throw ConfigError(std::string("solver.step: ") + e.what());
    }
  }
  out.schedule.base = positive(s.get<double>("eta"), out.schedule.base, "solver.eta");
  out.iterations = positive(s.get<long>("iterations"), out.iterations, "solver.iterations");
  out.slack = positive(s.get<double>("slack"), out.slack, "solver.slack");
  if (auto b = s.get<double>("bound")) {
    if (*b < 0.0) throw ConfigError("solver.bound must be nonnegative");
    out.bound = *b;
  }
  s.finish();
}

void parse_inventory(Section s, inventory::InventoryConfig& cfg) {
  const std::string preset = s.get_or<std::string>("preset", "paper");
  if (preset == "paper")
    cfg = inventory::paper_config();
  else if (preset == "reduced")
    cfg = inventory::reduced_config();
  else
    throw ConfigError("inventory.preset must be 'paper' or 'reduced'");
  if (auto v = s.get<double>("budget")) cfg.budget = *v;
  if (auto v = s.get<double>("discount")) cfg.discount = *v;
  if (auto v = s.get<int>("lower")) cfg.lower = *v;
  if (auto v = s.get<int>("upper")) cfg.upper = *v;
  if (auto v = s.get<int>("max_order")) cfg.max_order = *v;
  if (auto v = s.numbers("holding")) cfg.holding = *v;
  if (auto v = s.numbers("backlog")) cfg.backlog = *v;
  if (auto v = s.numbers("resource")) cfg.resource = *v;
  if (auto v = s.numbers("init_state")) {
    cfg.init_state.clear();
    for (double x : *v) cfg.init_state.push_back(static_cast<int>(x));
  }
  const auto lo = s.get<int>("demand_lo");
  const auto hi = s.get<int>("demand_hi");
  if (lo || hi) {
    if (!lo || !hi) throw ConfigError("inventory.demand_lo and inventory.demand_hi go together");
    cfg.demand_pmfs.assign(cfg.holding.size(), inventory::uniform_pmf(*lo, *hi));
  } else if (cfg.demand_pmfs.size() != cfg.holding.size() && !cfg.demand_pmfs.empty()) {
    cfg.demand_pmfs.resize(cfg.holding.size(), cfg.demand_pmfs.front());
  }
  s.finish();
  try {
    inventory::validate(cfg);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("inventory: ") + e.what());
  }
}

void parse_queue(Section s, QueueSettings& q) {
  q.scale = s.get_or<std::string>("scale", q.scale);
  if (q.scale != "scaled" && q.scale != "paper") throw ConfigError("queue.scale must be 'scaled' or 'paper'");
  if (auto r = s.get<std::string>("regime")) {
    try {
      q.regime = queue::parse_cost_regime(*r);
    } catch (const std::exception& e) {
      throw ConfigError(std::string("queue.regime: ") + e.what());
    }
  }
  q.discount = s.get_or("discount", q.discount);
  if (!(q.discount > 0.0 && q.discount < 1.0)) throw ConfigError("queue.discount must lie in (0,1)");
  q.gated = s.get_or("gated", q.scale == "paper");
  auto& o = q.options;
  o.iterations = positive(s.get<long>("iterations"), o.iterations, "queue.iterations");
  o.step = positive(s.get<double>("step"), o.step, "queue.step");
  o.bound = s.get_or("bound", o.bound);
  o.slack = positive(s.get<double>("slack"), o.slack, "queue.slack");
  if (auto v = s.numbers("initial_lambda")) o.initial_lambda = Eigen::Map<const VectorXd>(v->data(), static_cast<Index>(v->size()));
  o.constraint_replications =
      positive(s.get<long>("constraint_replications"), o.constraint_replications, "queue.constraint_replications");
  o.eval_replications = positive(s.get<long>("eval_replications"), o.eval_replications, "queue.eval_replications");
  Section v = s.child("vfa");
  o.vfa.states = positive(v.get<long>("states"), o.vfa.states, "queue.vfa.states");
  o.vfa.burn_in = v.get_or("burn_in", o.vfa.burn_in);
  o.vfa.stride = positive(v.get<long>("stride"), o.vfa.stride, "queue.vfa.stride");
  o.vfa.q_replications = positive(v.get<long>("q_replications"), o.vfa.q_replications, "queue.vfa.q_replications");
  o.vfa.horizon = v.get_or("horizon", 0L);
  o.vfa.ridge = v.get_or("ridge", o.vfa.ridge);
  v.finish();
  Section t = s.child("threshold");
  q.threshold_class = t.get_or<Index>("class", 1) - 1;
  q.threshold_pool = t.get_or<Index>("pool", 1) - 1;
  q.threshold_lo = t.get_or("lo", q.threshold_lo);
  q.threshold_hi = t.get_or("hi", q.threshold_hi);
  q.threshold_max_queue = t.get_or("max_queue", q.threshold_max_queue);
  t.finish();
  s.finish();
}

void parse_random(Section s, RandomCmdpSpec& r) {
  r.states = positive(s.get<Index>("states"), r.states, "random_cmdp.states");
  r.actions = positive(s.get<Index>("actions"), r.actions, "random_cmdp.actions");
  r.constraints = positive(s.get<Index>("constraints"), r.constraints, "random_cmdp.constraints");
  r.discount = s.get_or("discount", r.discount);
  if (!(r.discount > 0.0 && r.discount < 1.0)) throw ConfigError("random_cmdp.discount must lie in (0,1)");
  r.margin = positive(s.get<double>("margin"), r.margin, "random_cmdp.margin");
  r.vacuous = s.get_or("vacuous", r.vacuous);
  s.finish();
}

void parse_theorem(Section s, TheoremCheckSpec& t, const std::string& base_dir) {
  if (auto g = s.numbers("grid")) {
    t.grid.clear();
    for (double x : *g) {
      if (!(x >= 1.0) || x != std::floor(x)) throw ConfigError("theorem_check.grid must hold positive integers");
      t.grid.push_back(static_cast<long>(x));
    }
    if (t.grid.empty()) throw ConfigError("theorem_check.grid is empty");
  }
  t.fixtures = positive(s.get<long>("fixtures"), t.fixtures, "theorem_check.fixtures");
  t.max_shape.states = positive(s.get<Index>("max_states"), t.max_shape.states, "theorem_check.max_states");
  t.max_shape.actions = positive(s.get<Index>("max_actions"), t.max_shape.actions, "theorem_check.max_actions");
  t.max_shape.constraints =
      positive(s.get<Index>("max_constraints"), t.max_shape.constraints, "theorem_check.max_constraints");
  t.max_shape.discount = s.get_or("discount", t.max_shape.discount);
  t.max_shape.margin = positive(s.get<double>("margin"), t.max_shape.margin, "theorem_check.margin");
  t.max_shape.vacuous = s.get_or("vacuous", t.max_shape.vacuous);
  t.constant_eta = positive(s.get<double>("constant_eta"), t.constant_eta, "theorem_check.constant_eta");
  t.inverse_sqrt_base =
      positive(s.get<double>("inverse_sqrt_base"), t.inverse_sqrt_base, "theorem_check.inverse_sqrt_base");
  t.fixture = resolve(s.get_or<std::string>("fixture", ""), base_dir);
  s.finish();
}

void parse_oracle(Section s, OracleCheckSpec& o, const std::string& base_dir) {
  o.fixture = resolve(s.get_or<std::string>("fixture", ""), base_dir);
  o.inventory_preset = s.get_or<std::string>("preset", o.inventory_preset);
  if (o.inventory_preset != "paper" && o.inventory_preset != "reduced")
    throw ConfigError("oracle_check.preset must be 'paper' or 'reduced'");
  o.expected = s.get<double>("expected");
  o.tolerance = positive(s.get<double>("tolerance"), o.tolerance, "oracle_check.tolerance");
  s.finish();
}

}  // namespace

ExperimentConfig parse_config(const std::string& text, const std::string& base_dir) {
  toml::table root;
  try {
    root = toml::parse(text);
  } catch (const toml::parse_error& e) {
    std::ostringstream os;
    os << "TOML parse error at line " << e.source().begin.line << ": " << e.description();
    throw ConfigError(os.str());
  }
  Section top(&root, "");
  ExperimentConfig cfg;
  const auto kind = top.get<std::string>("kind");
  if (!kind) throw ConfigError("missing 'kind'");
  cfg.kind = parse_experiment_kind(*kind);
  cfg.seed = top.get<std::uint64_t>("seed");
  cfg.output_dir = top.get_or<std::string>("output", "");
  cfg.workers = top.get_or("workers", 0);
  if (cfg.workers < 0) throw ConfigError("'workers' must be nonnegative");

  parse_solver(top.child("solver"), cfg.solver);
  Section mc = top.child("monte_carlo");
  cfg.inventory_options.replications =
      positive(mc.get<long>("replications"), cfg.inventory_options.replications, "monte_carlo.replications");
  cfg.inventory_options.horizon = positive(mc.get<long>("horizon"), cfg.inventory_options.horizon, "monte_carlo.horizon");
  mc.finish();

  Section inv = top.child("inventory");
  if (inv.present() || cfg.kind == ExperimentKind::inventory) parse_inventory(inv, cfg.inventory);
  parse_queue(top.child("queue"), cfg.queue);
  parse_random(top.child("random_cmdp"), cfg.random);
  parse_theorem(top.child("theorem_check"), cfg.theorem, base_dir);
  parse_oracle(top.child("oracle_check"), cfg.oracle, base_dir);
  top.finish();

  for (const auto* path : {&cfg.theorem.fixture, &cfg.oracle.fixture})
    if (!path->empty() && !fs::exists(*path)) throw ConfigError("fixture '" + *path + "' does not exist");

  auto& io = cfg.inventory_options;
  io.schedule = cfg.solver.schedule;
  io.iterations = cfg.solver.iterations;
  io.slack = cfg.solver.slack;
  io.bound = cfg.solver.bound;
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  ExperimentConfig cfg = parse_config(buf.str(), fs::path(path).parent_path().string().empty()
                                                      ? std::string(".")
                                                      : fs::path(path).parent_path().string());
  cfg.source_path = path;
  return cfg;
}

// ---------------------------------------------------------------------------
// Rate regression

RateFit rate_regression(const std::vector<double>& running_avg, StepKind regime) {
  const long n = static_cast<long>(running_avg.size());
  if (n < 50) throw std::invalid_argument("rate_regression: trail needs at least 50 iterations");
  const long start = n / 5;
  RateFit fit;
  fit.points = n - start;
  double sx = 0.0, sy = 0.0;
  std::vector<double> xs, ys;
  for (long t = start; t < n; ++t) {
    const double T = static_cast<double>(t + 1);
    const double x = regime == StepKind::constant ? 1.0 / T : 1.0 / std::sqrt(T);
    const double y = running_avg[static_cast<std::size_t>(t)];
    if (!std::isfinite(y)) throw std::invalid_argument("rate_regression: non-finite trail value");
    xs.push_back(x);
    ys.push_back(y);
    sx += x;
    sy += y;
  }
  const double k = static_cast<double>(fit.points);
  const double mx = sx / k, my = sy / k;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    sxy += (xs[i] - mx) * (ys[i] - my);
    syy += (ys[i] - my) * (ys[i] - my);
  }
  if (!(syy > 0.0)) throw std::invalid_argument("rate_regression: degenerate trail (constant running average)");
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  double ss_res = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double r = ys[i] - fit.intercept - fit.slope * xs[i];
    ss_res += r * r;
  }
  fit.r2 = 1.0 - ss_res / syy;
  return fit;
}

RateFit rate_regression(const std::vector<IterationRecord>& trail, StepKind regime) {
  std::vector<double> y;
  y.reserve(trail.size());
  for (const auto& rec : trail) y.push_back(rec.running_avg_objective);
  return rate_regression(y, regime);
}

// ---------------------------------------------------------------------------
// Random instances and the theorem check

TabularCMDPd random_cmdp(const RandomCmdpSpec& spec, std::uint64_t seed) {
  if (spec.states < 1 || spec.actions < 1 || spec.constraints < 1)
    throw std::invalid_argument("random_cmdp: shape must be positive");
  RandomStream rng(seed, 0, StreamTag::fixture);
  const Index S = spec.states, A = spec.actions, K = spec.constraints;
  TabularCMDPd m;
  m.n_states = S;
  m.n_actions = A;
  m.discount = spec.discount;
  std::vector<Eigen::Triplet<double>> entries;
  for (Index r = 0; r < S * A; ++r) {
    VectorXd row(S);
    for (Index t = 0; t < S; ++t) row(t) = -std::log(1.0 - rng.uniform());  // Dirichlet(1, ..., 1)
    row /= row.sum();
    for (Index t = 0; t < S; ++t) entries.emplace_back(r, t, row(t));
  }
  m.kernel.resize(S * A, S);
  m.kernel.setFromTriplets(entries.begin(), entries.end());
  auto table = [&] {
    Tabled t(S, A);
    for (Index s = 0; s < S; ++s)
      for (Index a = 0; a < A; ++a) t(s, a) = rng.uniform();
    return t;
  };
  m.cost = table();
  for (Index k = 0; k < K; ++k) m.aux_costs.push_back(table());
  m.init_dist = VectorXd::Constant(S, 1.0 / static_cast<double>(S));
  m.cost_lower_bound = -1.0;
  m.thresholds = VectorXd::Zero(K);
  const PolicyCostsd u = costs_of_policy(m, uniform_policy(m));
  m.thresholds = spec.vacuous ? VectorXd::Constant(K, 2.0) : VectorXd(u.constraints.array() + spec.margin);
  return m;
}

std::vector<TabularCMDPd> theorem_fixtures(const TheoremCheckSpec& spec, std::uint64_t seed) {
  std::vector<TabularCMDPd> out;
  const auto draw = [](RandomStream& rng, Index lo, Index hi) {
    return hi <= lo ? lo : lo + static_cast<Index>(rng.below(static_cast<std::uint32_t>(hi - lo + 1)));
  };
  for (long f = 0; f < spec.fixtures; ++f) {
    const std::uint64_t fixture_seed = derive_seed(seed, static_cast<std::uint64_t>(f));
    RandomStream shape(fixture_seed, 1, StreamTag::fixture);
    RandomCmdpSpec r = spec.max_shape;
    r.states = draw(shape, std::min<Index>(2, spec.max_shape.states), spec.max_shape.states);
    r.actions = draw(shape, std::min<Index>(2, spec.max_shape.actions), spec.max_shape.actions);
    r.constraints = draw(shape, 1, spec.max_shape.constraints);
    out.push_back(random_cmdp(r, fixture_seed));
  }
  return out;
}

bool TheoremCheckReport::passed() const {
  return std::all_of(rows.begin(), rows.end(), [](const TheoremCheckRow& r) { return r.pass; });
}

std::vector<std::string> TheoremCheckReport::failures() const {
  std::vector<std::string> out;
  for (const auto& r : rows) {
    const std::string tag = "(fixture " + std::to_string(r.fixture) + ", " + to_string(r.regime) +
                            ", T=" + std::to_string(r.T) + ", ";
    auto fmt = [](double x) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.6g", x);
      return std::string(buf);
    };
    if (r.violation > r.violation_bound)
      out.push_back(tag + "violation, " + fmt(r.violation) + ", " + fmt(r.violation_bound) + ")");
    if (r.gap > r.gap_upper) out.push_back(tag + "gap upper, " + fmt(r.gap) + ", " + fmt(r.gap_upper) + ")");
    if (r.gap < r.gap_lower) out.push_back(tag + "gap lower, " + fmt(r.gap) + ", " + fmt(r.gap_lower) + ")");
  }
  return out;
}

TheoremCheckReport theorem_check(const TabularCMDPd& cmdp, const TheoremCheckSpec& spec, long fixture_id) {
  require_valid(cmdp);
  if (spec.grid.empty()) throw std::invalid_argument("theorem_check: empty T grid");
  const OracleSolution sol = solve_lp(cmdp);
  if (sol.status != LpStatus::optimal) throw std::invalid_argument("theorem_check: instance is infeasible");
  const StationaryPolicyd pi0 = uniform_policy(cmdp);
  const PolicyCostsd slater = costs_of_policy(cmdp, pi0);
  double c_min = infinity<double>();
  for (Index s = 0; s < cmdp.n_states; ++s)
    for (Index a = 0; a < cmdp.n_actions; ++a)
      if (cmdp.is_allowed(s, a)) c_min = std::min(c_min, cmdp.cost(s, a));
  const double M = slater_lambda_bound(c_min, slater, cmdp.thresholds);
  const long T_max = *std::max_element(spec.grid.begin(), spec.grid.end());

  TheoremConstants k;
  k.phi0 = weighted_kl(cmdp, sol.policy_star, sol.policy_star, pi0);
  k.lambda_star_norm = sol.lambda_star.norm();
  k.lambda0_norm = 0.0;

  TheoremCheckReport report;
  const ExactEvaluator evaluator;
  for (const StepSchedule schedule :
       {StepSchedule{StepKind::constant, spec.constant_eta}, StepSchedule{StepKind::inverse_sqrt, spec.inverse_sqrt_base}}) {
    SolverConfig sc;
    sc.schedule = schedule;
    sc.iterations = T_max;
    sc.domain = {M, 1.0};
    sc.keep_members = false;
    const SolverResult res = run(cmdp, sc, evaluator);
    k.G = 0.0;
    for (const auto& rec : res.trail) k.G = std::max({k.G, rec.max_abs_q, rec.subgrad_norm});
    if (schedule.kind == StepKind::inverse_sqrt) {
      const ScheduleConstants sk = schedule_constants(schedule, spec.grid);
      k.kappa1 = sk.kappa1;
      k.kappa2 = sk.kappa2;
    }
    for (long T : spec.grid) {
      const IterationRecord& rec = res.trail[static_cast<std::size_t>(T - 1)];
      const TheoremBounds b = theorem1_bounds(k, schedule, T, sc.domain.slack, cmdp.discount);
      TheoremCheckRow row;
      row.fixture = fixture_id;
      row.regime = schedule.kind;
      row.T = T;
      row.violation = rec.running_violation;
      row.violation_bound = b.violation;
      row.gap = rec.running_avg_objective - sol.c_star;
      row.gap_upper = b.gap_upper;
      row.gap_lower = b.gap_lower;
      row.pass = row.violation <= row.violation_bound && row.gap <= row.gap_upper && row.gap >= row.gap_lower;
      report.rows.push_back(row);
    }
  }
  return report;
}

void write_theorem_csv(std::ostream& out, const TheoremCheckReport& report) {
  out << "fixture,regime,T,violation,violation_bound,gap,gap_upper,gap_lower,pass\n";
  char buf[512];
  for (const auto& r : report.rows) {
    std::snprintf(buf, sizeof buf, "%ld,%s,%ld,%.17g,%.17g,%.17g,%.17g,%.17g,%d\n", r.fixture,
                  to_string(r.regime).c_str(), r.T, r.violation, r.violation_bound, r.gap, r.gap_upper, r.gap_lower,
                  r.pass ? 1 : 0);
    out << buf;
  }
}

// ---------------------------------------------------------------------------
// Orchestration

namespace {

Json trail_summary(const std::vector<IterationRecord>& trail, double discount) {
  const auto& last = trail.back();
  return {{"iterations", trail.size()},
          {"final_running_avg_cost", last.running_avg_objective},
          {"final_running_avg_cost_unnormalized", last.running_avg_objective / (1.0 - discount)},
          {"final_violation", last.running_violation},
          {"final_avg_iterate_violation", last.running_avg_iterate_violation},
          {"final_lambda", std::vector<double>(last.lambda.data(), last.lambda.data() + last.lambda.size())}};
}

void write_rate_csv(const std::string& path, const std::vector<IterationRecord>& trail, StepKind regime,
                    double discount) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << "T,x,running_avg_cost_unnormalized\n";
  char buf[128];
  for (std::size_t t = 0; t < trail.size(); ++t) {
    const double T = static_cast<double>(t + 1);
    const double x = regime == StepKind::constant ? 1.0 / T : 1.0 / std::sqrt(T);
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g\n", t + 1, x, trail[t].running_avg_objective / (1.0 - discount));
    out << buf;
  }
}

Json fit_json(const RateFit& f) {
  return {{"slope", f.slope}, {"intercept", f.intercept}, {"r2", f.r2}, {"points", f.points}};
}

int run_inventory(const ExperimentConfig& cfg, std::uint64_t seed, int workers, const fs::path& dir,
                  std::ostream& log) {
  inventory::ExperimentOptions opt = cfg.inventory_options;
  opt.seed = seed;
  opt.workers = workers;
  log << "inventory: " << opt.iterations << " iterations, " << to_string(opt.schedule.kind) << " step "
      << opt.schedule.base << ", " << opt.replications << " x " << opt.horizon << " Monte Carlo\n";
  const inventory::ExperimentResult res = inventory::run_experiment(cfg.inventory, opt);
  const auto& trail = res.run.trail;
  write_trail_csv((dir / "trail.csv").string(), trail);
  write_violation_csv((dir / "violations.csv").string(), trail);
  write_rate_csv((dir / "rate.csv").string(), trail, opt.schedule.kind, res.discount);
  Json summary = {{"kind", "inventory"},
                  {"seed", seed},
                  {"step", to_string(opt.schedule.kind)},
                  {"eta", opt.schedule.base},
                  {"bound_M", res.bound_M},
                  {"exact_avg_cost", res.exact_avg_cost},
                  {"exact_avg_cost_unnormalized", res.exact_avg_cost / (1.0 - res.discount)},
                  {"exact_violation", res.exact_violation},
                  {"trail", trail_summary(trail, res.discount)}};
  if (trail.size() >= 50) summary["rate_fit"] = fit_json(rate_regression(trail, opt.schedule.kind));
  Json policies = Json::array();
  for (const auto& p : res.run.stationary) policies.push_back(to_json(p));
  write_json_file((dir / "averaged_policy.json").string(), {{"products", policies}});
  write_json_file((dir / "summary.json").string(), summary);
  log << "final running averaged cost (unnormalized) " << res.final_running_avg_cost / (1.0 - res.discount)
      << ", violation " << res.final_violation << "\n";
  return 0;
}

int run_queue(const ExperimentConfig& cfg, std::uint64_t seed, int workers, const fs::path& dir, bool allow_long,
              std::ostream& log) {
  const QueueSettings& qs = cfg.queue;
  if (qs.gated && !allow_long)
    throw ConfigError("full-size queue run (scale = paper) is gated; pass --long to run it");
  queue::QueueConfig qc = qs.scale == "paper" ? queue::paper_config(qs.regime, qs.discount)
                                              : queue::scaled_config(qs.regime, qs.discount);
  queue::QueueExperimentOptions opt = qs.options;
  opt.seed = seed;
  opt.workers = workers;
  log << "queue (" << qs.scale << ", " << queue::to_string(qs.regime) << ", discount " << qs.discount << "): "
      << opt.iterations << " iterations\n";
  const queue::QueueExperimentResult res = queue::run_queue_experiment(qc, opt);
  write_trail_csv((dir / "trail.csv").string(), res.trail);

  {
    std::ofstream out(dir / "summary.csv");
    out << "policy,regime,discount,mean,se\n";
    auto line = [&](const char* name, const queue::PolicyEvaluation& e) {
      char buf[256];
      std::snprintf(buf, sizeof buf, "%s,%s,%.4g,%.17g,%.17g\n", name, queue::to_string(qs.regime).c_str(),
                    qs.discount, e.mean, e.se);
      out << buf;
    };
    line("primal-dual", res.primal_dual);
    line("cmu", res.cmu);
    line("max-pressure", res.max_pressure);
  }
  {
    std::ofstream out(dir / "fit_rmse.csv");
    out << "m";
    for (Index i = 0; i < qc.n_classes(); ++i) out << ",class_" << i + 1;
    out << "\n";
    for (std::size_t m = 0; m < res.fit_rmse.size(); ++m) {
      out << m;
      for (double r : res.fit_rmse[m]) out << "," << r;
      out << "\n";
    }
  }
  const Index cls = qs.threshold_class;
  const Index pool = qs.threshold_pool;
  if (cls < 0 || cls >= qc.n_classes() || pool < 0 || pool >= qc.n_pools())
    throw ConfigError("queue.threshold class/pool out of range");
  const queue::ClassModel model(qc, cls);
  std::vector<int> fixed(static_cast<std::size_t>(qc.n_pools()), 0);
  const int hi = qs.threshold_hi >= 0 ? qs.threshold_hi : qc.pool_sizes(pool);
  const auto thresholds = queue::threshold_scan(model, res.final_policies[static_cast<std::size_t>(cls)], fixed, pool,
                                                qs.threshold_lo, hi, qs.threshold_max_queue);
  {
    std::ofstream out(dir / "thresholds.csv");
    out << "z,threshold\n";
    for (std::size_t k = 0; k < thresholds.size(); ++k) {
      out << qs.threshold_lo + static_cast<int>(k) << ",";
      if (thresholds[k] == queue::kNoThreshold)
        out << "none\n";
      else
        out << thresholds[k] << "\n";
    }
  }
  auto eval_json = [](const queue::PolicyEvaluation& e) {
    return Json{{"mean", e.mean},
                {"se", e.se},
                {"hard_violations", e.hard_violations},
                {"modified_periods", e.modified_periods},
                {"periods", e.periods}};
  };
  Json summary = {{"kind", "queue"},
                  {"seed", seed},
                  {"scale", qs.scale},
                  {"regime", queue::to_string(qs.regime)},
                  {"discount", qs.discount},
                  {"horizon", qc.horizon},
                  {"primal_dual", eval_json(res.primal_dual)},
                  {"cmu", eval_json(res.cmu)},
                  {"max_pressure", eval_json(res.max_pressure)},
                  {"trail", trail_summary(res.trail, qs.discount)}};
  write_json_file((dir / "summary.json").string(), summary);
  log << "mean cost: primal-dual " << res.primal_dual.mean << " (se " << res.primal_dual.se << "), cmu "
      << res.cmu.mean << ", max-pressure " << res.max_pressure.mean << "\n";
  if (res.primal_dual.hard_violations > 0) throw CheckFailure("hard capacity constraints violated during evaluation");
  return 0;
}

int run_random(const ExperimentConfig& cfg, std::uint64_t seed, const fs::path& dir, std::ostream& log) {
  const TabularCMDPd m = random_cmdp(cfg.random, derive_seed(seed, 0));
  const OracleSolution sol = solve_lp(m);
  if (sol.status != LpStatus::optimal) throw CheckFailure("random instance is infeasible");
  const PolicyCostsd slater = costs_of_policy(m, uniform_policy(m));
  SolverConfig sc;
  sc.schedule = cfg.solver.schedule;
  sc.iterations = cfg.solver.iterations;
  sc.domain = {cfg.solver.bound ? *cfg.solver.bound : slater_lambda_bound(m.cost.minCoeff(), slater, m.thresholds),
               cfg.solver.slack};
  sc.seed = seed;
  sc.keep_members = false;
  const SolverResult res = run(m, sc, ExactEvaluator{});
  write_trail_csv((dir / "trail.csv").string(), res.trail);
  write_violation_csv((dir / "violations.csv").string(), res.trail);
  write_json_file((dir / "instance.json").string(), to_json(m));
  write_json_file((dir / "solution.json").string(), to_json(sol));
  Json summary = {{"kind", "random-cmdp"},
                  {"seed", seed},
                  {"c_star", sol.c_star},
                  {"gap", res.averaged_objective - sol.c_star},
                  {"trail", trail_summary(res.trail, m.discount)}};
  write_json_file((dir / "summary.json").string(), summary);
  log << "c_star " << sol.c_star << ", averaged cost " << res.averaged_objective << "\n";
  return 0;
}

int run_oracle(const ExperimentConfig& cfg, const fs::path& dir, std::ostream& log) {
  const OracleCheckSpec& o = cfg.oracle;
  TabularCMDPd m;
  if (!o.fixture.empty()) {
    const Json j = read_json_file(o.fixture);
    const std::string schema = j.value("schema", "");
    if (schema == "wc-cmdp-v1")
      m = product_cmdp(wc_cmdp_from_json(j));
    else
      m = cmdp_from_json(j);
  } else {
    m = inventory::build_tabular(o.inventory_preset == "paper" ? inventory::paper_config()
                                                               : inventory::reduced_config());
  }
  const OracleSolution sol = solve_lp(m);
  write_json_file((dir / "solution.json").string(), to_json(sol));
  if (sol.status != LpStatus::optimal) throw CheckFailure("LP is infeasible");
  const double unnormalized = sol.c_star / (1.0 - m.discount);
  Json summary = {{"kind", "oracle-check"},
                  {"c_star", sol.c_star},
                  {"c_star_unnormalized", unnormalized},
                  {"pivots", sol.pivots},
                  {"complementary_slackness", check_complementary_slackness(sol, sol.lambda_star)}};
  bool ok = true;
  if (o.expected) {
    ok = std::abs(unnormalized - *o.expected) <= o.tolerance;
    summary["expected"] = *o.expected;
    summary["tolerance"] = o.tolerance;
    summary["pass"] = ok;
  }
  write_json_file((dir / "summary.json").string(), summary);
  log << std::setprecision(10) << "optimal cost (unnormalized) " << unnormalized << "\n";
  if (!ok) {
    std::ostringstream os;
    os << "optimal cost " << unnormalized << " outside " << *o.expected << " +- " << o.tolerance;
    throw CheckFailure(os.str());
  }
  return 0;
}

int run_theorem(const ExperimentConfig& cfg, std::uint64_t seed, const fs::path& dir, std::ostream& log) {
  const TheoremCheckSpec& t = cfg.theorem;
  TheoremCheckReport report;
  if (!t.fixture.empty()) {
    report = theorem_check(cmdp_from_json(read_json_file(t.fixture)), t, 0);
  } else {
    const auto fixtures = theorem_fixtures(t, seed);
    for (std::size_t f = 0; f < fixtures.size(); ++f) {
      const auto part = theorem_check(fixtures[f], t, static_cast<long>(f));
      report.rows.insert(report.rows.end(), part.rows.begin(), part.rows.end());
    }
  }
  std::ofstream out(dir / "theorem_check.csv");
  write_theorem_csv(out, report);
  const auto failures = report.failures();
  write_json_file((dir / "summary.json").string(),
                  {{"kind", "theorem-check"}, {"seed", seed}, {"rows", report.rows.size()}, {"failures", failures}});
  log << report.rows.size() << " comparisons, " << failures.size() << " failed\n";
  for (const auto& f : failures) log << "  " << f << "\n";
  if (!failures.empty()) throw CheckFailure("theorem bounds violated");
  return 0;
}

}  // namespace

int cli_run(const ExperimentConfig& config, const RunOptions& options, std::ostream& log) {
  try {
    const auto seed = options.seed ? options.seed : config.seed;
    if (!seed) throw ConfigError("no seed: set 'seed' in the config or pass --seed");
    const int workers = options.workers ? *options.workers : config.workers;
    std::string out = !options.output_dir.empty() ? options.output_dir : config.output_dir;
    if (out.empty()) out = "out/" + to_string(config.kind);
    const fs::path dir(out);
    fs::create_directories(dir);
    switch (config.kind) {
      case ExperimentKind::inventory: return run_inventory(config, *seed, workers, dir, log);
      case ExperimentKind::queue: return run_queue(config, *seed, workers, dir, options.allow_long, log);
      case ExperimentKind::random_cmdp: return run_random(config, *seed, dir, log);
      case ExperimentKind::oracle_check: return run_oracle(config, dir, log);
      case ExperimentKind::theorem_check: return run_theorem(config, *seed, dir, log);
    }
    return 2;
  } catch (const ConfigError& e) {
    log << "config error: " << e.what() << "\n";
    return 2;
  } catch (const CheckFailure& e) {
    log << "check failed: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    log << "error: " << e.what() << "\n";
    return 3;
  }
}

}  // namespace cmdp::harness
