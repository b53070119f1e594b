#include "cmdp/serialization.hpp"

#include <fstream>
#include <stdexcept>

namespace cmdp {

namespace {

Json table_json(const Tabled& t) {
  Json out = Json::array();
  for (Index r = 0; r < t.rows(); ++r) {
    Json row = Json::array();
    for (Index c = 0; c < t.cols(); ++c) row.push_back(t(r, c));
    out.push_back(row);
  }
  return out;
}

Json vector_json(const VectorXd& v) { return Json(std::vector<double>(v.data(), v.data() + v.size())); }

const Json& field(const Json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) throw std::invalid_argument(std::string("missing field '") + key + "'");
  return j.at(key);
}

VectorXd read_vector(const Json& j, Index n, const char* what) {
  if (!j.is_array() || static_cast<Index>(j.size()) != n)
    throw std::invalid_argument(std::string(what) + ": expected " + std::to_string(n) + " entries");
  VectorXd v(n);
  for (Index i = 0; i < n; ++i) v(i) = j[static_cast<std::size_t>(i)].get<double>();
  return v;
}

Tabled read_table(const Json& j, Index rows, Index cols, const char* what) {
  if (!j.is_array() || static_cast<Index>(j.size()) != rows)
    throw std::invalid_argument(std::string(what) + ": expected " + std::to_string(rows) + " rows");
  Tabled t(rows, cols);
  for (Index r = 0; r < rows; ++r) t.row(r) = read_vector(j[static_cast<std::size_t>(r)], cols, what).transpose();
  return t;
}

void check_schema(const Json& j, const char* expected) {
  const auto& s = field(j, "schema");
  if (!s.is_string() || s.get<std::string>() != expected)
    throw std::invalid_argument(std::string("expected schema '") + expected + "'");
}

}  // namespace

Json to_json(const TabularCMDPd& cmdp) {
  const Index S = cmdp.n_states;
  const Index A = cmdp.n_actions;
  Json kernel = Json::array();
  for (Index s = 0; s < S; ++s) {
    Json per_action = Json::array();
    for (Index a = 0; a < A; ++a) {
      std::vector<double> row(static_cast<std::size_t>(S), 0.0);
      for (Kernel<double>::InnerIterator it(cmdp.kernel, cmdp.pair(s, a)); it; ++it)
        row[static_cast<std::size_t>(it.col())] = it.value();
      per_action.push_back(row);
    }
    kernel.push_back(per_action);
  }
  Json aux = Json::array();
  for (const auto& d : cmdp.aux_costs) aux.push_back(table_json(d));
  Json j = {{"schema", "cmdp-v1"},
            {"n_states", S},
            {"n_actions", A},
            {"discount", cmdp.discount},
            {"kernel", kernel},
            {"cost", table_json(cmdp.cost)},
            {"aux_costs", aux},
            {"thresholds", vector_json(cmdp.thresholds)},
            {"init_dist", vector_json(cmdp.init_dist)},
            {"cost_lower_bound", cmdp.cost_lower_bound}};
  if (cmdp.allowed.size()) {
    Json mask = Json::array();
    for (Index s = 0; s < S; ++s) {
      std::vector<bool> row;
      for (Index a = 0; a < A; ++a) row.push_back(cmdp.allowed(s, a));
      mask.push_back(row);
    }
    j["allowed"] = mask;
  }
  return j;
}

TabularCMDPd cmdp_from_json(const Json& j) {
  check_schema(j, "cmdp-v1");
  TabularCMDPd m;
  m.n_states = field(j, "n_states").get<Index>();
  m.n_actions = field(j, "n_actions").get<Index>();
  const Index S = m.n_states;
  const Index A = m.n_actions;
  if (S < 1 || A < 1) throw std::invalid_argument("cmdp-v1: n_states and n_actions must be positive");
  m.discount = field(j, "discount").get<double>();
  m.cost = read_table(field(j, "cost"), S, A, "cost");
  if (j.contains("allowed")) {
    const auto& mask = j.at("allowed");
    if (!mask.is_array() || static_cast<Index>(mask.size()) != S) throw std::invalid_argument("allowed: bad shape");
    m.allowed.resize(S, A);
    for (Index s = 0; s < S; ++s) {
      const auto& row = mask[static_cast<std::size_t>(s)];
      if (!row.is_array() || static_cast<Index>(row.size()) != A) throw std::invalid_argument("allowed: bad shape");
      for (Index a = 0; a < A; ++a) m.allowed(s, a) = row[static_cast<std::size_t>(a)].get<bool>();
    }
  }
  const auto& kernel = field(j, "kernel");
  if (!kernel.is_array() || static_cast<Index>(kernel.size()) != S) throw std::invalid_argument("kernel: bad shape");
  std::vector<Eigen::Triplet<double>> entries;
  for (Index s = 0; s < S; ++s) {
    const auto& per_action = kernel[static_cast<std::size_t>(s)];
    if (!per_action.is_array() || static_cast<Index>(per_action.size()) != A)
      throw std::invalid_argument("kernel: bad shape");
    for (Index a = 0; a < A; ++a) {
      const VectorXd row = read_vector(per_action[static_cast<std::size_t>(a)], S, "kernel");
      if (!m.is_allowed(s, a)) continue;
      for (Index t = 0; t < S; ++t)
        if (row(t) != 0.0) entries.emplace_back(m.pair(s, a), t, row(t));
    }
  }
  m.kernel.resize(S * A, S);
  m.kernel.setFromTriplets(entries.begin(), entries.end());
  if (j.contains("aux_costs")) {
    const auto& aux = j.at("aux_costs");
    if (!aux.is_array()) throw std::invalid_argument("aux_costs: expected an array");
    for (const auto& d : aux) m.aux_costs.push_back(read_table(d, S, A, "aux_costs"));
  }
  m.thresholds = j.contains("thresholds") ? read_vector(j.at("thresholds"), m.n_constraints(), "thresholds")
                                          : VectorXd::Zero(m.n_constraints());
  m.init_dist = read_vector(field(j, "init_dist"), S, "init_dist");
  if (j.contains("cost_lower_bound")) m.cost_lower_bound = j.at("cost_lower_bound").get<double>();
  require_valid(m);
  return m;
}

Json to_json(const WeaklyCoupledCMDP& problem) {
  Json subs = Json::array();
  for (const auto& sub : problem.subproblems) {
    TabularCMDPd mdp = sub;
    mdp.aux_costs.clear();
    mdp.thresholds.resize(0);
    Json links = Json::array();
    for (const auto& b : sub.aux_costs) links.push_back(table_json(b));
    subs.push_back({{"mdp", to_json(mdp)}, {"link_costs", links}});
  }
  return {{"schema", "wc-cmdp-v1"},
          {"discount", problem.discount},
          {"thresholds", vector_json(problem.thresholds)},
          {"subproblems", subs}};
}

WeaklyCoupledCMDP wc_cmdp_from_json(const Json& j) {
  check_schema(j, "wc-cmdp-v1");
  WeaklyCoupledCMDP out;
  out.discount = field(j, "discount").get<double>();
  const auto& q = field(j, "thresholds");
  if (!q.is_array()) throw std::invalid_argument("thresholds: expected an array");
  out.thresholds = read_vector(q, static_cast<Index>(q.size()), "thresholds");
  for (const auto& entry : field(j, "subproblems")) {
    const TabularCMDPd mdp = cmdp_from_json(field(entry, "mdp"));
    std::vector<Tabled> links;
    for (const auto& b : field(entry, "link_costs")) links.push_back(read_table(b, mdp.n_states, mdp.n_actions, "link_costs"));
    out.subproblems.push_back(make_subproblem(mdp, links));
  }
  require_valid(out);
  return out;
}

Json to_json(const OracleSolution& sol) {
  Json j = {{"schema", "cmdp-solution-v1"}, {"status", to_string(sol.status)}, {"pivots", sol.pivots}};
  if (sol.status == LpStatus::optimal) {
    j["c_star"] = sol.c_star;
    j["nu"] = table_json(sol.nu_star.mass);
    j["policy"] = table_json(sol.policy_star.probs);
    j["lambda_star"] = vector_json(sol.lambda_star);
    j["dual_slacks"] = vector_json(sol.dual_slacks);
  }
  return j;
}

Json to_json(const StationaryPolicyd& policy) { return {{"probs", table_json(policy.probs)}}; }

Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw std::invalid_argument("'" + path + "': " + e.what());
  }
}

void write_json_file(const std::string& path, const Json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << j.dump(2) << "\n";
}

}  // namespace cmdp
