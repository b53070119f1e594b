#pragma once

// JSON forms of problems and solutions.
//
// cmdp-v1:
//   {"schema": "cmdp-v1", "n_states": S, "n_actions": A, "discount": g,
//    "kernel": [S][A][S], "cost": [S][A], "aux_costs": [K][S][A],
//    "thresholds": [K], "init_dist": [S], "cost_lower_bound": W,
//    "allowed": [S][A] (optional, booleans)}
// Kernel rows of disallowed pairs are written as zeros and ignored on read.
//
// wc-cmdp-v1:
//   {"schema": "wc-cmdp-v1", "discount": g, "thresholds": [K],
//    "subproblems": [{"mdp": <cmdp-v1 without constraints>, "link_costs": [K][S][A]}]}
//
// cmdp-solution-v1:
//   {"schema": "cmdp-solution-v1", "status": "optimal", "c_star": x,
//    "nu": [S][A], "policy": [S][A], "lambda_star": [K], "dual_slacks": [K]}

#include "cmdp/lp_oracle.hpp"
#include "cmdp/tabular.hpp"
#include "cmdp/weakly_coupled.hpp"

#include <json.hpp>

#include <string>

namespace cmdp {

using Json = nlohmann::json;

Json to_json(const TabularCMDPd& cmdp);
TabularCMDPd cmdp_from_json(const Json& j);

Json to_json(const WeaklyCoupledCMDP& problem);
WeaklyCoupledCMDP wc_cmdp_from_json(const Json& j);

Json to_json(const OracleSolution& sol);
Json to_json(const StationaryPolicyd& policy);

Json read_json_file(const std::string& path);
void write_json_file(const std::string& path, const Json& j);

}  // namespace cmdp
