#pragma once

// Slow, independent reference computations used by tests and acceptance checks.

#include "cmdp/tabular.hpp"

#include <vector>

namespace oracle {

using cmdp::Index;
using cmdp::Tabled;
using cmdp::VectorXd;

/// Stationary state occupation by fixed-point iteration of
/// nu = (1 - g) mu0 + g P_pi' nu.
VectorXd power_iteration_occupation(const cmdp::TabularCMDPd& m, const cmdp::StationaryPolicyd& pi,
                                    double tol = 1e-15, long max_iter = 1'000'000);

/// Normalized Q of `cost` under pi by summing the discounted series until
/// the tail is below tol.
Tabled truncated_sum_q(const cmdp::TabularCMDPd& m, const cmdp::StationaryPolicyd& pi, const Tabled& cost,
                       double tol = 1e-14);

/// Optimal normalized values min_pi of `cost` by value iteration.
VectorXd value_iteration(const cmdp::TabularCMDPd& m, const Tabled& cost, double tol = 1e-13);

/// max_lambda g(lambda), g(lambda) = min_pi L(pi, lambda), for K = 1 by
/// golden-section search on [0, upper]; value iteration gives each g.
double dual_grid_value(const cmdp::TabularCMDPd& m, double upper, double tol = 1e-9);

/// Dense product of independent MDPs (costs add), at most 1e4 joint states.
/// Joint index is mixed radix with part 0 most significant.
struct DenseProduct {
  Index n_states = 0;
  Index n_actions = 0;
  std::vector<Tabled> kernel;  // kernel[s](a, s')
  Tabled cost;
  std::vector<Tabled> aux;
  VectorXd init;
};
DenseProduct dense_product(const std::vector<cmdp::TabularCMDPd>& parts);

/// Converts a dense product back to a TabularCMDP with the given thresholds.
cmdp::TabularCMDPd to_tabular(const DenseProduct& p, double discount, const VectorXd& thresholds);

/// argmin over the simplex grid with step 1/resolution of <q, p> + KL(p || prior) / eta
/// (at most 3 actions). Returns the grid point and its objective.
std::pair<VectorXd, double> softmax_grid_search(const VectorXd& q, const VectorXd& prior, double eta,
                                                int resolution = 400);

/// Objective of the same problem at a given p.
double regularized_objective(const VectorXd& q, const VectorXd& prior, double eta, const VectorXd& p);

/// Nearest point of {lambda >= 0, ||lambda|| <= radius} to v in 2-D by a
/// polar grid search.
VectorXd projection_grid_search(const VectorXd& v, double radius, int resolution = 2000);

/// Largest sum w_ij U_ij over integer U >= 0 with row sums <= rows_cap,
/// column sums <= cols_cap and U_ij = 0 where usable(i, j) is false, by
/// exhaustive enumeration.
double brute_force_transportation(const Tabled& w, const std::vector<int>& rows_cap, const std::vector<int>& cols_cap,
                                  const cmdp::Mask& usable);

}  // namespace oracle
