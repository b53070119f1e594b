#pragma once

#include "cmdp/tabular.hpp"

#include <string>

namespace cmdp {

/// Sparse equality-form LP: min c'x s.t. A x = b, x >= 0.
struct StandardFormLP {
  Eigen::SparseMatrix<double> A;  // column major
  VectorXd b;
  VectorXd c;
};

enum class LpStatus { optimal, infeasible };

struct SimplexOptions {
  double feasibility_tol = 1e-9;
  double optimality_tol = 1e-10;
  double pivot_tol = 1e-7;
  /// Degenerate pivots in a row before pricing switches to Bland's rule.
  int degenerate_limit = 50;
  int refactor_interval = 100;
  /// Columns priced per partial-pricing block; 0 picks max(1024, n / 8).
  Index pricing_block = 0;
  long max_pivots = 1'000'000;
};

struct SimplexResult {
  LpStatus status = LpStatus::infeasible;
  VectorXd x;
  /// Row duals y with c_B' B^{-1}; reduced costs are c - A'y.
  VectorXd duals;
  double objective = 0.0;
  long pivots = 0;
};

/// Two-phase revised simplex with partial Dantzig pricing and a Bland's-rule
/// fallback on degenerate stalls.
SimplexResult solve_standard_form(const StandardFormLP& lp, const SimplexOptions& options = {});

struct OracleSolution {
  LpStatus status = LpStatus::infeasible;
  OccupationMeasured nu_star;
  double c_star = 0.0;
  StationaryPolicyd policy_star;
  /// q_k - sum d_k nu_star.
  VectorXd dual_slacks;
  /// Nonnegative multipliers of the constraint rows at the optimum.
  VectorXd lambda_star;
  long pivots = 0;
};

constexpr Index kMaxOraclePairs = 100'000;

/// Occupation-measure LP of a CMDP. Throws std::length_error beyond
/// kMaxOraclePairs allowed state-action pairs.
OracleSolution solve_lp(const TabularCMDPd& cmdp, const SimplexOptions& options = {});

/// True iff lambda_k (D_k - q_k) is within `tol` of zero for every k, with D
/// taken from the solution.
bool check_complementary_slackness(const OracleSolution& sol, const VectorXd& lambda, double tol = 1e-6);

std::string to_string(LpStatus status);

}  // namespace cmdp
