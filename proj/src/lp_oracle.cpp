#include "cmdp/lp_oracle.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace cmdp {

namespace {

class RevisedSimplex {
 public:
  RevisedSimplex(const StandardFormLP& lp, const SimplexOptions& options)
      : A_(lp.A), b_(lp.b), c_(lp.c), opt_(options), m_(lp.A.rows()), n_(lp.A.cols()) {
    if (b_.size() != m_ || c_.size() != n_) throw std::invalid_argument("simplex: dimension mismatch");
    flipped_.assign(static_cast<std::size_t>(m_), false);
    for (Index i = 0; i < m_; ++i)
      if (b_(i) < 0) {
        flipped_[i] = true;
        b_(i) = -b_(i);
      }
    if (std::any_of(flipped_.begin(), flipped_.end(), [](bool f) { return f; })) {
      VectorXd sign(m_);
      for (Index i = 0; i < m_; ++i) sign(i) = flipped_[i] ? -1.0 : 1.0;
      A_ = sign.asDiagonal() * A_;
    }
    A_.makeCompressed();
    position_.assign(static_cast<std::size_t>(n_ + m_), -1);
    basis_.resize(static_cast<std::size_t>(m_));
    for (Index i = 0; i < m_; ++i) {
      basis_[i] = n_ + i;
      position_[n_ + i] = i;
    }
    binv_ = Eigen::MatrixXd::Identity(m_, m_);
    xb_ = b_;
  }

  SimplexResult solve() {
    SimplexResult result;
    phase_ = 1;
    iterate();
    double infeasibility = 0.0;
    for (Index i = 0; i < m_; ++i)
      if (basis_[i] >= n_) infeasibility += xb_(i);
    const double scale = std::max(1.0, b_.cwiseAbs().maxCoeff());
    if (infeasibility > opt_.feasibility_tol * scale) {
      result.status = LpStatus::infeasible;
      result.pivots = pivots_;
      return result;
    }
    drive_out_artificials();
    phase_ = 2;
    iterate();

    result.status = LpStatus::optimal;
    result.x = VectorXd::Zero(n_);
    for (Index i = 0; i < m_; ++i)
      if (basis_[i] < n_) result.x(basis_[i]) = std::max(xb_(i), 0.0);
    result.duals = duals();
    for (Index i = 0; i < m_; ++i)
      if (flipped_[i]) result.duals(i) = -result.duals(i);
    result.objective = c_.dot(result.x);
    result.pivots = pivots_;
    return result;
  }

 private:
  double cost(Index j) const {
    if (j >= n_) return phase_ == 1 ? 1.0 : 0.0;
    return phase_ == 1 ? 0.0 : c_(j);
  }

  VectorXd duals() const {
    VectorXd cb(m_);
    for (Index i = 0; i < m_; ++i) cb(i) = cost(basis_[i]);
    return binv_.transpose() * cb;
  }

  VectorXd column(Index j) const {
    if (j >= n_) return binv_.col(j - n_);
    VectorXd out = VectorXd::Zero(m_);
    for (Eigen::SparseMatrix<double>::InnerIterator it(A_, j); it; ++it)
      out.noalias() += it.value() * binv_.col(it.row());
    return out;
  }

  void refactor() {
    Eigen::MatrixXd B = Eigen::MatrixXd::Zero(m_, m_);
    for (Index i = 0; i < m_; ++i) {
      const Index j = basis_[i];
      if (j >= n_) {
        B(j - n_, i) = 1.0;
      } else {
        for (Eigen::SparseMatrix<double>::InnerIterator it(A_, j); it; ++it) B(it.row(), i) = it.value();
      }
    }
    binv_ = B.partialPivLu().inverse();
    xb_ = binv_ * b_;
    for (Index i = 0; i < m_; ++i)
      if (std::abs(xb_(i)) < 1e-13) xb_(i) = 0.0;
  }

  void pivot(Index row, Index entering, const VectorXd& alpha) {
    const double theta = std::max(xb_(row), 0.0) / alpha(row);
    xb_.noalias() -= theta * alpha;
    xb_(row) = theta;
    for (Index i = 0; i < m_; ++i)
      if (xb_(i) < 0 && xb_(i) > -opt_.feasibility_tol) xb_(i) = 0.0;
    const Eigen::RowVectorXd pivot_row = binv_.row(row) / alpha(row);
    VectorXd others = alpha;
    others(row) = 0.0;
    binv_.noalias() -= others * pivot_row;
    binv_.row(row) = pivot_row;
    position_[basis_[row]] = -1;
    basis_[row] = entering;
    position_[entering] = row;
    if (++pivots_ % opt_.refactor_interval == 0) refactor();
    if (pivots_ > opt_.max_pivots) throw std::runtime_error("simplex: pivot limit exceeded");
  }

  double reduced_cost(Index j, const VectorXd& y) const {
    double d = phase_ == 1 ? 0.0 : c_(j);
    for (Eigen::SparseMatrix<double>::InnerIterator it(A_, j); it; ++it) d -= it.value() * y(it.row());
    return d;
  }

  // Smallest index with a negative reduced cost.
  Index price_bland(const VectorXd& y, double tol) const {
    for (Index j = 0; j < n_; ++j)
      if (position_[j] < 0 && reduced_cost(j, y) < -tol) return j;
    return -1;
  }

  // Dantzig's rule restricted to the first block, scanning from a rotating
  // start, that holds an improving column.
  Index price_partial(const VectorXd& y, double tol) {
    const Index block = opt_.pricing_block > 0 ? opt_.pricing_block : std::max<Index>(1024, n_ / 8);
    const Index blocks = (n_ + block - 1) / block;
    for (Index k = 0; k < blocks; ++k) {
      const Index b = (next_block_ + k) % blocks;
      Index entering = -1;
      double best = -tol;
      for (Index j = b * block; j < std::min(n_, (b + 1) * block); ++j) {
        if (position_[j] >= 0) continue;
        const double d = reduced_cost(j, y);
        if (d < best) {
          best = d;
          entering = j;
        }
      }
      if (entering >= 0) {
        next_block_ = (b + 1) % blocks;
        return entering;
      }
    }
    return -1;
  }

  double pivot_floor(const VectorXd& alpha) const {
    return opt_.pivot_tol * std::max(1.0, alpha.cwiseAbs().maxCoeff());
  }

  // Minimum ratio, ties to the smallest basic index.
  Index ratio_bland(const VectorXd& alpha) const {
    const double floor = pivot_floor(alpha);
    Index leaving = -1;
    double best = 0.0;
    for (Index i = 0; i < m_; ++i) {
      if (alpha(i) <= floor) continue;
      const double ratio = xb_(i) / alpha(i);
      const double eps = 1e-12 * (1.0 + best);
      if (leaving < 0 || ratio < best - eps) {
        leaving = i;
        best = ratio;
      } else if (ratio <= best + eps && basis_[i] < basis_[leaving]) {
        leaving = i;
        best = std::min(best, ratio);
      }
    }
    return leaving;
  }

  // Harris two-pass test: bound the step with relaxed feasibility, then
  // take the largest pivot among rows within that bound.
  Index ratio_harris(const VectorXd& alpha) const {
    const double floor = pivot_floor(alpha);
    double bound = infinity<double>();
    for (Index i = 0; i < m_; ++i)
      if (alpha(i) > floor) bound = std::min(bound, (xb_(i) + opt_.feasibility_tol) / alpha(i));
    if (bound == infinity<double>()) return -1;
    Index leaving = -1;
    for (Index i = 0; i < m_; ++i) {
      if (alpha(i) <= floor || xb_(i) / alpha(i) > bound) continue;
      if (leaving < 0 || alpha(i) > alpha(leaving)) leaving = i;
    }
    return leaving;
  }

  void iterate() {
    const double tol =
        phase_ == 1 ? opt_.optimality_tol : opt_.optimality_tol * std::max(1.0, c_.cwiseAbs().maxCoeff());
    bool bland = false;
    int degenerate = 0;
    for (;;) {
      const VectorXd y = duals();
      Index entering = bland ? price_bland(y, tol) : price_partial(y, tol);
      if (entering < 0) return;

      VectorXd alpha = column(entering);
      Index leaving = bland ? ratio_bland(alpha) : ratio_harris(alpha);
      if (leaving < 0) {
        // A drifted inverse can hide the blocking row; retry on a fresh factorization.
        refactor();
        alpha = column(entering);
        leaving = bland ? ratio_bland(alpha) : ratio_harris(alpha);
        if (leaving < 0) throw std::runtime_error("simplex: problem is unbounded");
      }

      if (xb_(leaving) / alpha(leaving) <= 1e-12) {
        if (++degenerate > opt_.degenerate_limit) bland = true;
      } else {
        degenerate = 0;
        bland = false;
      }
      pivot(leaving, entering, alpha);
    }
  }

  void drive_out_artificials() {
    for (Index r = 0; r < m_; ++r) {
      if (basis_[r] < n_) continue;
      const VectorXd row_alpha = A_.transpose() * binv_.row(r).transpose();
      Index best = -1;
      double best_abs = opt_.pivot_tol;
      for (Index j = 0; j < n_; ++j) {
        if (position_[j] >= 0) continue;
        if (std::abs(row_alpha(j)) > best_abs) {
          best_abs = std::abs(row_alpha(j));
          best = j;
        }
      }
      // No candidate: the row is redundant and its artificial stays at zero.
      if (best >= 0) pivot(r, best, column(best));
    }
  }

  Eigen::SparseMatrix<double> A_;
  VectorXd b_;
  VectorXd c_;
  SimplexOptions opt_;
  Index m_;
  Index n_;
  std::vector<bool> flipped_;
  std::vector<Index> basis_;
  std::vector<Index> position_;
  Eigen::MatrixXd binv_;
  VectorXd xb_;
  int phase_ = 1;
  long pivots_ = 0;
  Index next_block_ = 0;
};

}  // namespace

SimplexResult solve_standard_form(const StandardFormLP& lp, const SimplexOptions& options) {
  return RevisedSimplex(lp, options).solve();
}

OracleSolution solve_lp(const TabularCMDPd& cmdp, const SimplexOptions& options) {
  require_valid(cmdp);
  const Index pairs = cmdp.n_allowed_pairs();
  if (pairs > kMaxOraclePairs)
    throw std::length_error("solve_lp: " + std::to_string(pairs) + " state-action pairs exceed the oracle limit");

  const Index S = cmdp.n_states;
  const Index A = cmdp.n_actions;
  const Index K = cmdp.n_constraints();
  const double g = cmdp.discount;

  std::vector<std::pair<Index, Index>> columns;
  columns.reserve(static_cast<std::size_t>(pairs));
  std::vector<Eigen::Triplet<double>> triplets;
  for (Index s = 0; s < S; ++s)
    for (Index a = 0; a < A; ++a) {
      if (!cmdp.is_allowed(s, a)) continue;
      const Index col = static_cast<Index>(columns.size());
      columns.emplace_back(s, a);
      double self = 1.0;
      for (Kernel<double>::InnerIterator it(cmdp.kernel, cmdp.pair(s, a)); it; ++it) {
        if (it.col() == s)
          self -= g * it.value();
        else
          triplets.emplace_back(it.col(), col, -g * it.value());
      }
      triplets.emplace_back(s, col, self);
      for (Index k = 0; k < K; ++k) triplets.emplace_back(S + k, col, cmdp.aux_costs[k](s, a));
    }
  for (Index k = 0; k < K; ++k) triplets.emplace_back(S + k, pairs + k, 1.0);

  StandardFormLP lp;
  lp.A.resize(S + K, pairs + K);
  lp.A.setFromTriplets(triplets.begin(), triplets.end());
  lp.b.resize(S + K);
  lp.b.head(S) = (1.0 - g) * cmdp.init_dist;
  lp.b.tail(K) = cmdp.thresholds;
  lp.c = VectorXd::Zero(pairs + K);
  for (Index j = 0; j < pairs; ++j) lp.c(j) = cmdp.cost(columns[j].first, columns[j].second);

  const SimplexResult raw = solve_standard_form(lp, options);
  OracleSolution sol;
  sol.status = raw.status;
  sol.pivots = raw.pivots;
  if (raw.status != LpStatus::optimal) return sol;

  sol.nu_star.mass = Tabled::Zero(S, A);
  for (Index j = 0; j < pairs; ++j) sol.nu_star.mass(columns[j].first, columns[j].second) = raw.x(j);
  const PolicyCostsd costs = costs_of_occupation(cmdp, sol.nu_star);
  sol.c_star = costs.objective;
  sol.dual_slacks = cmdp.thresholds - costs.constraints;
  sol.lambda_star = (-raw.duals.tail(K)).cwiseMax(0.0);
  sol.policy_star = policy_from_occupation(cmdp, sol.nu_star);
  return sol;
}

bool check_complementary_slackness(const OracleSolution& sol, const VectorXd& lambda, double tol) {
  if (lambda.size() != sol.dual_slacks.size())
    throw std::invalid_argument("check_complementary_slackness: dimension mismatch");
  for (Index k = 0; k < lambda.size(); ++k)
    if (std::abs(lambda(k) * sol.dual_slacks(k)) > tol) return false;
  return true;
}

std::string to_string(LpStatus status) {
  return status == LpStatus::optimal ? "optimal" : "infeasible";
}

}  // namespace cmdp
