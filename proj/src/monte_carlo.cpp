#include "cmdp/monte_carlo.hpp"

#include <stdexcept>

namespace cmdp {

long default_horizon(double discount, double target) {
  if (!(discount > 0.0 && discount < 1.0)) throw std::invalid_argument("default_horizon: discount must lie in (0,1)");
  if (!(target > 0.0 && target < 1.0)) throw std::invalid_argument("default_horizon: target must lie in (0,1)");
  return static_cast<long>(std::ceil(std::log(target) / std::log(discount)));
}

void validate_mc_config(const MCConfig& cfg) {
  if (cfg.replications < 1) throw std::invalid_argument("monte carlo: replications must be positive");
  if (cfg.horizon < 1) throw std::invalid_argument("monte carlo: horizon must be positive");
  if (cfg.antithetic) throw std::invalid_argument("monte carlo: antithetic sampling is not supported");
}

TabularEnvironment::TabularEnvironment(const TabularCMDPd& cmdp) : cmdp_(&cmdp) {
  require_valid(cmdp);
  const Index rows = cmdp.kernel.rows();
  offsets_.reserve(static_cast<std::size_t>(rows) + 1);
  offsets_.push_back(0);
  for (Index row = 0; row < rows; ++row) {
    double run = 0.0;
    for (Kernel<double>::InnerIterator it(cmdp.kernel, row); it; ++it) {
      if (it.value() <= 0.0) continue;
      run += it.value();
      next_.push_back(it.col());
      cdf_.push_back(run);
    }
    offsets_.push_back(static_cast<Index>(next_.size()));
  }
  double run = 0.0;
  for (Index s = 0; s < cmdp.n_states; ++s) {
    run += cmdp.init_dist(s);
    init_cdf_.push_back(run);
  }
  for (Index s = 0; s < cmdp.n_states; ++s)
    for (Index a = 0; a < cmdp.n_actions; ++a) {
      if (!cmdp.is_allowed(s, a)) continue;
      cost_bound_ = std::max(cost_bound_, std::abs(cmdp.cost(s, a)));
      for (const auto& d : cmdp.aux_costs) aux_bound_ = std::max(aux_bound_, std::abs(d(s, a)));
    }
}

Index TabularEnvironment::sample_initial(RandomStream& rng) const {
  const double u = rng.uniform() * init_cdf_.back();
  for (std::size_t s = 0; s + 1 < init_cdf_.size(); ++s)
    if (u < init_cdf_[s] && cmdp_->init_dist(static_cast<Index>(s)) > 0.0) return static_cast<Index>(s);
  Index last = cmdp_->n_states - 1;
  while (last > 0 && !(cmdp_->init_dist(last) > 0.0)) --last;
  return last;
}

}  // namespace cmdp
