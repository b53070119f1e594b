#pragma once

#include "cmdp/harness.hpp"
#include "cmdp/random_stream.hpp"
#include "cmdp/tabular.hpp"

#include <vector>

namespace testing {

using namespace cmdp;

inline TabularCMDPd random_instance(Index S, Index A, Index K, std::uint64_t seed, double discount = 0.8) {
  harness::RandomCmdpSpec spec;
  spec.states = S;
  spec.actions = A;
  spec.constraints = K;
  spec.discount = discount;
  return harness::random_cmdp(spec, seed);
}

inline StationaryPolicyd random_policy(const TabularCMDPd& m, std::uint64_t seed) {
  RandomStream rng(seed, 0, StreamTag::fixture);
  StationaryPolicyd p{Tabled::Zero(m.n_states, m.n_actions)};
  for (Index s = 0; s < m.n_states; ++s) {
    for (Index a = 0; a < m.n_actions; ++a)
      if (m.is_allowed(s, a)) p.probs(s, a) = 0.05 + rng.uniform();
    p.probs.row(s) /= p.probs.row(s).sum();
  }
  return p;
}

/// Deterministic single-kernel CMDP; next[s][a] is the successor.
inline TabularCMDPd deterministic_cmdp(const std::vector<std::vector<Index>>& next, const Tabled& cost,
                                       double discount, const VectorXd& init) {
  TabularCMDPd m;
  m.n_states = static_cast<Index>(next.size());
  m.n_actions = static_cast<Index>(next.front().size());
  m.discount = discount;
  std::vector<Eigen::Triplet<double>> t;
  for (Index s = 0; s < m.n_states; ++s)
    for (Index a = 0; a < m.n_actions; ++a) t.emplace_back(m.pair(s, a), next[s][a], 1.0);
  m.kernel.resize(m.n_states * m.n_actions, m.n_states);
  m.kernel.setFromTriplets(t.begin(), t.end());
  m.cost = cost;
  m.thresholds = VectorXd(0);
  m.init_dist = init;
  m.cost_lower_bound = -1.0;
  return m;
}

inline VectorXd vec(std::initializer_list<double> xs) {
  VectorXd v(static_cast<Index>(xs.size()));
  Index i = 0;
  for (double x : xs) v(i++) = x;
  return v;
}

}  // namespace testing
