// Domain solver dispatch and behavior policies.
#pragma once

#include "dfmdp/policy.hpp"
#include "dfmdp/simulators.hpp"
#include "dfmdp/soft_ddqn.hpp"
#include "dfmdp/soft_vi.hpp"
#include "dfmdp/tabular_mdp.hpp"
#include "dfmdp/types.hpp"

#include <memory>
#include <stdexcept>

namespace dfmdp {

struct SolverConfig {
  Backup backup = Backup::expected;
  double vi_beta = 0.1;
  int vi_iterations = 10000;
  DdqnConfig ddqn;
  /// Training steps when continuing from a previous network of the same
  /// instance; 0 means the full train_steps budget.
  int warm_steps = 0;
};

/// Forward-pass settings for a domain: gridworld β=0.1, snare β=1, tb β=5.
inline SolverConfig forward_solver(Domain domain, const EnvConfig& cfg) {
  SolverConfig s;
  s.ddqn.gamma = cfg.gamma;
  s.ddqn.beta = domain == Domain::tb ? 5.0 : 1.0;
  return s;
}

/// Behavior-policy settings: gridworld β=1 with 50000 iterations, snare β=5
/// with 50000 steps, tb β=20 with 100000 steps.
inline SolverConfig near_optimal_solver(Domain domain, const EnvConfig& cfg) {
  SolverConfig s = forward_solver(domain, cfg);
  s.vi_beta = 1.0;
  s.vi_iterations = 50000;
  s.ddqn.beta = domain == Domain::tb ? 20.0 : 5.0;
  s.ddqn.train_steps = domain == Domain::tb ? 100000 : 50000;
  return s;
}

/// Solves the domain MDP under θ. `warm` (same architecture) seeds the
/// iterate: the Q-table for value iteration, the network for DDQN.
inline SolveResult solve(Domain domain, const EnvConfig& cfg, const Vector& theta, const SolverConfig& sc,
                         std::uint64_t seed, const QFunction* warm = nullptr) {
  if (domain == Domain::gridworld) {
    const auto mdp = make_gridworld(cfg);
    Matrix init;
    const Matrix* init_ptr = nullptr;
    if (warm) {
      init = warm->table();
      init_ptr = &init;
    }
    return soft_value_iteration(mdp, theta, sc.vi_beta, sc.vi_iterations, sc.backup, init_ptr);
  }
  auto sim = make_simulator(domain, cfg, theta);
  DdqnConfig dc = sc.ddqn;
  dc.gamma = cfg.gamma;
  dc.backup = sc.backup;
  if (warm && sc.warm_steps > 0) dc.train_steps = sc.warm_steps;
  return soft_ddqn(*sim, dc, seed, warm);
}

/// Behavior policy for dataset generation. Near-optimal needs the true θ*.
inline std::unique_ptr<Policy> behavior_policy(Regime regime, const MdpInstance& inst, const SolverConfig& sc,
                                               std::uint64_t seed) {
  const int actions = inst.config.num_actions(inst.domain);
  if (regime == Regime::random) return std::make_unique<UniformPolicy>(actions);
  if (inst.true_params.size() != inst.config.num_params(inst.domain))
    throw std::invalid_argument("near-optimal behavior policy needs the true parameters");
  auto res = solve(inst.domain, inst.config, inst.true_params, sc, seed);
  return std::make_unique<SoftPolicy>(res.q, res.beta);
}

}  // namespace dfmdp
