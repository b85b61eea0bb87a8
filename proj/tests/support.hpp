// Small fixtures shared by the unit tests and the acceptance runner.
#pragma once

#include "dfmdp/policy.hpp"
#include "dfmdp/rng.hpp"
#include "dfmdp/tabular_mdp.hpp"
#include "dfmdp/types.hpp"

#include <vector>

namespace dfmdp::testing {

/// Two states, two actions, horizon 2. θ holds the four rewards R(s, a)
/// followed by the four probabilities P(s′ = 1 | s, a).
inline TabularMdp tiny_mdp(double gamma = 0.9) {
  TabularMdp m;
  m.num_states = 2;
  m.num_actions = 2;
  m.start_state = 0;
  m.horizon = 2;
  m.gamma = gamma;
  m.resize();
  for (int s = 0; s < 2; ++s)
    for (int a = 0; a < 2; ++a) {
      const int k = m.index(s, a);
      m.reward_param[k] = k;
      m.prob_param[k] = 4 + k;
      m.next_true[k] = 1;
      m.next_false[k] = 0;
    }
  return m;
}

inline Vector random_tiny_theta(Rng& rng) {
  Vector th(8);
  for (int i = 0; i < 4; ++i) th[i] = normal(rng);
  for (int i = 4; i < 8; ++i) th[i] = uniform(rng, 0.2, 0.8);
  return th;
}

inline Matrix random_table(int actions, int states, Rng& rng, double scale = 1.0) {
  Matrix q(actions, states);
  for (Eigen::Index j = 0; j < q.cols(); ++j)
    for (Eigen::Index i = 0; i < q.rows(); ++i) q(i, j) = scale * normal(rng);
  return q;
}

/// (Q, θ) on the tiny MDP with δ ≡ 0 on every path: state 1's Q-row is state
/// 0's row reversed, so both states share the soft value v, and the rewards
/// are set to R(s, a) = Q(s, a) − γ v. Transition probabilities are free.
struct ZeroResidualCase {
  Matrix q;
  Vector theta;
};

inline ZeroResidualCase zero_residual_case(const TabularMdp& mdp, double beta, Rng& rng) {
  ZeroResidualCase c;
  const double q0 = normal(rng), q1 = normal(rng);
  c.q.resize(2, 2);
  c.q << q0, q1, q1, q0;
  const Matrix pi = ad::softmax_columns(c.q, beta);
  const double v = pi.col(0).dot(c.q.col(0));
  c.theta.resize(8);
  for (int s = 0; s < 2; ++s)
    for (int a = 0; a < 2; ++a) c.theta[mdp.index(s, a)] = c.q(a, s) - mdp.gamma * v;
  for (int i = 4; i < 8; ++i) c.theta[i] = uniform(rng, 0.2, 0.8);
  return c;
}

/// Trajectories with hand-set rewards, states and behavior probabilities.
inline Trajectory make_trajectory(const std::vector<int>& states, const std::vector<int>& actions,
                                  const std::vector<double>& rewards, const std::vector<double>& behavior,
                                  int final_state = 0) {
  Trajectory tr;
  for (std::size_t t = 0; t < states.size(); ++t) {
    Step s;
    s.state = {static_cast<double>(states[t])};
    s.latent = {states[t]};
    s.action = actions[t];
    s.reward = rewards[t];
    s.behavior_prob = behavior[t];
    tr.steps.push_back(s);
  }
  tr.final_state = {static_cast<double>(final_state)};
  tr.final_latent = {final_state};
  return tr;
}

}  // namespace dfmdp::testing
