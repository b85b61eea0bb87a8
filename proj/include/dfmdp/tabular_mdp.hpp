// Finite MDPs whose rewards and/or Bernoulli transitions read entries of θ.
#pragma once

#include "dfmdp/types.hpp"

#include <stdexcept>
#include <vector>

namespace dfmdp {

/// Each (s, a) either moves deterministically to `next_fixed`, or moves to
/// `next_true` with probability θ[prob_param] and to `next_false` otherwise.
/// R(s, a) = θ[reward_param] when reward_param >= 0, else `reward_const`.
struct TabularMdp {
  int num_states = 0;
  int num_actions = 0;
  int start_state = 0;
  int horizon = 1;
  double gamma = 0.95;

  std::vector<int> reward_param;
  std::vector<double> reward_const;
  std::vector<int> next_fixed;
  std::vector<int> prob_param;
  std::vector<int> next_true;
  std::vector<int> next_false;

  int index(int s, int a) const { return s * num_actions + a; }

  void resize() {
    const auto n = static_cast<std::size_t>(num_states * num_actions);
    reward_param.assign(n, -1);
    reward_const.assign(n, 0.0);
    next_fixed.assign(n, -1);
    prob_param.assign(n, -1);
    next_true.assign(n, -1);
    next_false.assign(n, -1);
  }

  double reward(int s, int a, const Vector& theta) const {
    const int k = index(s, a);
    return reward_param[k] >= 0 ? theta[reward_param[k]] : reward_const[k];
  }

  /// (next state, probability, event) outcomes of taking a in s.
  struct Outcome {
    int next;
    double prob;
    int param;  // -1 when deterministic
    int bit;
  };

  std::vector<Outcome> outcomes(int s, int a, const Vector& theta) const {
    const int k = index(s, a);
    if (next_fixed[k] >= 0) return {{next_fixed[k], 1.0, -1, 0}};
    const double p = theta[prob_param[k]];
    return {{next_true[k], p, prob_param[k], 1}, {next_false[k], 1.0 - p, prob_param[k], 0}};
  }

  void validate() const {
    const auto n = static_cast<std::size_t>(num_states * num_actions);
    if (reward_param.size() != n || next_fixed.size() != n || prob_param.size() != n)
      throw std::invalid_argument("tabular MDP tables have the wrong size");
    for (std::size_t k = 0; k < n; ++k)
      if (next_fixed[k] < 0 && prob_param[k] < 0)
        throw std::invalid_argument("tabular MDP: (s, a) without a transition");
  }
};

namespace grid {
enum Action { north = 0, south = 1, east = 2, west = 3, stay = 4 };

inline int cell(int size, int row, int col) { return row * size + col; }
inline int start_cell(int size) { return cell(size, size - 1, 0); }  // bottom-left
inline int safe_cell(int size) { return cell(size, 0, size - 1); }   // top-right

/// Deterministic move; leaving the grid keeps the agent in place.
inline int move(int size, int s, int a) {
  int r = s / size;
  int c = s % size;
  switch (a) {
    case north: r = r > 0 ? r - 1 : r; break;
    case south: r = r + 1 < size ? r + 1 : r; break;
    case east: c = c + 1 < size ? c + 1 : c; break;
    case west: c = c > 0 ? c - 1 : c; break;
    default: break;
  }
  return cell(size, r, c);
}
}  // namespace grid

/// Gridworld: θ holds one reward per cell, paid on entering (or staying in) it.
inline TabularMdp make_gridworld(int size, int horizon, double gamma) {
  if (size < 2) throw std::invalid_argument("gridworld needs size >= 2");
  TabularMdp m;
  m.num_states = size * size;
  m.num_actions = 5;
  m.start_state = grid::start_cell(size);
  m.horizon = horizon;
  m.gamma = gamma;
  m.resize();
  for (int s = 0; s < m.num_states; ++s)
    for (int a = 0; a < m.num_actions; ++a) {
      const int next = grid::move(size, s, a);
      m.next_fixed[m.index(s, a)] = next;
      m.reward_param[m.index(s, a)] = next;
    }
  return m;
}

inline TabularMdp make_gridworld(const EnvConfig& cfg) {
  return make_gridworld(cfg.grid_size, cfg.grid_horizon, cfg.gamma);
}

}  // namespace dfmdp
