#pragma once

#include "dfmdp/policy.hpp"
#include "dfmdp/rng.hpp"
#include "dfmdp/simulators.hpp"
#include "dfmdp/types.hpp"

#include <stdexcept>
#include <string>
#include <vector>

namespace dfmdp {

inline int sample_action(const Vector& probs, Rng& rng) {
  const double u = uniform01(rng);
  double acc = 0.0;
  for (Eigen::Index a = 0; a < probs.size(); ++a) {
    acc += probs[a];
    if (u < acc) return static_cast<int>(a);
  }
  // Rounding left u above the cumulative sum; take the last action with mass.
  for (Eigen::Index a = probs.size(); a-- > 0;)
    if (probs[a] > 0.0) return static_cast<int>(a);
  throw std::runtime_error("sample_action: empty distribution");
}

/// One rollout of the simulator's horizon under `policy`.
inline Trajectory simulate_trajectory(Simulator& sim, const Policy& policy, Rng& rng, bool record_latents = true) {
  Trajectory tr;
  sim.reset(rng);
  tr.steps.reserve(sim.horizon());
  for (int t = 0; t < sim.horizon(); ++t) {
    Step step;
    step.state = sim.state();
    if (record_latents) step.latent = sim.latent();
    const Vector probs = policy.probabilities(step.state);
    step.action = sample_action(probs, rng);
    step.behavior_prob = probs[step.action];
    if (!(step.behavior_prob > 0.0))
      throw std::runtime_error("simulate: chosen action has zero probability at step " + std::to_string(t));
    auto res = sim.step(step.action, rng);
    step.reward = res.reward;
    step.observation = res.observation;
    step.reward_param = res.reward_param;
    if (record_latents) step.events = std::move(res.events);
    tr.steps.push_back(std::move(step));
  }
  tr.final_state = sim.state();
  if (record_latents) tr.final_latent = sim.latent();
  return tr;
}

/// k rollouts; trajectory i draws from its own stream of `seed`.
inline std::vector<Trajectory> simulate_trajectories(Simulator& sim, const Policy& policy, int count,
                                                     std::uint64_t seed, bool record_latents = true) {
  std::vector<Trajectory> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) {
    Rng rng = make_rng(stream_seed(seed, streams::trajectories), static_cast<std::uint64_t>(i));
    out.push_back(simulate_trajectory(sim, policy, rng, record_latents));
  }
  return out;
}

}  // namespace dfmdp
