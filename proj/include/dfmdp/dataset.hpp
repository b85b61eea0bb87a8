// Dataset generation: instances, splits and logged behavior trajectories.
#pragma once

#include "dfmdp/features.hpp"
#include "dfmdp/instance.hpp"
#include "dfmdp/rng.hpp"
#include "dfmdp/simulate.hpp"
#include "dfmdp/solver.hpp"
#include "dfmdp/types.hpp"

#include <stdexcept>

namespace dfmdp {

struct DatasetOptions {
  int train = 7;
  int val = 1;
  int test = 2;
  int trajectories = 100;
  double noise_scale = 3.0;

  int instances() const { return train + val + test; }
};

inline std::uint64_t instance_seed(std::uint64_t dataset_seed, int index) {
  return stream_seed(dataset_seed, 1000 + static_cast<std::uint64_t>(index));
}

inline Split split_for(const DatasetOptions& opt, int index) {
  if (index < opt.train) return Split::train;
  if (index < opt.train + opt.val) return Split::val;
  return Split::test;
}

/// Instances 0..train-1 are training MDPs, then validation, then test. One
/// feature generator is shared by all of them. Behavior trajectories come
/// from the uniform policy or a soft policy solved on the true parameters.
inline Dataset generate_dataset(Domain domain, Regime regime, std::uint64_t seed, const EnvConfig& cfg = {},
                                const DatasetOptions& opt = {}) {
  if (opt.train < 0 || opt.val < 0 || opt.test < 0) throw std::invalid_argument("negative split size");
  if (opt.trajectories < 1) throw std::invalid_argument("need at least one trajectory per instance");
  Dataset ds;
  ds.domain = domain;
  ds.regime = regime;
  ds.seed = seed;
  ds.feature_seed = stream_seed(seed, streams::features);
  ds.noise_scale = opt.noise_scale;
  ds.config = cfg;
  const auto gen = make_feature_generator(cfg.block(domain), ds.feature_seed);
  const SolverConfig behavior_solver = near_optimal_solver(domain, cfg);
  for (int i = 0; i < opt.instances(); ++i) {
    DatasetEntry e;
    const std::uint64_t s = instance_seed(seed, i);
    e.instance = generate_instance(domain, s, cfg, gen, opt.noise_scale);
    e.split = split_for(opt, i);
    const auto policy = behavior_policy(regime, e.instance, behavior_solver, s);
    auto sim = make_simulator(domain, cfg, e.instance.true_params, true);
    e.trajectories = simulate_trajectories(*sim, *policy, opt.trajectories, s);
    ds.entries().push_back(std::move(e));
  }
  return ds;
}

}  // namespace dfmdp
