// Random benchmark instances.
#pragma once

#include "dfmdp/features.hpp"
#include "dfmdp/rng.hpp"
#include "dfmdp/simulators.hpp"
#include "dfmdp/tabular_mdp.hpp"
#include "dfmdp/types.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace dfmdp {

/// `count` distinct picks from `pool` (partial Fisher-Yates).
inline std::vector<int> sample_without_replacement(std::vector<int> pool, int count, Rng& rng) {
  if (count > static_cast<int>(pool.size())) throw std::invalid_argument("sample_without_replacement: count too large");
  for (int i = 0; i < count; ++i) {
    const int j = i + uniform_index(rng, static_cast<int>(pool.size()) - i);
    std::swap(pool[i], pool[j]);
  }
  pool.resize(count);
  std::sort(pool.begin(), pool.end());
  return pool;
}

struct TrueParams {
  Vector theta;
  std::vector<int> cliffs;
  std::vector<int> high_risk;
};

inline TrueParams sample_gridworld_params(const EnvConfig& cfg, Rng& rng) {
  const int n = cfg.grid_size * cfg.grid_size;
  const int start = grid::start_cell(cfg.grid_size);
  const int safe = grid::safe_cell(cfg.grid_size);
  std::vector<int> pool;
  for (int c = 0; c < n; ++c)
    if (c != start && c != safe) pool.push_back(c);
  const int cliffs = static_cast<int>(std::lround(cfg.cliff_fraction * n));
  TrueParams out;
  out.cliffs = sample_without_replacement(pool, cliffs, rng);
  out.theta.resize(n);
  for (int c = 0; c < n; ++c) {
    if (c == safe)
      out.theta[c] = normal(rng, 5.0, 1.0);
    else if (std::binary_search(out.cliffs.begin(), out.cliffs.end(), c))
      out.theta[c] = normal(rng, -10.0, 1.0);
    else
      out.theta[c] = normal(rng, 0.0, 1.0);
  }
  return out;
}

inline TrueParams sample_snare_params(const EnvConfig& cfg, Rng& rng) {
  std::vector<int> pool(cfg.snare_sites);
  std::iota(pool.begin(), pool.end(), 0);
  TrueParams out;
  out.high_risk = sample_without_replacement(pool, cfg.snare_high_risk, rng);
  out.theta.resize(cfg.snare_sites);
  for (int i = 0; i < cfg.snare_sites; ++i) {
    const bool high = std::binary_search(out.high_risk.begin(), out.high_risk.end(), i);
    const double p = high ? normal(rng, 0.8, 0.1) : normal(rng, 0.1, 0.05);
    out.theta[i] = std::clamp(p, cfg.snare_clip_lo, cfg.snare_clip_hi);
  }
  return out;
}

/// Passive adherence probabilities from the configured uniform ranges,
/// shifted by ± an intervention effect ~ U(0, effect_hi), clipped, and paired
/// with their complements.
inline TrueParams sample_tb_params(const EnvConfig& cfg, Rng& rng) {
  TrueParams out;
  out.theta.resize(cfg.tb_patients * 8);
  for (int i = 0; i < cfg.tb_patients; ++i) {
    const double base[2] = {uniform(rng, cfg.tb_lapse_lo, cfg.tb_lapse_hi),
                            uniform(rng, cfg.tb_adhere_lo, cfg.tb_adhere_hi)};
    const double effect = uniform(rng, 0.0, cfg.tb_effect_hi);
    for (int s = 0; s < 2; ++s)
      for (int a = 0; a < 2; ++a) {
        const double p1 = std::clamp(base[s] + (a ? effect : -effect), cfg.tb_clip_lo, cfg.tb_clip_hi);
        const double p0 = std::clamp(1.0 - p1, cfg.tb_clip_lo, cfg.tb_clip_hi);
        out.theta[tb_index(i, s, a, 1)] = p1 / (p0 + p1);
        out.theta[tb_index(i, s, a, 0)] = p0 / (p0 + p1);
      }
  }
  return out;
}

inline TrueParams sample_true_params(Domain domain, const EnvConfig& cfg, std::uint64_t seed) {
  Rng rng = make_rng(seed, streams::params);
  switch (domain) {
    case Domain::gridworld: return sample_gridworld_params(cfg, rng);
    case Domain::snare: return sample_snare_params(cfg, rng);
    case Domain::tb: return sample_tb_params(cfg, rng);
  }
  throw std::invalid_argument("sample_true_params: unknown domain");
}

inline MdpInstance generate_instance(Domain domain, std::uint64_t seed, const EnvConfig& cfg,
                                     const FeatureGenerator& gen, double noise_scale = 3.0) {
  MdpInstance inst;
  inst.domain = domain;
  inst.seed = seed;
  inst.config = cfg;
  auto params = sample_true_params(domain, cfg, seed);
  inst.true_params = std::move(params.theta);
  inst.cliffs = std::move(params.cliffs);
  inst.high_risk = std::move(params.high_risk);
  inst.features = generate_features(gen, parameter_blocks(inst.true_params, cfg.block(domain)), noise_scale, seed);
  return inst;
}

}  // namespace dfmdp
