// Problem instances, trajectories and datasets.
#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace dfmdp {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class Domain { gridworld, snare, tb };

inline std::string to_string(Domain d) {
  switch (d) {
    case Domain::gridworld: return "gridworld";
    case Domain::snare: return "snare";
    case Domain::tb: return "tb";
  }
  return "?";
}

inline Domain parse_domain(const std::string& s) {
  if (s == "gridworld") return Domain::gridworld;
  if (s == "snare") return Domain::snare;
  if (s == "tb") return Domain::tb;
  throw std::invalid_argument("unknown domain '" + s + "'");
}

/// Structural knobs of the three benchmark families. Defaults are the
/// benchmark settings; tests shrink them.
struct EnvConfig {
  double gamma = 0.95;

  int grid_size = 5;
  int grid_horizon = 20;
  double cliff_fraction = 0.2;
  double grid_reward_noise = 0.0;  // std of observation noise on logged rewards

  int snare_sites = 20;
  int snare_high_risk = 4;
  int snare_horizon = 20;
  double snare_clip_lo = 0.01;
  double snare_clip_hi = 0.99;
  double snare_removal_success = 0.9;

  int tb_patients = 5;
  int tb_horizon = 30;
  double tb_effect_hi = 0.4;
  double tb_clip_lo = 0.05;
  double tb_clip_hi = 0.95;
  double tb_adhere_lo = 0.4, tb_adhere_hi = 0.9;  // P(1 | 1, passive)
  double tb_lapse_lo = 0.1, tb_lapse_hi = 0.5;    // P(1 | 0, passive)

  int horizon(Domain d) const {
    switch (d) {
      case Domain::gridworld: return grid_horizon;
      case Domain::snare: return snare_horizon;
      case Domain::tb: return tb_horizon;
    }
    return 0;
  }
  int entities(Domain d) const {
    switch (d) {
      case Domain::gridworld: return grid_size * grid_size;
      case Domain::snare: return snare_sites;
      case Domain::tb: return tb_patients;
    }
    return 0;
  }
  /// Parameters per entity: one reward / arrival probability, or a 2x2x2 tensor.
  int block(Domain d) const { return d == Domain::tb ? 8 : 1; }
  int num_params(Domain d) const { return entities(d) * block(d); }
  int num_actions(Domain d) const {
    switch (d) {
      case Domain::gridworld: return 5;
      case Domain::snare: return snare_sites;
      case Domain::tb: return tb_patients;
    }
    return 0;
  }
};

/// How a latent transition event depends on θ.
enum class EventKind {
  bernoulli,    // log p = outcome ? log θ[k] : log(1 − θ[k])
  categorical,  // log p = log θ[k]; k already names the realized outcome
};

struct LatentEvent {
  int entity = 0;
  int outcome = 0;
  int param_index = 0;
  EventKind kind = EventKind::bernoulli;

  friend bool operator==(const LatentEvent&, const LatentEvent&) = default;
};

inline double event_log_prob(const LatentEvent& e, const Vector& theta) {
  const double p = theta[e.param_index];
  if (e.kind == EventKind::categorical) return std::log(p);
  return e.outcome ? std::log(p) : std::log1p(-p);
}

/// d log p(event) / d θ[param_index].
inline double event_log_prob_slope(const LatentEvent& e, const Vector& theta) {
  const double p = theta[e.param_index];
  if (e.kind == EventKind::categorical) return 1.0 / p;
  return e.outcome ? 1.0 / p : -1.0 / (1.0 - p);
}

struct Step {
  std::vector<double> state;  // policy input (cell index or belief vector)
  int action = 0;
  double reward = 0.0;
  double behavior_prob = 1.0;
  int reward_param = -1;  // index of θ that R_θ(s, a) equals, if rewards are parameters
  int observation = -1;   // snare: 1 found; tb: observed adherence of the visited patient
  std::vector<int> latent;  // hidden state before the step
  std::vector<LatentEvent> events;

  friend bool operator==(const Step&, const Step&) = default;
};

struct Trajectory {
  std::vector<Step> steps;
  std::vector<double> final_state;
  std::vector<int> final_latent;

  int horizon() const { return static_cast<int>(steps.size()); }
  const std::vector<double>& next_state(std::size_t t) const {
    return t + 1 < steps.size() ? steps[t + 1].state : final_state;
  }
  friend bool operator==(const Trajectory&, const Trajectory&) = default;
};

inline double transition_log_likelihood(const Trajectory& tr, const Vector& theta) {
  double total = 0.0;
  for (const auto& s : tr.steps)
    for (const auto& e : s.events) total += event_log_prob(e, theta);
  return total;
}

/// ∇_θ log p_θ(τ): only transition events depend on θ.
inline Vector transition_log_likelihood_grad(const Trajectory& tr, const Vector& theta) {
  Vector g = Vector::Zero(theta.size());
  for (const auto& s : tr.steps)
    for (const auto& e : s.events) g[e.param_index] += event_log_prob_slope(e, theta);
  return g;
}

struct MdpInstance {
  Domain domain = Domain::gridworld;
  std::uint64_t seed = 0;
  EnvConfig config;
  Vector true_params;
  Matrix features;  // one row per entity
  std::vector<int> cliffs;      // gridworld
  std::vector<int> high_risk;   // snare

  int num_entities() const { return config.entities(domain); }
  int horizon() const { return config.horizon(domain); }
};

enum class Split { train, val, test };

inline std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw std::invalid_argument("unknown split '" + s + "'");
}

enum class Regime { random, near_optimal };

inline std::string to_string(Regime r) { return r == Regime::random ? "random" : "near_optimal"; }
inline Regime parse_regime(const std::string& s) {
  if (s == "random") return Regime::random;
  if (s == "near_optimal" || s == "near-optimal") return Regime::near_optimal;
  throw std::invalid_argument("unknown regime '" + s + "'");
}

/// Who is reading trajectories. Trainer code paths use `training`, which
/// refuses test-split data.
enum class Access { training, evaluation };

class SplitAccessError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

struct DatasetEntry {
  MdpInstance instance;
  std::vector<Trajectory> trajectories;
  Split split = Split::train;

  friend bool operator==(const DatasetEntry& a, const DatasetEntry& b) {
    return a.split == b.split && a.trajectories == b.trajectories &&
           a.instance.domain == b.instance.domain && a.instance.seed == b.instance.seed &&
           a.instance.true_params == b.instance.true_params &&
           a.instance.features == b.instance.features && a.instance.cliffs == b.instance.cliffs &&
           a.instance.high_risk == b.instance.high_risk;
  }
};

class Dataset {
 public:
  Domain domain = Domain::gridworld;
  Regime regime = Regime::random;
  std::uint64_t seed = 0;
  std::uint64_t feature_seed = 0;
  double noise_scale = 3.0;
  EnvConfig config;

  std::vector<DatasetEntry>& entries() { return entries_; }
  const std::vector<DatasetEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  std::vector<std::size_t> indices(Split s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < entries_.size(); ++i)
      if (entries_[i].split == s) out.push_back(i);
    return out;
  }

  const MdpInstance& instance(std::size_t i) const { return entries_.at(i).instance; }
  Split split(std::size_t i) const { return entries_.at(i).split; }

  const std::vector<Trajectory>& trajectories(std::size_t i, Access access) const {
    const auto& e = entries_.at(i);
    if (e.split == Split::test) {
      if (access == Access::training)
        throw SplitAccessError("test trajectories requested from a training code path");
      ++test_reads_;
    }
    return e.trajectories;
  }

  /// Number of times test trajectories were handed out.
  std::size_t test_reads() const { return test_reads_; }

  friend bool operator==(const Dataset& a, const Dataset& b) {
    return a.domain == b.domain && a.regime == b.regime && a.seed == b.seed &&
           a.feature_seed == b.feature_seed && a.noise_scale == b.noise_scale &&
           a.entries_ == b.entries_;
  }

 private:
  std::vector<DatasetEntry> entries_;
  mutable std::size_t test_reads_ = 0;
};

}  // namespace dfmdp
