// Step simulators for the benchmark families and their belief updates.
#pragma once

#include "dfmdp/rng.hpp"
#include "dfmdp/tabular_mdp.hpp"
#include "dfmdp/types.hpp"

#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace dfmdp {

struct StepResult {
  double reward = 0.0;
  int observation = -1;
  int reward_param = -1;
  std::vector<LatentEvent> events;
};

/// One environment run under a fixed parameter vector θ.
class Simulator {
 public:
  virtual ~Simulator() = default;
  virtual int num_actions() const = 0;
  virtual int horizon() const = 0;
  virtual int state_dim() const = 0;
  virtual void reset(Rng& rng) = 0;
  virtual const std::vector<double>& state() const = 0;
  virtual const std::vector<int>& latent() const = 0;
  virtual StepResult step(int action, Rng& rng) = 0;
};

// ---------------------------------------------------------------------------
// Tabular (gridworld and small test MDPs)

class TabularSimulator final : public Simulator {
 public:
  TabularSimulator(TabularMdp mdp, Vector theta, double reward_noise = 0.0)
      : mdp_(std::move(mdp)), theta_(std::move(theta)), noise_(reward_noise) {
    mdp_.validate();
  }
  int num_actions() const override { return mdp_.num_actions; }
  int horizon() const override { return mdp_.horizon; }
  int state_dim() const override { return 1; }
  void reset(Rng&) override { set(mdp_.start_state); }
  const std::vector<double>& state() const override { return state_; }
  const std::vector<int>& latent() const override { return latent_; }

  StepResult step(int action, Rng& rng) override {
    if (action < 0 || action >= mdp_.num_actions) throw std::out_of_range("tabular step: invalid action");
    StepResult out;
    const int s = latent_[0];
    const int k = mdp_.index(s, action);
    out.reward = mdp_.reward(s, action, theta_);
    if (noise_ > 0.0) out.reward += normal(rng, 0.0, noise_);
    out.reward_param = mdp_.reward_param[k];
    int next = mdp_.next_fixed[k];
    if (next < 0) {
      const int param = mdp_.prob_param[k];
      const int bit = uniform01(rng) < theta_[param] ? 1 : 0;
      next = bit ? mdp_.next_true[k] : mdp_.next_false[k];
      out.events.push_back({s, bit, param, EventKind::bernoulli});
    }
    set(next);
    return out;
  }

  const TabularMdp& mdp() const { return mdp_; }

 private:
  void set(int s) {
    latent_ = {s};
    state_ = {static_cast<double>(s)};
  }

  TabularMdp mdp_;
  Vector theta_;
  double noise_;
  std::vector<double> state_;
  std::vector<int> latent_;
};

// ---------------------------------------------------------------------------
// Snare finding

enum class SnareOutcome { not_found = 0, found = 1 };

/// Belief after visiting `action` with `outcome`, then one arrival round.
/// `miss` is the probability a present snare survives a visit.
inline std::vector<double> belief_step_snare(const std::vector<double>& b, const Vector& p, int action,
                                             SnareOutcome outcome, double miss = 0.1) {
  if (action < 0 || action >= static_cast<int>(b.size()))
    throw std::out_of_range("belief_step_snare: site " + std::to_string(action) + " out of range");
  std::vector<double> out = b;
  double& v = out[action];
  if (outcome == SnareOutcome::found) {
    v = 0.0;
  } else {
    const double num = miss * v;
    const double den = num + (1.0 - v);
    v = den > 0.0 ? num / den : 0.0;
  }
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] + (1.0 - out[i]) * p[i];
  return out;
}

class SnareSimulator final : public Simulator {
 public:
  SnareSimulator(Vector arrival, int horizon, double removal_success = 0.9)
      : p_(std::move(arrival)), horizon_(horizon), success_(removal_success) {
    for (Eigen::Index i = 0; i < p_.size(); ++i)
      if (!(p_[i] >= 0.0 && p_[i] <= 1.0)) throw std::invalid_argument("snare: arrival probability outside [0,1]");
  }
  int num_actions() const override { return static_cast<int>(p_.size()); }
  int horizon() const override { return horizon_; }
  int state_dim() const override { return static_cast<int>(p_.size()); }
  void reset(Rng&) override {
    belief_.assign(p_.size(), 0.0);
    present_.assign(p_.size(), 0);
  }
  const std::vector<double>& state() const override { return belief_; }
  const std::vector<int>& latent() const override { return present_; }

  StepResult step(int action, Rng& rng) override {
    if (action < 0 || action >= num_actions()) throw std::out_of_range("snare step: invalid site");
    StepResult out;
    SnareOutcome seen = SnareOutcome::not_found;
    if (present_[action] && uniform01(rng) < success_) {
      present_[action] = 0;
      seen = SnareOutcome::found;
    }
    out.reward = seen == SnareOutcome::found ? 1.0 : -1.0;
    out.observation = static_cast<int>(seen);
    for (int i = 0; i < num_actions(); ++i) {
      if (present_[i]) continue;
      const int arrived = uniform01(rng) < p_[i] ? 1 : 0;
      out.events.push_back({i, arrived, i, EventKind::bernoulli});
      present_[i] = arrived;
    }
    belief_ = belief_step_snare(belief_, p_, action, seen, 1.0 - success_);
    return out;
  }

 private:
  Vector p_;
  int horizon_;
  double success_;
  std::vector<double> belief_;
  std::vector<int> present_;
};

// ---------------------------------------------------------------------------
// Tuberculosis adherence
//
// θ per patient: 8 entries, index s*4 + a*2 + s' holding P(s' | s, a).

inline int tb_index(int patient, int state, int act, int next) {
  return patient * 8 + state * 4 + act * 2 + next;
}

/// Belief after intervening on `action` and observing its state.
inline std::vector<double> belief_step_tb(const std::vector<double>& b, const Vector& theta, int action,
                                          int observed_state) {
  if (action < 0 || action >= static_cast<int>(b.size()))
    throw std::out_of_range("belief_step_tb: patient " + std::to_string(action) + " out of range");
  std::vector<double> out = b;
  out[action] = observed_state ? 1.0 : 0.0;
  for (int i = 0; i < static_cast<int>(out.size()); ++i) {
    const int act = i == action ? 1 : 0;
    out[i] = out[i] * theta[tb_index(i, 1, act, 1)] + (1.0 - out[i]) * theta[tb_index(i, 0, act, 1)];
  }
  return out;
}

class TbSimulator final : public Simulator {
 public:
  TbSimulator(Vector theta, int horizon) : theta_(std::move(theta)), horizon_(horizon) {
    if (theta_.size() % 8 != 0) throw std::invalid_argument("tb: parameter count must be a multiple of 8");
    patients_ = static_cast<int>(theta_.size() / 8);
  }
  int num_actions() const override { return patients_; }
  int horizon() const override { return horizon_; }
  int state_dim() const override { return patients_; }
  void reset(Rng&) override {
    belief_.assign(patients_, 0.0);
    adhering_.assign(patients_, 0);
  }
  const std::vector<double>& state() const override { return belief_; }
  const std::vector<int>& latent() const override { return adhering_; }

  StepResult step(int action, Rng& rng) override {
    if (action < 0 || action >= patients_) throw std::out_of_range("tb step: invalid patient");
    StepResult out;
    out.observation = adhering_[action];
    belief_ = belief_step_tb(belief_, theta_, action, out.observation);
    int count = 0;
    for (int i = 0; i < patients_; ++i) {
      const int act = i == action ? 1 : 0;
      const int s = adhering_[i];
      const int next = uniform01(rng) < theta_[tb_index(i, s, act, 1)] ? 1 : 0;
      out.events.push_back({i, next, tb_index(i, s, act, next), EventKind::categorical});
      adhering_[i] = next;
      count += next;
    }
    out.reward = count;
    return out;
  }

 private:
  Vector theta_;
  int horizon_;
  int patients_ = 0;
  std::vector<double> belief_;
  std::vector<int> adhering_;
};

/// Simulator for a benchmark domain under parameters θ.
inline std::unique_ptr<Simulator> make_simulator(Domain domain, const EnvConfig& cfg, const Vector& theta,
                                                 bool noisy_rewards = false) {
  switch (domain) {
    case Domain::gridworld:
      return std::make_unique<TabularSimulator>(make_gridworld(cfg), theta,
                                                noisy_rewards ? cfg.grid_reward_noise : 0.0);
    case Domain::snare:
      return std::make_unique<SnareSimulator>(theta, cfg.snare_horizon, cfg.snare_removal_success);
    case Domain::tb:
      return std::make_unique<TbSimulator>(theta, cfg.tb_horizon);
  }
  throw std::invalid_argument("make_simulator: unknown domain");
}

}  // namespace dfmdp
