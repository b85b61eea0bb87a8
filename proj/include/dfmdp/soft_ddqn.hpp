// Soft double DQN on belief-state simulators.
#pragma once

#include "dfmdp/autodiff.hpp"
#include "dfmdp/mlp.hpp"
#include "dfmdp/policy.hpp"
#include "dfmdp/rng.hpp"
#include "dfmdp/simulate.hpp"
#include "dfmdp/simulators.hpp"
#include "dfmdp/soft_vi.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace dfmdp {

struct DdqnConfig {
  double gamma = 0.95;
  double beta = 1.0;
  int random_steps = 1000;
  int train_steps = 10000;
  int batch = 32;
  int target_refresh = 100;
  double lr = 1e-3;
  double adam_b1 = 0.9;
  double adam_b2 = 0.999;
  double adam_eps = 1e-8;
  std::vector<int> hidden{64, 64};
  Backup backup = Backup::expected;
};

/// Append-only experience store.
class ReplayBuffer {
 public:
  struct Transition {
    std::vector<double> state;
    int action = 0;
    double reward = 0.0;
    std::vector<double> next_state;
    bool done = false;
  };

  void push(Transition t) { data_.push_back(std::move(t)); }
  std::size_t size() const { return data_.size(); }
  const Transition& operator[](std::size_t i) const { return data_[i]; }

 private:
  std::vector<Transition> data_;
};

/// Adam on a flat parameter vector.
class Adam {
 public:
  Adam(Eigen::Index n, double lr, double b1, double b2, double eps)
      : m_(Vector::Zero(n)), v_(Vector::Zero(n)), lr_(lr), b1_(b1), b2_(b2), eps_(eps) {}

  /// Descent step on `params` for gradient `g`.
  void step(Vector& params, const Vector& g) {
    ++t_;
    m_ = b1_ * m_ + (1.0 - b1_) * g;
    v_ = b2_ * v_ + (1.0 - b2_) * g.cwiseProduct(g);
    const double c1 = 1.0 - std::pow(b1_, t_);
    const double c2 = 1.0 - std::pow(b2_, t_);
    params.array() -= lr_ * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps_);
  }

 private:
  Vector m_, v_;
  double lr_, b1_, b2_, eps_;
  int t_ = 0;
};

/// Trains Q_online on transitions from `sim`, with targets
/// y = r + γ Σ_{a′} softmax(β Q_online(s′))_{a′} Q_target(s′, a′).
/// Training rollouts follow the current soft policy. A warm start continues
/// from given network weights (random-experience phase still runs).
inline SolveResult soft_ddqn(Simulator& sim, const DdqnConfig& cfg, std::uint64_t seed,
                             const QFunction* warm_start = nullptr) {
  if (!(cfg.beta > 0.0)) throw std::invalid_argument("soft_ddqn: beta must be positive");
  const MlpShape shape{sim.state_dim(), cfg.hidden, sim.num_actions()};
  Rng rng = make_rng(seed, streams::solver);

  QFunction online;
  if (warm_start) {
    if (warm_start->kind() != QKind::mlp || !(warm_start->shape() == shape))
      throw std::invalid_argument("soft_ddqn: warm start has a different architecture");
    online = *warm_start;
  } else {
    online = QFunction::mlp(shape, init_mlp(shape, rng));
  }
  QFunction target = online;
  Adam adam(online.size(), cfg.lr, cfg.adam_b1, cfg.adam_b2, cfg.adam_eps);
  ReplayBuffer buffer;

  int t_in_episode = 0;
  sim.reset(rng);
  auto env_step = [&](int action) {
    ReplayBuffer::Transition tr;
    tr.state = sim.state();
    tr.action = action;
    tr.reward = sim.step(action, rng).reward;
    tr.next_state = sim.state();
    buffer.push(std::move(tr));
    if (++t_in_episode >= sim.horizon()) {
      sim.reset(rng);
      t_in_episode = 0;
    }
  };

  for (int i = 0; i < cfg.random_steps; ++i) env_step(uniform_index(rng, sim.num_actions()));

  SolveResult out;
  out.beta = cfg.beta;
  const int d = shape.input;
  Matrix x(d, cfg.batch), x2(d, cfg.batch);
  Matrix y(cfg.batch, 1);
  std::vector<int> actions(cfg.batch);
  for (int step = 0; step < cfg.train_steps; ++step) {
    const Vector probs = ad::softmax_columns(online.values(sim.state()), cfg.beta).col(0);
    env_step(sample_action(probs, rng));
    if (buffer.size() == 0) continue;

    std::vector<double> rewards(cfg.batch);
    for (int b = 0; b < cfg.batch; ++b) {
      const auto& tr = buffer[static_cast<std::size_t>(uniform01(rng) * static_cast<double>(buffer.size()))];
      for (int i = 0; i < d; ++i) {
        x(i, b) = tr.state[i];
        x2(i, b) = tr.next_state[i];
      }
      actions[b] = tr.action;
      rewards[b] = tr.reward;
    }
    const Matrix q_online_next = online.values(x2);
    const Matrix q_target_next = target.values(x2);
    for (int b = 0; b < cfg.batch; ++b) {
      double v;
      if (cfg.backup == Backup::log_sum_exp) {
        v = soft_state_value(q_target_next.col(b), cfg.beta, Backup::log_sum_exp);
      } else {
        const Vector w = ad::softmax_columns(q_online_next.col(b), cfg.beta).col(0);
        v = w.dot(q_target_next.col(b));
      }
      y(b, 0) = rewards[b] + cfg.gamma * v;
    }

    ad::Tape tape;
    const auto bound = ad::bind(tape, online.params());
    const auto q = online.record(tape, bound, tape.constant(x));
    const auto err = tape.sub(tape.pick(q, actions), tape.constant(y));
    const auto loss = tape.scale(tape.sum(tape.square(err)), 1.0 / cfg.batch);
    const double lv = tape.scalar(loss);
    if (!std::isfinite(lv)) throw SolverError("soft_ddqn: non-finite loss at step " + std::to_string(step));
    const Vector g = ad::gradient(tape, loss, bound);
    adam.step(online.params().values(), g);
    out.residual = lv;
    if ((step + 1) % cfg.target_refresh == 0) target = online;
  }
  if (!online.params().values().allFinite()) throw SolverError("soft_ddqn: non-finite parameters");
  out.q = std::move(online);
  out.iterations = cfg.train_steps;
  return out;
}

}  // namespace dfmdp
