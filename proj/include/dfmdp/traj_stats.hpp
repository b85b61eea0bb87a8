// Per-trajectory statistics for the two optimality conditions.
//
// Policy-gradient mode: Φ = Σ_t c_t log π(a_t|s_t), c_t = Σ_{j≥t} γ^{j+1} R_j.
// Bellman mode: δ = Σ_t [Q(s_t,a_t) − R_t − γ Σ_{a′} π(a′|s_{t+1}) Q(s_{t+1},a′)].
// R_t is θ[reward_param] when the step's reward is a parameter, otherwise the
// logged reward (θ then enters only through transition events).
#pragma once

#include "dfmdp/autodiff.hpp"
#include "dfmdp/policy.hpp"
#include "dfmdp/types.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace dfmdp {

enum class Mode { pg, bellman };

inline std::string to_string(Mode m) { return m == Mode::pg ? "pg" : "bellman"; }

class StatsError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct StatsOptions {
  double gamma = 0.95;
  /// θ parameterizes transitions, so latent event records are required.
  bool transitions_depend_on_theta = false;
};

inline double step_reward(const Step& s, const Vector& theta) {
  return s.reward_param >= 0 ? theta[s.reward_param] : s.reward;
}

inline bool rewards_depend_on_theta(const Trajectory& tr) {
  for (const auto& s : tr.steps)
    if (s.reward_param >= 0) return true;
  return false;
}

namespace detail {
inline void check_latents(const Trajectory& tr, const StatsOptions& opt) {
  if (!opt.transitions_depend_on_theta) return;
  for (const auto& s : tr.steps)
    if (s.latent.empty()) throw StatsError("trajectory lacks latent event records needed for ∇θ log p");
}

inline Matrix step_states(const QFunction& q, const Trajectory& tr, bool next) {
  std::vector<const std::vector<double>*> st;
  st.reserve(tr.steps.size());
  for (std::size_t t = 0; t < tr.steps.size(); ++t) st.push_back(next ? &tr.next_state(t) : &tr.steps[t].state);
  return q.encode(st);
}

inline std::vector<int> step_actions(const Trajectory& tr) {
  std::vector<int> a;
  a.reserve(tr.steps.size());
  for (const auto& s : tr.steps) a.push_back(s.action);
  return a;
}
}  // namespace detail

/// log π(a_t|s_t) for every step and, optionally, each step's gradient as a
/// column of an n x h matrix.
struct StepLogProbs {
  Vector logp;
  Vector grad_sum;  // Σ_t ∇ log π_t
  Matrix per_step;  // empty unless requested
};

inline StepLogProbs step_log_probs(const QFunction& q, double beta, const Trajectory& tr, bool per_step,
                                   const Vector* weights = nullptr, Vector* weighted = nullptr) {
  const auto h = static_cast<Eigen::Index>(tr.steps.size());
  ad::Tape tape;
  const auto bound = ad::bind(tape, q.params());
  const auto x = tape.constant(detail::step_states(q, tr, false));
  const auto lp = tape.pick(tape.log_softmax(q.record(tape, bound, x), beta), detail::step_actions(tr));
  StepLogProbs out;
  out.logp = tape.value(lp).col(0);
  const Matrix ones = Matrix::Ones(h, 1);
  out.grad_sum = ad::collect(tape.backward(lp, &ones), bound);
  if (weights) {
    const Matrix w = *weights;
    *weighted = ad::collect(tape.backward(lp, &w), bound);
  }
  if (per_step) {
    out.per_step.resize(q.size(), h);
    for (Eigen::Index t = 0; t < h; ++t) {
      Matrix e = Matrix::Zero(h, 1);
      e(t, 0) = 1.0;
      out.per_step.col(t) = ad::collect(tape.backward(lp, &e), bound);
    }
  }
  return out;
}

struct PgTrajStats {
  double phi = 0.0;
  Vector c;             // reward-to-go weights per step
  Vector g_phi;         // ∇π Φ
  Vector g_logp_pi;     // Σ_t ∇π log π(a_t|s_t)
  Vector g_logp_theta;  // ∇θ log p from transition events
  Matrix step_grads;    // ∇π log π_t per column; kept when rewards read θ
  std::vector<int> reward_param;
};

inline PgTrajStats pg_stats(const Trajectory& tr, const Vector& theta, const QFunction& q, double beta,
                            const StatsOptions& opt = {}) {
  detail::check_latents(tr, opt);
  const auto h = static_cast<Eigen::Index>(tr.steps.size());
  PgTrajStats st;
  st.c.resize(h);
  double acc = 0.0;
  for (Eigen::Index t = h; t-- > 0;) {
    acc += std::pow(opt.gamma, static_cast<double>(t + 1)) * step_reward(tr.steps[t], theta);
    st.c[t] = acc;
  }
  const bool keep = rewards_depend_on_theta(tr);
  auto lp = step_log_probs(q, beta, tr, keep, &st.c, &st.g_phi);
  st.phi = st.c.dot(lp.logp);
  st.g_logp_pi = std::move(lp.grad_sum);
  st.step_grads = std::move(lp.per_step);
  st.g_logp_theta = transition_log_likelihood_grad(tr, theta);
  st.reward_param.reserve(h);
  for (const auto& s : tr.steps) st.reward_param.push_back(s.reward_param);
  return st;
}

struct BellmanTrajStats {
  double delta = 0.0;
  Vector g_delta_pi;
  Vector g_delta_theta;
  Vector g_logp_pi;
  Vector g_logp_theta;
};

/// δ recorded on a tape; returns its value and ∇π δ.
inline double bellman_error(const Trajectory& tr, const Vector& theta, const QFunction& q, double beta, double gamma,
                            Vector* grad = nullptr) {
  double rsum = 0.0;
  for (const auto& s : tr.steps) rsum += step_reward(s, theta);
  ad::Tape tape;
  const auto bound = ad::bind(tape, q.params());
  const auto cur = q.record(tape, bound, tape.constant(detail::step_states(q, tr, false)));
  const auto nxt = q.record(tape, bound, tape.constant(detail::step_states(q, tr, true)));
  const auto q_sa = tape.sum(tape.pick(cur, detail::step_actions(tr)));
  const auto ones = tape.constant(Matrix::Ones(1, q.num_actions()));
  const auto v_next = tape.sum(tape.affine(ones, tape.mul(tape.softmax(nxt, beta), nxt)));
  const auto delta = tape.sub(tape.sub(q_sa, tape.scale(v_next, gamma)), tape.scalar_constant(rsum));
  if (grad) *grad = ad::gradient(tape, delta, bound);
  return tape.scalar(delta);
}

inline BellmanTrajStats bellman_stats(const Trajectory& tr, const Vector& theta, const QFunction& q, double beta,
                                      const StatsOptions& opt = {}) {
  detail::check_latents(tr, opt);
  BellmanTrajStats st;
  st.delta = bellman_error(tr, theta, q, beta, opt.gamma, &st.g_delta_pi);
  st.g_delta_theta = Vector::Zero(theta.size());
  for (const auto& s : tr.steps)
    if (s.reward_param >= 0) st.g_delta_theta[s.reward_param] -= 1.0;
  st.g_logp_pi = step_log_probs(q, beta, tr, false).grad_sum;
  st.g_logp_theta = transition_log_likelihood_grad(tr, theta);
  return st;
}

/// The per-trajectory first-order estimator of ∇π J:
/// pg → ∇π Φ; bellman → δ ∇π δ + ½ δ² ∇π log p.
inline Vector first_order_estimate(Mode mode, const Trajectory& tr, const Vector& theta, const QFunction& q,
                                   double beta, double gamma) {
  if (mode == Mode::pg) {
    const auto h = static_cast<Eigen::Index>(tr.steps.size());
    Vector c(h);
    double acc = 0.0;
    for (Eigen::Index t = h; t-- > 0;) {
      acc += std::pow(gamma, static_cast<double>(t + 1)) * step_reward(tr.steps[t], theta);
      c[t] = acc;
    }
    Vector g;
    step_log_probs(q, beta, tr, false, &c, &g);
    return g;
  }
  Vector gd;
  const double d = bellman_error(tr, theta, q, beta, gamma, &gd);
  return d * gd + 0.5 * d * d * step_log_probs(q, beta, tr, false).grad_sum;
}

}  // namespace dfmdp
