// Exhaustive trajectory enumeration for small tabular MDPs: exact objectives
// on a tape and dense Hessians from finite differences of their gradients.
#pragma once

#include "dfmdp/autodiff.hpp"
#include "dfmdp/hessian.hpp"
#include "dfmdp/policy.hpp"
#include "dfmdp/tabular_mdp.hpp"
#include "dfmdp/traj_stats.hpp"

#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

namespace dfmdp {

struct WeightedTrajectory {
  Trajectory trajectory;
  double prob = 0.0;
};

/// Every action/outcome sequence of the MDP's horizon from its start state,
/// with its probability under (θ, softmax(β Q)). Steps record the soft
/// policy's probability as behavior_prob and the transition events.
inline std::vector<WeightedTrajectory> enumerate_trajectories(const TabularMdp& mdp, const Vector& theta,
                                                              const QFunction& q, double beta) {
  mdp.validate();
  const Matrix pi = ad::softmax_columns(q.table(), beta);
  std::vector<WeightedTrajectory> out;
  Trajectory cur;
  std::function<void(int, double)> rec = [&](int s, double prob) {
    if (static_cast<int>(cur.steps.size()) == mdp.horizon) {
      cur.final_state = {static_cast<double>(s)};
      cur.final_latent = {s};
      out.push_back({cur, prob});
      return;
    }
    for (int a = 0; a < mdp.num_actions; ++a) {
      for (const auto& o : mdp.outcomes(s, a, theta)) {
        Step st;
        st.state = {static_cast<double>(s)};
        st.latent = {s};
        st.action = a;
        st.behavior_prob = pi(a, s);
        st.reward = mdp.reward(s, a, theta);
        st.reward_param = mdp.reward_param[mdp.index(s, a)];
        if (o.param >= 0) st.events.push_back({s, o.bit, o.param, EventKind::bernoulli});
        cur.steps.push_back(std::move(st));
        rec(o.next, prob * pi(a, s) * o.prob);
        cur.steps.pop_back();
      }
    }
  };
  rec(mdp.start_state, 1.0);
  return out;
}

/// Exact J(π, θ) and its gradients.
/// pg: J = E[Σ_t γ^{t+1} R_t]; bellman: J = ½ E[δ²].
struct ExactObjective {
  double value = 0.0;
  Vector grad_pi;
  Vector grad_theta;
};

inline ExactObjective exact_objective(Mode mode, const TabularMdp& mdp, const Vector& theta, const QFunction& q,
                                      double beta) {
  if (q.kind() != QKind::tabular) throw std::invalid_argument("exact_objective needs a tabular Q-function");
  const Vector probe_theta = Vector::Constant(theta.size(), 0.5);
  // Structure only: probabilities are recomputed on the tape.
  const auto paths = enumerate_trajectories(mdp, probe_theta, q, beta);
  const auto T = static_cast<Eigen::Index>(paths.size());
  const int S = mdp.num_states;
  const int A = mdp.num_actions;
  const Eigen::Index d = theta.size();

  std::vector<int> prob_params;
  std::vector<int> local(d, -1);
  for (std::size_t k = 0; k < mdp.prob_param.size(); ++k) {
    const int p = mdp.prob_param[k];
    if (p >= 0 && local[p] < 0) {
      local[p] = static_cast<int>(prob_params.size());
      prob_params.push_back(p);
    }
  }
  const auto m = static_cast<Eigen::Index>(prob_params.size());

  Matrix sel_pi = Matrix::Zero(T, A * S);
  Matrix ones_b = Matrix::Zero(T, m), zeros_b = Matrix::Zero(T, m);
  Matrix r_coef = Matrix::Zero(T, d);
  Matrix r_const = Matrix::Zero(T, 1);
  Matrix sel_v = Matrix::Zero(T, S);
  for (Eigen::Index i = 0; i < T; ++i) {
    const auto& tr = paths[i].trajectory;
    for (std::size_t t = 0; t < tr.steps.size(); ++t) {
      const auto& st = tr.steps[t];
      const int s = static_cast<int>(st.state[0]);
      sel_pi(i, s * A + st.action) += 1.0;
      for (const auto& e : st.events) (e.outcome ? ones_b : zeros_b)(i, local[e.param_index]) += 1.0;
      const double w = mode == Mode::pg ? std::pow(mdp.gamma, static_cast<double>(t + 1)) : 1.0;
      if (st.reward_param >= 0)
        r_coef(i, st.reward_param) += w;
      else
        r_const(i, 0) += w * st.reward;
      sel_v(i, static_cast<int>(tr.next_state(t)[0])) += 1.0;
    }
  }

  ad::ParamVector th;
  th.add_segment("theta", theta);
  ad::Tape tape;
  const auto qb = ad::bind(tape, q.params());
  const auto tb = ad::bind(tape, th);
  const auto Q = qb["Q"];
  const auto theta_v = tb["theta"];
  const auto log_pi = tape.reshape(tape.log_softmax(Q, beta), A * S, 1);
  auto log_p = tape.affine(tape.constant(sel_pi), log_pi);
  if (m > 0) {
    Matrix pick = Matrix::Zero(m, d);
    for (Eigen::Index j = 0; j < m; ++j) pick(j, prob_params[j]) = 1.0;
    const auto p = tape.affine(tape.constant(pick), theta_v);
    const auto q1 = tape.sub(tape.constant(Matrix::Ones(m, 1)), p);
    log_p = tape.add(log_p, tape.affine(tape.constant(ones_b), tape.log(p)));
    log_p = tape.add(log_p, tape.affine(tape.constant(zeros_b), tape.log(q1)));
  }
  const auto prob = tape.exp(log_p);
  const auto reward = tape.add(tape.affine(tape.constant(r_coef), theta_v), tape.constant(r_const));
  ad::Var J;
  if (mode == Mode::pg) {
    J = tape.sum(tape.mul(prob, reward));
  } else {
    const auto q_vec = tape.reshape(Q, A * S, 1);
    const auto v = tape.reshape(
        tape.affine(tape.constant(Matrix::Ones(1, A)), tape.mul(tape.softmax(Q, beta), Q)), S, 1);
    const auto delta = tape.sub(tape.sub(tape.affine(tape.constant(sel_pi), q_vec), reward),
                                tape.scale(tape.affine(tape.constant(sel_v), v), mdp.gamma));
    J = tape.scale(tape.sum(tape.mul(prob, tape.square(delta))), 0.5);
  }
  const auto adj = tape.backward(J);
  return {tape.scalar(J), ad::collect(adj, qb), ad::collect(adj, tb)};
}

/// Dense ∇²π J and ∇²θπ J by central differences of the exact gradient.
inline DenseHessian exact_hessians(Mode mode, const TabularMdp& mdp, const Vector& theta, const QFunction& q,
                                   double beta, double step = 1e-5) {
  if (q.size() > kFullHessianMaxDim) throw HessianError("full Hessian oracle: policy dimension over bound");
  DenseHessian out;
  out.hessian = ad::finite_diff_jacobian(
      [&](const Vector& pi) { return exact_objective(mode, mdp, theta, q.with_values(pi), beta).grad_pi; },
      q.params().values(), step);
  out.cross = ad::finite_diff_jacobian(
      [&](const Vector& th) { return exact_objective(mode, mdp, th, q, beta).grad_pi; }, theta, step);
  return out;
}

}  // namespace dfmdp
