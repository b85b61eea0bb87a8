// Off-policy evaluation: CWPDIS value, effective sample size, and the
// penalized metric Eval = V − λ / sqrt(ESS).
#pragma once

#include "dfmdp/autodiff.hpp"
#include "dfmdp/policy.hpp"
#include "dfmdp/types.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace dfmdp {

class OpeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct OpeConfig {
  double gamma = 0.95;
  double lambda_ess = 1.0;
  double ratio_cap = 0.0;  // diagnostics only; 0 disables
};

struct OpeReport {
  double cwpdis_value = 0.0;
  double ess = 0.0;
  double eval = 0.0;
  Vector min_rho, max_rho, ess_t;  // per timestep
};

namespace detail {
inline void check_batch(const std::vector<Trajectory>& trajs) {
  if (trajs.empty()) throw OpeError("OPE needs at least one trajectory");
  const int h = trajs.front().horizon();
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    if (trajs[i].horizon() != h) throw OpeError("OPE: trajectories of unequal length");
    for (const auto& s : trajs[i].steps)
      if (!(s.behavior_prob > 0.0))
        throw OpeError("OPE: behavior probability must be positive (trajectory " + std::to_string(i) + ")");
  }
}

inline Matrix rewards(const std::vector<Trajectory>& trajs) {
  const int h = trajs.front().horizon();
  Matrix r(static_cast<Eigen::Index>(trajs.size()), h);
  for (std::size_t i = 0; i < trajs.size(); ++i)
    for (int t = 0; t < h; ++t) r(i, t) = trajs[i].steps[t].reward;
  return r;
}

inline Vector discounts(int h, double gamma) {
  Vector g(h);
  double d = gamma;
  for (int t = 0; t < h; ++t, d *= gamma) g[t] = d;
  return g;
}
}  // namespace detail

/// ρ[i, t] = Π_{t′ ≤ t} π(a|s) / π_beh(a|s), one row per trajectory.
inline Matrix importance_ratios(const std::vector<Trajectory>& trajs, const Policy& policy) {
  detail::check_batch(trajs);
  const int h = trajs.front().horizon();
  Matrix rho(static_cast<Eigen::Index>(trajs.size()), h);
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    double acc = 1.0;
    for (int t = 0; t < h; ++t) {
      const auto& s = trajs[i].steps[t];
      acc *= policy.probabilities(s.state)[s.action] / s.behavior_prob;
      rho(i, t) = acc;
    }
  }
  return rho;
}

/// Eval from precomputed ratios and rewards (both k x h).
inline OpeReport eval_from_ratios(const Matrix& rho_in, const Matrix& r, const OpeConfig& cfg) {
  Matrix rho = rho_in;
  if (cfg.ratio_cap > 0.0) rho = rho.cwiseMin(cfg.ratio_cap);
  const Eigen::Index h = rho.cols();
  const Vector disc = detail::discounts(static_cast<int>(h), cfg.gamma);
  OpeReport rep;
  rep.min_rho = rho.colwise().minCoeff().transpose();
  rep.max_rho = rho.colwise().maxCoeff().transpose();
  rep.ess_t.resize(h);
  for (Eigen::Index t = 0; t < h; ++t) {
    const double den = rho.col(t).sum();
    if (!(den > 0.0)) throw OpeError("OPE: all importance weights are zero at step " + std::to_string(t + 1));
    rep.cwpdis_value += disc[t] * rho.col(t).dot(r.col(t)) / den;
    rep.ess_t[t] = den * den / rho.col(t).squaredNorm();
  }
  rep.ess = rep.ess_t.sum();
  rep.eval = rep.cwpdis_value - cfg.lambda_ess / std::sqrt(rep.ess);
  return rep;
}

inline OpeReport eval_metric(const std::vector<Trajectory>& trajs, const Policy& policy, const OpeConfig& cfg = {}) {
  const Matrix rho = importance_ratios(trajs, policy);
  return eval_from_ratios(rho, detail::rewards(trajs), cfg);
}

struct EvalGradient {
  OpeReport report;
  Vector grad;  // d Eval / d (Q-function parameters)
};

/// Eval recorded on a tape through log softmax(β Q), differentiated w.r.t.
/// the Q-function parameters.
inline EvalGradient eval_grad(const std::vector<Trajectory>& trajs, const QFunction& q, double beta,
                              const OpeConfig& cfg = {}) {
  detail::check_batch(trajs);
  const auto k = static_cast<Eigen::Index>(trajs.size());
  const int h = trajs.front().horizon();

  // Columns are trajectory-major: column i*h + t holds step t of trajectory i.
  std::vector<const std::vector<double>*> states;
  std::vector<int> actions;
  Matrix log_beh(k * h, 1);
  states.reserve(k * h);
  for (Eigen::Index i = 0; i < k; ++i)
    for (int t = 0; t < h; ++t) {
      const auto& s = trajs[i].steps[t];
      states.push_back(&s.state);
      actions.push_back(s.action);
      log_beh(i * h + t, 0) = std::log(s.behavior_prob);
    }
  const Matrix r = detail::rewards(trajs).transpose();  // h x k
  const Matrix lower = Matrix::Ones(h, h).triangularView<Eigen::Lower>();
  const Matrix disc = detail::discounts(h, cfg.gamma).transpose();

  ad::Tape tape;
  const auto bound = ad::bind(tape, q.params());
  const auto x = tape.constant(q.encode(states));
  const auto logp = tape.pick(tape.log_softmax(q.record(tape, bound, x), beta), actions);
  const auto log_ratio = tape.reshape(tape.sub(logp, tape.constant(log_beh)), h, k);
  const auto rho = tape.exp(tape.affine(tape.constant(lower), log_ratio));  // h x k
  const auto ones = tape.constant(Matrix::Ones(k, 1));
  const auto den = tape.affine(rho, ones);
  const auto num = tape.affine(tape.mul(rho, tape.constant(r)), ones);
  const auto value = tape.affine(tape.constant(disc), tape.div(num, den));
  auto out = value;
  if (cfg.lambda_ess != 0.0) {
    const auto sq = tape.affine(tape.square(rho), ones);
    const auto ess = tape.sum(tape.div(tape.square(den), sq));
    const auto inv_sqrt = tape.exp(tape.scale(tape.log(ess), -0.5));
    out = tape.sub(value, tape.scale(inv_sqrt, cfg.lambda_ess));
  }

  const Matrix rho_v = tape.value(rho).transpose();
  EvalGradient res;
  res.report = eval_from_ratios(rho_v, r.transpose(), OpeConfig{cfg.gamma, cfg.lambda_ess, 0.0});
  res.grad = ad::gradient(tape, out, bound);
  return res;
}

}  // namespace dfmdp
