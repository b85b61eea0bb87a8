// Hessian strategies for the implicit backward pass: identity, low-rank plus
// Woodbury, and dense finite-difference Hessians.
#pragma once

#include "dfmdp/autodiff.hpp"
#include "dfmdp/traj_stats.hpp"
#include "dfmdp/types.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace dfmdp {

class HessianError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// UVᵀ + cI with U, V of shape n x k.
struct LowRankHessian {
  Matrix U, V;
  double c = 1.0;

  Eigen::Index n() const { return U.rows(); }
  Eigen::Index k() const { return U.cols(); }
  Matrix dense() const { return U * V.transpose() + c * Matrix::Identity(n(), n()); }
  LowRankHessian transposed() const { return {V, U, c}; }
};

inline double signed_c(Mode mode, double magnitude) {
  if (magnitude == 0.0) throw HessianError("Hessian constant c must be non-zero");
  return mode == Mode::pg ? -std::abs(magnitude) : std::abs(magnitude);
}

/// Columns u_i, v_i scaled by 1/√k so that UVᵀ = (1/k) Σ u_i v_iᵀ.
inline LowRankHessian build_lowrank(const std::vector<Vector>& u, const std::vector<Vector>& v, Mode mode,
                                    double c_magnitude) {
  if (u.empty() || u.size() != v.size()) throw std::invalid_argument("build_lowrank: need k >= 1 paired columns");
  const auto k = static_cast<Eigen::Index>(u.size());
  const Eigen::Index n = u.front().size();
  LowRankHessian h;
  h.c = signed_c(mode, c_magnitude);
  h.U.resize(n, k);
  h.V.resize(n, k);
  const double s = 1.0 / std::sqrt(static_cast<double>(k));
  for (Eigen::Index i = 0; i < k; ++i) {
    if (u[i].size() != n || v[i].size() != n)
      throw std::invalid_argument("build_lowrank: column " + std::to_string(i) + " has length " +
                                  std::to_string(u[i].size()) + ", expected " + std::to_string(n));
    h.U.col(i) = s * u[i];
    h.V.col(i) = s * v[i];
  }
  return h;
}

/// pg: u = ∇π Φ, v = Σ ∇π log π.
inline LowRankHessian build_lowrank(const std::vector<PgTrajStats>& stats, double c_magnitude) {
  std::vector<Vector> u, v;
  for (const auto& s : stats) {
    u.push_back(s.g_phi);
    v.push_back(s.g_logp_pi);
  }
  return build_lowrank(u, v, Mode::pg, c_magnitude);
}

/// bellman: u = v = ∇π δ.
inline LowRankHessian build_lowrank(const std::vector<BellmanTrajStats>& stats, double c_magnitude) {
  std::vector<Vector> u;
  for (const auto& s : stats) u.push_back(s.g_delta_pi);
  return build_lowrank(u, u, Mode::bellman, c_magnitude);
}

struct WoodburySolve {
  Vector y;
  bool ridged = false;
  double condition = 1.0;
};

/// y = (UVᵀ + cI)⁻¹ g = g/c − (1/c) U (cI_k + VᵀU)⁻¹ Vᵀ g, using only n x k
/// and k x k work. An ill-conditioned core gets a 1e-6 diagonal ridge.
inline WoodburySolve woodbury_solve(const LowRankHessian& h, const Vector& g, double max_condition = 1e12,
                                    double ridge = 1e-6) {
  if (h.c == 0.0) throw HessianError("woodbury_solve: c = 0");
  if (g.size() != h.n()) throw std::invalid_argument("woodbury_solve: vector length mismatch");
  WoodburySolve out;
  if (h.k() == 0) {
    out.y = g / h.c;
    return out;
  }
  Matrix core = h.V.transpose() * h.U;
  core.diagonal().array() += h.c;
  auto condition = [](const Matrix& m) {
    const Vector sv = Eigen::JacobiSVD<Matrix>(m).singularValues();
    return sv.minCoeff() > 0.0 ? sv.maxCoeff() / sv.minCoeff() : std::numeric_limits<double>::infinity();
  };
  out.condition = condition(core);
  if (!(out.condition <= max_condition)) {
    core.diagonal().array() += ridge;
    out.ridged = true;
    out.condition = condition(core);
  }
  Eigen::FullPivLU<Matrix> lu(core);
  if (!lu.isInvertible()) throw HessianError("woodbury_solve: k x k core is singular even after ridge");
  const Vector z = lu.solve(h.V.transpose() * g);
  out.y = (g - h.U * z) / h.c;
  if (!out.y.allFinite()) throw HessianError("woodbury_solve: non-finite solution");
  return out;
}

/// y = g / c with the mode's sign (−|c| for pg, +|c| for bellman).
inline Vector identity_solve(Mode mode, double c_magnitude, const Vector& g) {
  return g / signed_c(mode, c_magnitude);
}

/// yᵀ ∇²θπ J for policy-gradient statistics:
/// (1/k) Σ_i [(y·∇Φ_i) ∇θ log p_i + Σ_j γ^{j+1} ∇θ R_j Σ_{t≤j} y·∇ log π_t].
inline Vector cross_vjp(const std::vector<PgTrajStats>& stats, const Vector& y, Eigen::Index d, double gamma) {
  if (stats.empty()) throw std::invalid_argument("cross_vjp: no statistics");
  Vector out = Vector::Zero(d);
  for (const auto& s : stats) {
    if (s.g_phi.size() != y.size()) throw std::invalid_argument("cross_vjp: y length mismatch");
    if (s.g_logp_theta.size() != d) throw std::invalid_argument("cross_vjp: θ dimension mismatch");
    out += y.dot(s.g_phi) * s.g_logp_theta;
    bool any = false;
    for (int rp : s.reward_param) any = any || rp >= 0;
    if (!any) continue;
    if (s.step_grads.cols() != static_cast<Eigen::Index>(s.reward_param.size()))
      throw std::invalid_argument("cross_vjp: per-step gradients missing for θ-dependent rewards");
    const Vector proj = s.step_grads.transpose() * y;
    double prefix = 0.0;
    for (std::size_t j = 0; j < s.reward_param.size(); ++j) {
      prefix += proj[j];
      if (s.reward_param[j] >= 0) out[s.reward_param[j]] += std::pow(gamma, static_cast<double>(j + 1)) * prefix;
    }
  }
  return out / static_cast<double>(stats.size());
}

/// yᵀ ∇²θπ J for Bellman statistics: (1/k) Σ (y·∇π δ) ∇θ δ, plus the
/// first-order δ-weighted terms δ[(y·∇π δ) ∇θ log p + (y·∇π log p) ∇θ δ] on request.
inline Vector cross_vjp(const std::vector<BellmanTrajStats>& stats, const Vector& y, Eigen::Index d,
                        bool delta_terms = false) {
  if (stats.empty()) throw std::invalid_argument("cross_vjp: no statistics");
  Vector out = Vector::Zero(d);
  for (const auto& s : stats) {
    if (s.g_delta_pi.size() != y.size()) throw std::invalid_argument("cross_vjp: y length mismatch");
    if (s.g_delta_theta.size() != d || s.g_logp_theta.size() != d)
      throw std::invalid_argument("cross_vjp: θ dimension mismatch");
    const double yd = y.dot(s.g_delta_pi);
    out += yd * s.g_delta_theta;
    if (delta_terms) out += s.delta * (yd * s.g_logp_theta + y.dot(s.g_logp_pi) * s.g_delta_theta);
  }
  return out / static_cast<double>(stats.size());
}

/// Dense ∇²π J (n x n) and ∇²θπ J (n x d, rows indexed by π).
struct DenseHessian {
  Matrix hessian;
  Matrix cross;
};

inline constexpr Eigen::Index kFullHessianMaxDim = 2000;

/// Estimate Σ_i w_i [∂g_i/∂π + g_i ∇π log p_iᵀ] and
/// Σ_i w_i [∂g_i/∂θ + g_i ∇θ log p_iᵀ], where g_i is the first-order estimator
/// of the mode and its Jacobians come from central differences. Weights
/// default to 1/k; exact trajectory probabilities turn this into the exact
/// expectation over an enumerated MDP.
inline DenseHessian full_hessian_sampled(Mode mode, const std::vector<Trajectory>& trajs, const Vector& theta,
                                         const QFunction& q, double beta, double gamma, double step = 1e-5,
                                         const std::vector<double>* weights = nullptr) {
  const Eigen::Index n = q.size();
  if (n > kFullHessianMaxDim)
    throw HessianError("full Hessian limited to n <= " + std::to_string(kFullHessianMaxDim) + ", got " +
                       std::to_string(n));
  if (trajs.empty()) throw std::invalid_argument("full_hessian_sampled: no trajectories");
  if (weights && weights->size() != trajs.size()) throw std::invalid_argument("full_hessian_sampled: weight count");
  const double uniform_w = 1.0 / static_cast<double>(trajs.size());
  auto w = [&](std::size_t i) { return weights ? (*weights)[i] : uniform_w; };
  auto mean_grad = [&](const Vector& pi, const Vector& th) {
    const QFunction qp = q.with_values(pi);
    Vector g = Vector::Zero(n);
    for (std::size_t i = 0; i < trajs.size(); ++i) g += w(i) * first_order_estimate(mode, trajs[i], th, qp, beta, gamma);
    return g;
  };
  const Vector& pi0 = q.params().values();
  DenseHessian out;
  out.hessian = ad::finite_diff_jacobian([&](const Vector& pi) { return mean_grad(pi, theta); }, pi0, step);
  out.cross = ad::finite_diff_jacobian([&](const Vector& th) { return mean_grad(pi0, th); }, theta, step);
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    const Vector g = w(i) * first_order_estimate(mode, trajs[i], theta, q, beta, gamma);
    out.hessian += g * step_log_probs(q, beta, trajs[i], false).grad_sum.transpose();
    out.cross += g * transition_log_likelihood_grad(trajs[i], theta).transpose();
  }
  return out;
}

}  // namespace dfmdp
