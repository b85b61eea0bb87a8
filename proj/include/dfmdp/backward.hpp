// Decision-focused backward pass: dEval/dθ = −(dEval/dπ) (∇²π J)⁻¹ ∇²θπ J,
// then back through the predictive model.
#pragma once

#include "dfmdp/hessian.hpp"
#include "dfmdp/ope.hpp"
#include "dfmdp/predictive_model.hpp"
#include "dfmdp/traj_stats.hpp"

#include <Eigen/Dense>

#include <stdexcept>
#include <string>
#include <vector>

namespace dfmdp {

enum class Strategy { identity, woodbury, full };

inline std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::identity: return "identity";
    case Strategy::woodbury: return "woodbury";
    case Strategy::full: return "full";
  }
  return "?";
}

inline Strategy parse_strategy(const std::string& s) {
  if (s == "identity" || s == "id") return Strategy::identity;
  if (s == "woodbury" || s == "w") return Strategy::woodbury;
  if (s == "full") return Strategy::full;
  throw std::invalid_argument("unknown Hessian strategy '" + s + "'");
}

struct BackwardConfig {
  Mode mode = Mode::bellman;
  Strategy strategy = Strategy::woodbury;
  double c_magnitude = 1.0;
  bool delta_terms = false;
  double gamma = 0.95;
  bool transitions_depend_on_theta = false;
  double fd_step = 1e-5;
};

struct BackwardResult {
  Vector y;        // H⁻ᵀ g_π
  Vector g_theta;  // dEval/dθ
  bool ridged = false;
};

/// Per-trajectory statistics of either mode.
struct DerivativeBundle {
  Mode mode = Mode::bellman;
  std::vector<PgTrajStats> pg;
  std::vector<BellmanTrajStats> bellman;
};

inline DerivativeBundle collect_stats(const BackwardConfig& cfg, const std::vector<Trajectory>& samples,
                                      const Vector& theta, const QFunction& q, double beta) {
  if (samples.empty()) throw std::invalid_argument("backward pass needs at least one sampled trajectory");
  const StatsOptions opt{cfg.gamma, cfg.transitions_depend_on_theta};
  DerivativeBundle b;
  b.mode = cfg.mode;
  for (const auto& tr : samples) {
    if (cfg.mode == Mode::pg)
      b.pg.push_back(pg_stats(tr, theta, q, beta, opt));
    else
      b.bellman.push_back(bellman_stats(tr, theta, q, beta, opt));
  }
  return b;
}

/// yᵀ ∇²θπ J from a bundle.
inline Vector cross_vjp(const DerivativeBundle& b, const Vector& y, Eigen::Index d, const BackwardConfig& cfg) {
  return b.mode == Mode::pg ? cross_vjp(b.pg, y, d, cfg.gamma) : cross_vjp(b.bellman, y, d, cfg.delta_terms);
}

/// g_θ = −(H⁻ᵀ g_π)ᵀ C for a dense Hessian H (n x n) and cross block C (n x d).
inline BackwardResult dense_theta_gradient(const Matrix& hessian, const Matrix& cross, const Vector& g_pi) {
  BackwardResult out;
  Eigen::FullPivLU<Matrix> lu(hessian.transpose());
  if (!lu.isInvertible()) {
    Matrix ridged = hessian.transpose();
    ridged.diagonal().array() += 1e-6;
    lu.compute(ridged);
    if (!lu.isInvertible()) throw HessianError("dense Hessian is singular even after ridge");
    out.ridged = true;
  }
  out.y = lu.solve(g_pi);
  out.g_theta = -cross.transpose() * out.y;
  return out;
}

/// dEval/dθ for fresh samples drawn under (θ, π*). The non-symmetric
/// pg-mode estimate is solved through its transpose since Eval's gradient
/// enters as a row vector.
inline BackwardResult theta_gradient(const BackwardConfig& cfg, const Vector& g_pi,
                                     const std::vector<Trajectory>& samples, const Vector& theta,
                                     const QFunction& q, double beta) {
  if (g_pi.size() != q.size()) throw std::invalid_argument("theta_gradient: dEval/dπ has the wrong length");
  const Eigen::Index d = theta.size();
  if (cfg.strategy == Strategy::full) {
    const auto h = full_hessian_sampled(cfg.mode, samples, theta, q, beta, cfg.gamma, cfg.fd_step);
    return dense_theta_gradient(h.hessian, h.cross, g_pi);
  }
  const auto bundle = collect_stats(cfg, samples, theta, q, beta);
  BackwardResult out;
  if (cfg.strategy == Strategy::identity) {
    out.y = identity_solve(cfg.mode, cfg.c_magnitude, g_pi);
  } else {
    const auto h = cfg.mode == Mode::pg ? build_lowrank(bundle.pg, cfg.c_magnitude)
                                        : build_lowrank(bundle.bellman, cfg.c_magnitude);
    auto solved = woodbury_solve(h.transposed(), g_pi);
    out.y = std::move(solved.y);
    out.ridged = solved.ridged;
  }
  out.g_theta = -cross_vjp(bundle, out.y, d, cfg);
  return out;
}

/// Δw_eval = g_θᵀ dθ/dw via the prediction tape.
inline Vector assemble_dw(const PredictionTape& prediction, const Vector& g_theta) {
  if (g_theta.size() != prediction.value().size())
    throw std::invalid_argument("assemble_dw: θ gradient length mismatch");
  return prediction.vjp(g_theta);
}

}  // namespace dfmdp
