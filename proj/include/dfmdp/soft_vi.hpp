// Soft tabular value iteration.
#pragma once

#include "dfmdp/autodiff.hpp"
#include "dfmdp/policy.hpp"
#include "dfmdp/tabular_mdp.hpp"

#include <cmath>
#include <deque>
#include <stdexcept>
#include <string>
#include <vector>

namespace dfmdp {

class SolverError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// How V(s′) is formed from Q(s′, ·) in the backup.
enum class Backup {
  expected,     // Σ_a softmax(β Q)_a Q_a
  log_sum_exp,  // (1/β) log Σ_a exp(β Q_a)
};

inline double soft_state_value(const Eigen::Ref<const Vector>& q, double beta, Backup backup) {
  const double m = q.maxCoeff();
  const Vector e = (beta * (q.array() - m)).exp().matrix();
  const double z = e.sum();
  if (backup == Backup::log_sum_exp) return m + std::log(z) / beta;
  return e.dot(q) / z;
}

struct SolveResult {
  QFunction q;
  double beta = 1.0;
  int iterations = 0;
  double residual = 0.0;
  std::vector<double> residual_tail;  // last residuals, oldest first

  SoftPolicy policy() const { return SoftPolicy(q, beta); }
};

/// Iterates Q(s,a) ← R(s,a) + γ Σ_{s′} P(s′|s,a) V(s′) from `init` (zeros by
/// default). Stops early only when an iterate repeats exactly.
inline SolveResult soft_value_iteration(const TabularMdp& mdp, const Vector& theta, double beta, int iterations,
                                        Backup backup = Backup::expected, const Matrix* init = nullptr,
                                        std::size_t tail = 100) {
  if (!(beta > 0.0)) throw std::invalid_argument("soft_value_iteration: beta must be positive");
  if (!theta.allFinite()) throw std::invalid_argument("soft_value_iteration: non-finite parameters");
  mdp.validate();
  const int S = mdp.num_states;
  const int A = mdp.num_actions;

  Matrix reward(A, S);
  std::vector<std::vector<TabularMdp::Outcome>> moves(static_cast<std::size_t>(S * A));
  for (int s = 0; s < S; ++s)
    for (int a = 0; a < A; ++a) {
      reward(a, s) = mdp.reward(s, a, theta);
      moves[mdp.index(s, a)] = mdp.outcomes(s, a, theta);
    }

  Matrix q = init ? *init : Matrix::Zero(A, S);
  if (q.rows() != A || q.cols() != S) throw std::invalid_argument("soft_value_iteration: bad initial table");
  Matrix next(A, S);
  Vector v(S);
  std::deque<double> residuals;
  SolveResult out;
  int it = 0;
  for (; it < iterations; ++it) {
    for (int s = 0; s < S; ++s) v[s] = soft_state_value(q.col(s), beta, backup);
    for (int s = 0; s < S; ++s)
      for (int a = 0; a < A; ++a) {
        double ev = 0.0;
        for (const auto& o : moves[mdp.index(s, a)]) ev += o.prob * v[o.next];
        next(a, s) = reward(a, s) + mdp.gamma * ev;
      }
    const double res = (next - q).cwiseAbs().maxCoeff();
    if (!std::isfinite(res)) throw SolverError("soft_value_iteration: divergent iterate at " + std::to_string(it));
    q.swap(next);
    residuals.push_back(res);
    if (residuals.size() > tail) residuals.pop_front();
    out.residual = res;
    if (res == 0.0) {
      ++it;
      break;
    }
  }
  out.q = QFunction::tabular(q);
  out.beta = beta;
  out.iterations = it;
  out.residual_tail.assign(residuals.begin(), residuals.end());
  return out;
}

}  // namespace dfmdp
