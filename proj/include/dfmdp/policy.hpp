// Q-functions and the soft policies derived from them.
#pragma once

#include "dfmdp/autodiff.hpp"
#include "dfmdp/mlp.hpp"
#include "dfmdp/types.hpp"

#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace dfmdp {

enum class QKind { tabular, mlp };

/// Q(s, ·) as either a table (segment "Q", actions x states) or an MLP over
/// the state vector. A tabular state is a one-element vector holding the index.
class QFunction {
 public:
  QFunction() = default;

  static QFunction tabular(int num_states, int num_actions) {
    QFunction q;
    q.kind_ = QKind::tabular;
    q.num_states_ = num_states;
    q.num_actions_ = num_actions;
    q.params_.add_segment("Q", Matrix::Zero(num_actions, num_states));
    return q;
  }

  static QFunction tabular(const Matrix& table) {
    QFunction q;
    q.kind_ = QKind::tabular;
    q.num_states_ = static_cast<int>(table.cols());
    q.num_actions_ = static_cast<int>(table.rows());
    q.params_.add_segment("Q", table);
    return q;
  }

  static QFunction mlp(const MlpShape& shape, ad::ParamVector params) {
    QFunction q;
    q.kind_ = QKind::mlp;
    q.shape_ = shape;
    q.num_actions_ = shape.output;
    q.params_ = std::move(params);
    return q;
  }

  QKind kind() const { return kind_; }
  int num_actions() const { return num_actions_; }
  int num_states() const { return num_states_; }
  const MlpShape& shape() const { return shape_; }
  int input_dim() const { return kind_ == QKind::tabular ? num_states_ : shape_.input; }
  const ad::ParamVector& params() const { return params_; }
  ad::ParamVector& params() { return params_; }
  Eigen::Index size() const { return params_.size(); }

  QFunction with_values(const Vector& v) const {
    QFunction q = *this;
    q.params_.set_values(v);
    return q;
  }

  Matrix table() const {
    if (kind_ != QKind::tabular) throw std::logic_error("table() on a non-tabular Q-function");
    return params_.matrix("Q");
  }

  /// Encodes states as input columns (one-hot for tabular).
  Matrix encode(const std::vector<const std::vector<double>*>& states) const {
    const auto n = static_cast<Eigen::Index>(states.size());
    if (kind_ == QKind::tabular) {
      Matrix x = Matrix::Zero(num_states_, n);
      for (Eigen::Index j = 0; j < n; ++j) x(state_index(*states[j]), j) = 1.0;
      return x;
    }
    Matrix x(shape_.input, n);
    for (Eigen::Index j = 0; j < n; ++j) {
      const auto& s = *states[j];
      if (static_cast<int>(s.size()) != shape_.input)
        throw std::invalid_argument("state width " + std::to_string(s.size()) + " != network input " +
                                    std::to_string(shape_.input));
      for (int i = 0; i < shape_.input; ++i) x(i, j) = s[i];
    }
    return x;
  }
  Matrix encode(const std::vector<double>& state) const { return encode(std::vector{&state}); }

  /// Q-values, actions x columns, for encoded inputs.
  Matrix values(const Matrix& x) const {
    if (kind_ == QKind::tabular) return params_.matrix("Q") * x;
    return mlp_forward(shape_, params_, x);
  }
  Vector values(const std::vector<double>& state) const {
    if (kind_ == QKind::tabular) {
      const auto& s = params_.segment("Q");
      const int idx = state_index(state);
      return Eigen::Map<const Vector>(params_.values().data() + s.offset + idx * s.rows, s.rows);
    }
    return values(encode(state)).col(0);
  }

  /// Records Q-values for encoded input columns.
  ad::Var record(ad::Tape& tape, const ad::Bound& bound, ad::Var x) const {
    if (kind_ == QKind::tabular) return tape.affine(bound["Q"], x);
    return mlp_record(shape_, tape, bound, x);
  }

  int state_index(const std::vector<double>& s) const {
    if (s.size() != 1) throw std::invalid_argument("tabular state must hold a single index");
    const int idx = static_cast<int>(s[0]);
    if (idx < 0 || idx >= num_states_) throw std::out_of_range("tabular state index out of range");
    return idx;
  }

 private:
  QKind kind_ = QKind::tabular;
  int num_states_ = 0;
  int num_actions_ = 0;
  MlpShape shape_;
  ad::ParamVector params_;
};

/// Action distribution as a function of the state.
class Policy {
 public:
  virtual ~Policy() = default;
  virtual int num_actions() const = 0;
  virtual Vector probabilities(const std::vector<double>& state) const = 0;
};

class UniformPolicy final : public Policy {
 public:
  explicit UniformPolicy(int actions) : actions_(actions) {}
  int num_actions() const override { return actions_; }
  Vector probabilities(const std::vector<double>&) const override {
    return Vector::Constant(actions_, 1.0 / actions_);
  }

 private:
  int actions_;
};

/// π(a | s) = softmax(β · Q(s, ·)).
class SoftPolicy final : public Policy {
 public:
  SoftPolicy(QFunction q, double beta) : q_(std::move(q)), beta_(beta) {
    if (!(beta_ > 0.0)) throw std::invalid_argument("soft policy temperature must be positive");
  }
  int num_actions() const override { return q_.num_actions(); }
  Vector probabilities(const std::vector<double>& state) const override {
    return ad::softmax_columns(q_.values(state), beta_).col(0);
  }
  const QFunction& q() const { return q_; }
  double beta() const { return beta_; }

 private:
  QFunction q_;
  double beta_;
};

/// log π(a|s) and its gradient w.r.t. the Q-function parameters.
struct LogProb {
  double value = 0.0;
  Vector grad;
};

inline LogProb policy_log_prob(const QFunction& q, double beta, const std::vector<double>& state, int action) {
  if (action < 0 || action >= q.num_actions()) throw std::out_of_range("policy_log_prob: invalid action");
  ad::Tape tape;
  const auto bound = ad::bind(tape, q.params());
  const auto x = tape.constant(q.encode(state));
  const auto lp = tape.pick(tape.log_softmax(q.record(tape, bound, x), beta), {action});
  return {tape.scalar(lp), ad::gradient(tape, lp, bound)};
}

}  // namespace dfmdp
