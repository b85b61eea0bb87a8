// The feature -> parameter model m_w, applied row-wise to entity features.
#pragma once

#include "dfmdp/autodiff.hpp"
#include "dfmdp/features.hpp"
#include "dfmdp/mlp.hpp"
#include "dfmdp/types.hpp"

#include <stdexcept>
#include <string>

namespace dfmdp {

enum class Head {
  linear,    // unbounded rewards
  sigmoid,   // one probability per entity
  tb_pairs,  // 8 sigmoids per patient, normalized within each (state, action) pair
};

inline std::string to_string(Head h) {
  switch (h) {
    case Head::linear: return "linear";
    case Head::sigmoid: return "sigmoid";
    case Head::tb_pairs: return "tb_pairs";
  }
  return "?";
}

inline Head parse_head(const std::string& s) {
  if (s == "linear") return Head::linear;
  if (s == "sigmoid") return Head::sigmoid;
  if (s == "tb_pairs") return Head::tb_pairs;
  throw std::invalid_argument("unknown head '" + s + "'");
}

inline Head head_for(Domain d) {
  switch (d) {
    case Domain::gridworld: return Head::linear;
    case Domain::snare: return Head::sigmoid;
    case Domain::tb: return Head::tb_pairs;
  }
  return Head::linear;
}

struct PredictiveModel {
  Domain domain = Domain::gridworld;
  Head head = Head::linear;
  MlpShape shape;
  ad::ParamVector weights;
};

inline PredictiveModel make_predictive_model(Domain domain, std::uint64_t seed, int hidden = 16) {
  PredictiveModel m;
  m.domain = domain;
  m.head = head_for(domain);
  m.shape = MlpShape{kFeatureDim, {hidden}, domain == Domain::tb ? 8 : 1};
  Rng rng = make_rng(seed, streams::model_init);
  m.weights = init_mlp(m.shape, rng);
  return m;
}

/// θ = m_w(x) recorded on a tape, flattened entity-major as an n x 1 node.
struct PredictionTape {
  ad::Tape tape;
  ad::Bound weights;
  ad::Var theta;

  Vector value() const { return tape.value(theta).col(0); }

  /// Vector-Jacobian product g_θᵀ dθ/dw, never forming the Jacobian.
  Vector vjp(const Vector& g_theta) const {
    const Matrix seed = g_theta;
    return ad::collect(tape.backward(theta, &seed), weights);
  }
};

namespace detail {
inline Matrix pair_sum_matrix() {
  Matrix p = Matrix::Zero(8, 8);
  for (int k = 0; k < 4; ++k) p.block(2 * k, 2 * k, 2, 2).setOnes();
  return p;
}
}  // namespace detail

/// Records the head on an existing tape; `x` holds features as columns.
inline ad::Var record_head(const PredictiveModel& model, ad::Tape& tape, const ad::Bound& w, ad::Var x) {
  ad::Var out = mlp_record(model.shape, tape, w, x);
  switch (model.head) {
    case Head::linear:
      break;
    case Head::sigmoid:
      out = tape.sigmoid(out);
      break;
    case Head::tb_pairs: {
      const auto s = tape.sigmoid(out);
      const auto sums = tape.affine(tape.constant(detail::pair_sum_matrix()), s);
      out = tape.div(s, sums);
      break;
    }
  }
  const auto& v = tape.value(out);
  return tape.reshape(out, v.size(), 1);
}

inline void check_model(const PredictiveModel& model, const Matrix& features) {
  if (features.cols() != model.shape.input)
    throw std::invalid_argument("predict_params: feature width " + std::to_string(features.cols()) +
                                " != " + std::to_string(model.shape.input));
  if (!model.weights.values().allFinite()) throw std::invalid_argument("predict_params: non-finite weights");
}

inline PredictionTape record_prediction(const PredictiveModel& model, const Matrix& features) {
  check_model(model, features);
  PredictionTape rec;
  rec.weights = ad::bind(rec.tape, model.weights);
  const auto x = rec.tape.constant(features.transpose());
  rec.theta = record_head(model, rec.tape, rec.weights, x);
  return rec;
}

inline Vector predict_params(const PredictiveModel& model, const Matrix& features) {
  return record_prediction(model, features).value();
}

}  // namespace dfmdp
