// Plain multilayer perceptrons: ReLU hidden layers, linear output.
#pragma once

#include "dfmdp/autodiff.hpp"
#include "dfmdp/rng.hpp"
#include "dfmdp/types.hpp"

#include <string>
#include <vector>

namespace dfmdp {

struct MlpShape {
  int input = 0;
  std::vector<int> hidden;
  int output = 0;

  int layers() const { return static_cast<int>(hidden.size()) + 1; }
  int fan_in(int layer) const { return layer == 0 ? input : hidden[layer - 1]; }
  int fan_out(int layer) const { return layer == layers() - 1 ? output : hidden[layer]; }
  friend bool operator==(const MlpShape&, const MlpShape&) = default;
};

inline std::string weight_name(int layer) { return "W" + std::to_string(layer); }
inline std::string bias_name(int layer) { return "b" + std::to_string(layer); }

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases.
inline ad::ParamVector init_mlp(const MlpShape& shape, Rng& rng, double gain = 1.0) {
  ad::ParamVector p;
  for (int l = 0; l < shape.layers(); ++l) {
    const int in = shape.fan_in(l);
    const int out = shape.fan_out(l);
    const double bound = gain / std::sqrt(static_cast<double>(in));
    Matrix w(out, in);
    for (Eigen::Index j = 0; j < w.cols(); ++j)
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = uniform(rng, -bound, bound);
    Matrix b(out, 1);
    for (Eigen::Index i = 0; i < b.rows(); ++i) b(i, 0) = uniform(rng, -bound, bound);
    p.add_segment(weight_name(l), w);
    p.add_segment(bias_name(l), b);
  }
  return p;
}

inline ad::ParamVector zero_mlp(const MlpShape& shape) {
  ad::ParamVector p;
  for (int l = 0; l < shape.layers(); ++l) {
    p.add_segment(weight_name(l), Matrix::Zero(shape.fan_out(l), shape.fan_in(l)));
    p.add_segment(bias_name(l), Matrix::Zero(shape.fan_out(l), 1));
  }
  return p;
}

/// Forward pass on columns of X without recording.
inline Matrix mlp_forward(const MlpShape& shape, const ad::ParamVector& p, const Matrix& x) {
  Matrix h = x;
  for (int l = 0; l < shape.layers(); ++l) {
    const auto& ws = p.segment(weight_name(l));
    const auto& bs = p.segment(bias_name(l));
    Eigen::Map<const Matrix> w(p.values().data() + ws.offset, ws.rows, ws.cols);
    Eigen::Map<const Vector> b(p.values().data() + bs.offset, bs.rows);
    Matrix z = w * h;
    z.colwise() += b;
    if (l + 1 < shape.layers()) z = z.cwiseMax(0.0);
    h = std::move(z);
  }
  return h;
}

inline ad::Var mlp_record(const MlpShape& shape, ad::Tape& tape, const ad::Bound& bound, ad::Var x) {
  ad::Var h = x;
  for (int l = 0; l < shape.layers(); ++l) {
    h = tape.affine(bound[weight_name(l)], h, bound[bias_name(l)]);
    if (l + 1 < shape.layers()) h = tape.relu(h);
  }
  return h;
}

}  // namespace dfmdp
