// Reverse-mode gradient engine over a fixed set of primitives.
//
// Every node holds a dense column-major matrix of doubles; scalars are 1x1
// and vectors are n x 1. Column-wise primitives (softmax, log_softmax, pick)
// treat each column as one sample, which is how batches of states are fed
// through policies.
#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace dfmdp::ad {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

class ShapeError : public std::invalid_argument {
 public:
  ShapeError(const std::string& primitive, const std::string& what)
      : std::invalid_argument(primitive + ": " + what), primitive_(primitive) {}
  const std::string& primitive() const noexcept { return primitive_; }

 private:
  std::string primitive_;
};

class GradientError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Op {
  leaf,
  constant,
  affine,
  add,
  sub,
  scale,
  mul,
  div,
  square,
  exp,
  log,
  sigmoid,
  relu,
  clip,
  sum,
  softmax,
  log_softmax,
  pick,
  reshape,
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::leaf: return "leaf";
    case Op::constant: return "constant";
    case Op::affine: return "affine";
    case Op::add: return "add";
    case Op::sub: return "sub";
    case Op::scale: return "scale";
    case Op::mul: return "mul";
    case Op::div: return "div";
    case Op::square: return "square";
    case Op::exp: return "exp";
    case Op::log: return "log";
    case Op::sigmoid: return "sigmoid";
    case Op::relu: return "relu";
    case Op::clip: return "clip";
    case Op::sum: return "sum";
    case Op::softmax: return "softmax";
    case Op::log_softmax: return "log_softmax";
    case Op::pick: return "pick";
    case Op::reshape: return "reshape";
  }
  return "?";
}

/// Handle to a node on a tape.
struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
};

/// Column-wise softmax of beta * x with max subtraction.
inline Matrix softmax_columns(const Matrix& x, double beta) {
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const Vector z = beta * x.col(j);
    const double m = z.maxCoeff();
    const Vector e = (z.array() - m).exp().matrix();
    out.col(j) = e / e.sum();
  }
  return out;
}

inline Matrix log_softmax_columns(const Matrix& x, double beta) {
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const Vector z = beta * x.col(j);
    const double m = z.maxCoeff();
    const double lse = m + std::log((z.array() - m).exp().sum());
    out.col(j) = (z.array() - lse).matrix();
  }
  return out;
}

/// Append-only record of primitive applications.
///
/// Nodes reference only earlier nodes, so a reverse sweep over ids is a valid
/// topological order. A tape is not thread-safe; distinct tapes are
/// independent.
class Tape {
 public:
  Tape() = default;

  std::size_t size() const { return nodes_.size(); }
  const Matrix& value(Var v) const { return node(v).value; }
  double scalar(Var v) const {
    const auto& m = value(v);
    if (m.size() != 1) throw ShapeError("scalar", "node is not 1x1");
    return m(0, 0);
  }
  Op op(Var v) const { return node(v).op; }

  Var leaf(Matrix v) { return push(Op::leaf, {}, std::move(v)); }
  Var constant(Matrix v) { return push(Op::constant, {}, std::move(v)); }
  Var scalar_constant(double c) { return constant(Matrix::Constant(1, 1, c)); }

  /// W x (+ b). b is either m x 1 (broadcast over columns) or m x q.
  Var affine(Var w, Var x) {
    const auto& W = value(w);
    const auto& X = value(x);
    if (W.cols() != X.rows())
      throw ShapeError("affine", dims("W", W) + " incompatible with " + dims("x", X));
    return push(Op::affine, {w.id, x.id}, W * X);
  }
  Var affine(Var w, Var x, Var b) {
    const auto& W = value(w);
    const auto& X = value(x);
    const auto& B = value(b);
    if (W.cols() != X.rows())
      throw ShapeError("affine", dims("W", W) + " incompatible with " + dims("x", X));
    if (B.rows() != W.rows() || (B.cols() != 1 && B.cols() != X.cols()))
      throw ShapeError("affine", dims("b", B) + " incompatible with output rows " +
                                     std::to_string(W.rows()));
    Matrix out = W * X;
    if (B.cols() == 1)
      out.colwise() += B.col(0);
    else
      out += B;
    return push(Op::affine, {w.id, x.id, b.id}, std::move(out));
  }

  Var add(Var a, Var b) {
    same_shape("add", a, b);
    return push(Op::add, {a.id, b.id}, value(a) + value(b));
  }
  Var sub(Var a, Var b) {
    same_shape("sub", a, b);
    return push(Op::sub, {a.id, b.id}, value(a) - value(b));
  }
  Var scale(Var a, double c) {
    auto id = push(Op::scale, {a.id}, c * value(a));
    nodes_[id.id].p0 = c;
    return id;
  }
  Var mul(Var a, Var b) {
    same_shape("mul", a, b);
    return push(Op::mul, {a.id, b.id}, value(a).cwiseProduct(value(b)));
  }
  Var div(Var a, Var b) {
    same_shape("div", a, b);
    return push(Op::div, {a.id, b.id}, value(a).cwiseQuotient(value(b)));
  }
  Var square(Var a) { return push(Op::square, {a.id}, value(a).array().square().matrix()); }
  Var exp(Var a) { return push(Op::exp, {a.id}, value(a).array().exp().matrix()); }
  Var log(Var a) { return push(Op::log, {a.id}, value(a).array().log().matrix()); }
  Var sigmoid(Var a) {
    Matrix out = value(a).unaryExpr([](double z) {
      return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
    });
    return push(Op::sigmoid, {a.id}, std::move(out));
  }
  Var relu(Var a) { return push(Op::relu, {a.id}, value(a).cwiseMax(0.0)); }
  /// Clamp into [lo, hi]; the gradient is zero where the input lies outside.
  Var clip(Var a, double lo, double hi) {
    if (!(lo <= hi)) throw ShapeError("clip", "lower bound exceeds upper bound");
    auto id = push(Op::clip, {a.id}, value(a).cwiseMax(lo).cwiseMin(hi));
    nodes_[id.id].p0 = lo;
    nodes_[id.id].p1 = hi;
    return id;
  }
  Var sum(Var a) { return push(Op::sum, {a.id}, Matrix::Constant(1, 1, value(a).sum())); }

  Var softmax(Var a, double beta) {
    auto id = push(Op::softmax, {a.id}, softmax_columns(value(a), beta));
    nodes_[id.id].p0 = beta;
    return id;
  }
  Var log_softmax(Var a, double beta) {
    auto id = push(Op::log_softmax, {a.id}, log_softmax_columns(value(a), beta));
    nodes_[id.id].p0 = beta;
    return id;
  }

  /// Gathers x(index[j], j) for every column j into a q x 1 vector.
  Var pick(Var a, std::vector<int> index) {
    const auto& X = value(a);
    if (static_cast<Eigen::Index>(index.size()) != X.cols())
      throw ShapeError("pick", "index count " + std::to_string(index.size()) +
                                   " != columns " + std::to_string(X.cols()));
    Matrix out(X.cols(), 1);
    for (Eigen::Index j = 0; j < X.cols(); ++j) {
      const int r = index[j];
      if (r < 0 || r >= X.rows()) throw ShapeError("pick", "row index out of range");
      out(j, 0) = X(r, j);
    }
    auto id = push(Op::pick, {a.id}, std::move(out));
    nodes_[id.id].index = std::move(index);
    return id;
  }

  /// Column-major reinterpretation.
  Var reshape(Var a, Eigen::Index rows, Eigen::Index cols) {
    const auto& X = value(a);
    if (rows * cols != X.size())
      throw ShapeError("reshape", "cannot view " + dims("x", X) + " as " +
                                      std::to_string(rows) + "x" + std::to_string(cols));
    Matrix out = Eigen::Map<const Matrix>(X.data(), rows, cols);
    return push(Op::reshape, {a.id}, std::move(out));
  }

  /// Reverse sweep from `out`. With no seed the output must be scalar and is
  /// seeded with 1. Returns one adjoint per node; untouched nodes are empty.
  std::vector<Matrix> backward(Var out, const Matrix* seed = nullptr) const {
    const auto& ov = value(out);
    std::vector<Matrix> adj(nodes_.size());
    if (seed == nullptr) {
      if (ov.size() != 1) throw GradientError("backward: output node is not scalar");
      adj[out.id] = Matrix::Ones(1, 1);
    } else {
      if (seed->rows() != ov.rows() || seed->cols() != ov.cols())
        throw ShapeError("backward", "seed shape differs from output");
      adj[out.id] = *seed;
    }
    for (std::size_t i = out.id + 1; i-- > 0;) {
      if (adj[i].size() == 0) continue;
      propagate(i, adj);
    }
    return adj;
  }

 private:
  struct Node {
    Op op;
    std::vector<std::size_t> in;
    Matrix value;
    double p0 = 0.0;
    double p1 = 0.0;
    std::vector<int> index;
  };

  const Node& node(Var v) const {
    if (v.id >= nodes_.size()) throw std::out_of_range("tape: invalid node reference");
    return nodes_[v.id];
  }

  Var push(Op op, std::vector<std::size_t> in, Matrix value) {
    nodes_.push_back(Node{op, std::move(in), std::move(value), 0.0, 0.0, {}});
    return Var{nodes_.size() - 1};
  }

  static std::string dims(const char* name, const Matrix& m) {
    return std::string(name) + "[" + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + "]";
  }

  void same_shape(const char* prim, Var a, Var b) const {
    const auto& A = value(a);
    const auto& B = value(b);
    if (A.rows() != B.rows() || A.cols() != B.cols())
      throw ShapeError(prim, dims("a", A) + " vs " + dims("b", B));
  }

  // Constants never need adjoints, so their (often large) products are skipped.
  bool wants(std::size_t id) const { return nodes_[id].op != Op::constant; }

  static void accumulate(std::vector<Matrix>& adj, std::size_t id, const Matrix& g) {
    if (adj[id].size() == 0)
      adj[id] = g;
    else
      adj[id] += g;
  }

  void propagate(std::size_t i, std::vector<Matrix>& adj) const {
    const Node& n = nodes_[i];
    const Matrix& G = adj[i];
    switch (n.op) {
      case Op::leaf:
      case Op::constant:
        return;
      case Op::affine: {
        const Matrix& W = nodes_[n.in[0]].value;
        const Matrix& X = nodes_[n.in[1]].value;
        if (wants(n.in[0])) accumulate(adj, n.in[0], G * X.transpose());
        if (wants(n.in[1])) accumulate(adj, n.in[1], W.transpose() * G);
        if (n.in.size() == 3) {
          const Matrix& B = nodes_[n.in[2]].value;
          if (B.cols() == 1)
            accumulate(adj, n.in[2], G.rowwise().sum());
          else
            accumulate(adj, n.in[2], G);
        }
        return;
      }
      case Op::add:
        accumulate(adj, n.in[0], G);
        accumulate(adj, n.in[1], G);
        return;
      case Op::sub:
        accumulate(adj, n.in[0], G);
        accumulate(adj, n.in[1], -G);
        return;
      case Op::scale:
        accumulate(adj, n.in[0], n.p0 * G);
        return;
      case Op::mul:
        if (wants(n.in[0])) accumulate(adj, n.in[0], G.cwiseProduct(nodes_[n.in[1]].value));
        if (wants(n.in[1])) accumulate(adj, n.in[1], G.cwiseProduct(nodes_[n.in[0]].value));
        return;
      case Op::div: {
        const Matrix& A = nodes_[n.in[0]].value;
        const Matrix& B = nodes_[n.in[1]].value;
        if (wants(n.in[0])) accumulate(adj, n.in[0], G.cwiseQuotient(B));
        if (wants(n.in[1])) accumulate(adj, n.in[1], -G.cwiseProduct(A).cwiseQuotient(B.cwiseProduct(B)));
        return;
      }
      case Op::square:
        accumulate(adj, n.in[0], 2.0 * G.cwiseProduct(nodes_[n.in[0]].value));
        return;
      case Op::exp:
        accumulate(adj, n.in[0], G.cwiseProduct(n.value));
        return;
      case Op::log:
        accumulate(adj, n.in[0], G.cwiseQuotient(nodes_[n.in[0]].value));
        return;
      case Op::sigmoid:
        accumulate(adj, n.in[0],
                   G.cwiseProduct(n.value.cwiseProduct((1.0 - n.value.array()).matrix())));
        return;
      case Op::relu: {
        const Matrix& X = nodes_[n.in[0]].value;
        accumulate(adj, n.in[0], G.cwiseProduct((X.array() > 0.0).cast<double>().matrix()));
        return;
      }
      case Op::clip: {
        const Matrix& X = nodes_[n.in[0]].value;
        const Matrix mask =
            ((X.array() >= n.p0) && (X.array() <= n.p1)).cast<double>().matrix();
        accumulate(adj, n.in[0], G.cwiseProduct(mask));
        return;
      }
      case Op::sum: {
        const Matrix& X = nodes_[n.in[0]].value;
        accumulate(adj, n.in[0], Matrix::Constant(X.rows(), X.cols(), G(0, 0)));
        return;
      }
      case Op::softmax: {
        // d/dx_j of p = beta * (p ∘ (g - <g, p>)) per column.
        const Matrix& P = n.value;
        Matrix out(P.rows(), P.cols());
        for (Eigen::Index j = 0; j < P.cols(); ++j) {
          const double inner = G.col(j).dot(P.col(j));
          out.col(j) = n.p0 * P.col(j).cwiseProduct((G.col(j).array() - inner).matrix());
        }
        accumulate(adj, n.in[0], out);
        return;
      }
      case Op::log_softmax: {
        const Matrix P = n.value.array().exp().matrix();
        Matrix out(P.rows(), P.cols());
        for (Eigen::Index j = 0; j < P.cols(); ++j) {
          const double total = G.col(j).sum();
          out.col(j) = n.p0 * (G.col(j) - total * P.col(j));
        }
        accumulate(adj, n.in[0], out);
        return;
      }
      case Op::pick: {
        const Matrix& X = nodes_[n.in[0]].value;
        Matrix out = Matrix::Zero(X.rows(), X.cols());
        for (Eigen::Index j = 0; j < X.cols(); ++j) out(n.index[j], j) = G(j, 0);
        accumulate(adj, n.in[0], out);
        return;
      }
      case Op::reshape: {
        const Matrix& X = nodes_[n.in[0]].value;
        Matrix out = Eigen::Map<const Matrix>(G.data(), X.rows(), X.cols());
        accumulate(adj, n.in[0], out);
        return;
      }
    }
  }

  std::vector<Node> nodes_;
};

/// Flat parameter array with named, contiguous matrix segments.
class ParamVector {
 public:
  struct Segment {
    std::string name;
    Eigen::Index rows = 0;
    Eigen::Index cols = 0;
    Eigen::Index offset = 0;
    Eigen::Index size() const { return rows * cols; }
  };

  ParamVector() = default;

  /// Appends a segment; values are taken column-major.
  void add_segment(const std::string& name, const Matrix& value) {
    if (index_.count(name)) throw std::invalid_argument("duplicate segment " + name);
    Segment s{name, value.rows(), value.cols(), values_.size()};
    Vector grown(values_.size() + s.size());
    grown.head(values_.size()) = values_;
    grown.tail(s.size()) = Eigen::Map<const Vector>(value.data(), s.size());
    values_ = std::move(grown);
    index_[name] = segments_.size();
    segments_.push_back(std::move(s));
  }

  Eigen::Index size() const { return values_.size(); }
  const std::vector<Segment>& segments() const { return segments_; }
  const Vector& values() const { return values_; }
  Vector& values() { return values_; }

  void set_values(const Vector& v) {
    if (v.size() != values_.size()) throw std::invalid_argument("set_values: size mismatch");
    values_ = v;
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }
  const Segment& segment(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no segment " + name);
    return segments_[it->second];
  }

  Matrix matrix(const Segment& s) const {
    return Eigen::Map<const Matrix>(values_.data() + s.offset, s.rows, s.cols);
  }
  Matrix matrix(const std::string& name) const { return matrix(segment(name)); }

  /// Same layout, new values.
  ParamVector with_values(const Vector& v) const {
    ParamVector out = *this;
    out.set_values(v);
    return out;
  }

  bool same_layout(const ParamVector& other) const {
    if (segments_.size() != other.segments_.size()) return false;
    for (std::size_t i = 0; i < segments_.size(); ++i) {
      const auto& a = segments_[i];
      const auto& b = other.segments_[i];
      if (a.name != b.name || a.rows != b.rows || a.cols != b.cols) return false;
    }
    return true;
  }

 private:
  Vector values_;
  std::vector<Segment> segments_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Leaves created for one ParamVector on a tape, in segment order.
struct Bound {
  const ParamVector* params = nullptr;
  std::vector<Var> leaves;

  Var operator[](const std::string& name) const {
    const auto& segs = params->segments();
    for (std::size_t i = 0; i < segs.size(); ++i)
      if (segs[i].name == name) return leaves[i];
    throw std::out_of_range("no bound segment " + name);
  }
};

inline Bound bind(Tape& tape, const ParamVector& params) {
  Bound b{&params, {}};
  b.leaves.reserve(params.segments().size());
  for (const auto& s : params.segments()) b.leaves.push_back(tape.leaf(params.matrix(s)));
  return b;
}

/// Flattens the adjoints of bound leaves into the ParamVector layout.
/// Leaves the output never touched contribute zeros.
inline Vector collect(const std::vector<Matrix>& adj, const Bound& bound) {
  Vector g = Vector::Zero(bound.params->size());
  const auto& segs = bound.params->segments();
  for (std::size_t i = 0; i < segs.size(); ++i) {
    const Matrix& a = adj[bound.leaves[i].id];
    if (a.size() == 0) continue;
    g.segment(segs[i].offset, segs[i].size()) = Eigen::Map<const Vector>(a.data(), a.size());
  }
  return g;
}

/// Gradient of a scalar node w.r.t. one bound ParamVector.
inline Vector gradient(const Tape& tape, Var out, const Bound& bound) {
  return collect(tape.backward(out), bound);
}

/// Gradient keyed by segment name.
inline std::unordered_map<std::string, Matrix> backward_grad(const Tape& tape, Var out,
                                                             const std::vector<Bound>& inputs) {
  const auto adj = tape.backward(out);
  std::unordered_map<std::string, Matrix> result;
  for (const auto& b : inputs) {
    const auto& segs = b.params->segments();
    for (std::size_t i = 0; i < segs.size(); ++i) {
      const Matrix& a = adj[b.leaves[i].id];
      result[segs[i].name] = a.size() == 0 ? Matrix::Zero(segs[i].rows, segs[i].cols) : a;
    }
  }
  return result;
}

/// A program records itself on a tape given bound inputs and returns its output node.
using Program = std::function<Var(Tape&, const std::vector<Bound>&)>;

struct Recording {
  Tape tape;
  std::vector<Bound> inputs;
  Var output;
  const Matrix& value() const { return tape.value(output); }
};

inline Recording record_and_eval(const Program& program, const std::vector<const ParamVector*>& inputs) {
  Recording rec;
  rec.inputs.reserve(inputs.size());
  for (const auto* p : inputs) rec.inputs.push_back(bind(rec.tape, *p));
  rec.output = program(rec.tape, rec.inputs);
  return rec;
}

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h.
template <class F>
Vector finite_diff_grad(F&& f, const Vector& x, double step) {
  if (!(step > 0.0)) throw std::invalid_argument("finite_diff_grad: step must be positive");
  Vector g(x.size());
  Vector probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + step;
    const double up = f(static_cast<const Vector&>(probe));
    probe[i] = x[i] - step;
    const double down = f(static_cast<const Vector&>(probe));
    probe[i] = x[i];
    if (!std::isfinite(up) || !std::isfinite(down))
      throw GradientError("finite_diff_grad: non-finite value at coordinate " + std::to_string(i));
    g[i] = (up - down) / (2.0 * step);
  }
  return g;
}

/// Central-difference Jacobian of a vector-valued map; column i is d f / d x_i.
template <class F>
Matrix finite_diff_jacobian(F&& f, const Vector& x, double step) {
  if (!(step > 0.0)) throw std::invalid_argument("finite_diff_jacobian: step must be positive");
  Vector probe = x;
  Matrix jac;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + step;
    const Vector up = f(static_cast<const Vector&>(probe));
    probe[i] = x[i] - step;
    const Vector down = f(static_cast<const Vector&>(probe));
    probe[i] = x[i];
    if (i == 0) jac.resize(up.size(), x.size());
    if (!up.allFinite() || !down.allFinite())
      throw GradientError("finite_diff_jacobian: non-finite value at coordinate " + std::to_string(i));
    jac.col(i) = (up - down) / (2.0 * step);
  }
  return jac;
}

/// Max elementwise |a - b| / max(|b|, floor).
inline double relative_error(const Vector& a, const Vector& b, double floor = 1e-8) {
  if (a.size() != b.size()) throw std::invalid_argument("relative_error: size mismatch");
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(a[i] - b[i]) / std::max(std::abs(b[i]), floor));
  return worst;
}

/// ‖a − b‖∞ / max(‖b‖∞, floor): scale-aware error for whole arrays.
inline double relative_error_inf(const Eigen::Ref<const Matrix>& a, const Eigen::Ref<const Matrix>& b,
                                 double floor = 1e-12) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument("relative_error_inf: shape mismatch");
  const double scale = std::max(b.cwiseAbs().maxCoeff(), floor);
  return (a - b).cwiseAbs().maxCoeff() / scale;
}

}  // namespace dfmdp::ad
