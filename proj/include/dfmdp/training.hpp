// Two-stage and decision-focused trainers, and split-wise evaluation.
#pragma once

#include "dfmdp/backward.hpp"
#include "dfmdp/ope.hpp"
#include "dfmdp/predictive_model.hpp"
#include "dfmdp/rng.hpp"
#include "dfmdp/simulate.hpp"
#include "dfmdp/solver.hpp"
#include "dfmdp/stats.hpp"
#include "dfmdp/types.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace dfmdp {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Method { ts, pg_id, pg_w, bellman_id, bellman_w, pg_full, bellman_full };

inline const std::vector<Method>& all_methods() {
  static const std::vector<Method> m{Method::ts,        Method::pg_id,   Method::bellman_id, Method::pg_w,
                                     Method::bellman_w, Method::pg_full, Method::bellman_full};
  return m;
}

inline std::string to_string(Method m) {
  switch (m) {
    case Method::ts: return "ts";
    case Method::pg_id: return "pg-id";
    case Method::pg_w: return "pg-w";
    case Method::bellman_id: return "bellman-id";
    case Method::bellman_w: return "bellman-w";
    case Method::pg_full: return "pg-full";
    case Method::bellman_full: return "bellman-full";
  }
  return "?";
}

inline Method parse_method(const std::string& s) {
  for (Method m : all_methods())
    if (to_string(m) == s) return m;
  throw std::invalid_argument("unknown method '" + s + "'");
}

inline bool is_decision_focused(Method m) { return m != Method::ts; }

inline Mode method_mode(Method m) {
  return m == Method::pg_id || m == Method::pg_w || m == Method::pg_full ? Mode::pg : Mode::bellman;
}

inline Strategy method_strategy(Method m) {
  switch (m) {
    case Method::pg_id:
    case Method::bellman_id: return Strategy::identity;
    case Method::pg_full:
    case Method::bellman_full: return Strategy::full;
    default: return Strategy::woodbury;
  }
}

enum class Selection { best_val, last };

inline std::string to_string(Selection s) { return s == Selection::best_val ? "best_val" : "last"; }
inline Selection parse_selection(const std::string& s) {
  if (s == "best_val") return Selection::best_val;
  if (s == "last") return Selection::last;
  throw std::invalid_argument("unknown selection rule '" + s + "'");
}

struct TrainConfig {
  Method method = Method::ts;
  int epochs = 100;
  double lr = 0.01;            // α
  double reg = 0.1;            // λ on the predictive loss
  double lambda_ess = 1.0;     // λ_ESS inside Eval
  int samples = 100;           // k trajectories per backward pass
  double c_magnitude = 1.0;
  bool delta_terms = false;
  std::uint64_t seed = 0;
  Selection selection = Selection::best_val;
  int hidden = 16;
  int eval_every = 1;          // epochs between validation evaluations
  double nll_clip = 1e-6;
  int max_consecutive_failures = 3;
  SolverConfig solver;
  std::ostream* progress = nullptr;

  void validate() const {
    if (!(lr >= 0.0)) throw std::invalid_argument("learning rate must be non-negative");
    if (!(reg >= 0.0)) throw std::invalid_argument("regularization λ must be non-negative");
    if (epochs < 1) throw std::invalid_argument("epochs must be at least 1");
    if (samples < 1) throw std::invalid_argument("derivative sample count must be at least 1");
    if (eval_every < 1) throw std::invalid_argument("eval_every must be at least 1");
    if (c_magnitude == 0.0) throw std::invalid_argument("|c| must be non-zero");
  }
};

/// Config with the domain's forward solver.
inline TrainConfig default_train_config(Domain domain, const EnvConfig& env = {}) {
  TrainConfig c;
  c.solver = forward_solver(domain, env);
  return c;
}

// ---------------------------------------------------------------------------
// Predictive loss

/// Sufficient statistics of a trajectory set for the predictive loss.
struct LossCounts {
  Vector a, b;   // gridworld: visit counts and reward sums; snare: ones and zeros; tb: counts, unused
  double c = 0;  // gridworld: Σ r²
  double norm = 1.0;
};

inline LossCounts loss_counts(Domain domain, Eigen::Index d, const std::vector<Trajectory>& trajs) {
  if (trajs.empty()) throw std::invalid_argument("predictive loss needs trajectories");
  LossCounts lc;
  lc.a = Vector::Zero(d);
  lc.b = Vector::Zero(d);
  if (domain == Domain::gridworld) {
    double steps = 0;
    for (const auto& tr : trajs)
      for (const auto& s : tr.steps) {
        if (s.reward_param < 0 || s.reward_param >= d) throw std::invalid_argument("gridworld step without a cell");
        lc.a[s.reward_param] += 1.0;
        lc.b[s.reward_param] += s.reward;
        lc.c += s.reward * s.reward;
        steps += 1.0;
      }
    lc.norm = std::max(steps, 1.0);
    return lc;
  }
  for (const auto& tr : trajs)
    for (const auto& s : tr.steps) {
      if (!s.events.empty() && s.latent.empty()) throw StatsError("trajectory lacks latent records");
      for (const auto& e : s.events) {
        if (e.param_index < 0 || e.param_index >= d) throw std::invalid_argument("event parameter out of range");
        (e.kind == EventKind::categorical || e.outcome ? lc.a : lc.b)[e.param_index] += 1.0;
      }
    }
  lc.norm = static_cast<double>(trajs.size());
  return lc;
}

struct LossRecord {
  ad::Var loss;
  bool clipped = false;
};

/// Records the loss on the tape holding θ (an n x 1 node).
/// gridworld: mean over steps of (θ[cell] − r)²;
/// snare/tb: negative log-likelihood of the latent events, averaged over
/// trajectories, with probabilities clipped to [clip, 1 − clip].
inline LossRecord record_two_stage_loss(Domain domain, ad::Tape& tape, ad::Var theta,
                                        const std::vector<Trajectory>& trajs, double clip = 1e-6) {
  const Vector th = tape.value(theta).col(0);
  const auto lc = loss_counts(domain, th.size(), trajs);
  LossRecord out;
  if (domain == Domain::gridworld) {
    const auto quad = tape.sum(tape.mul(tape.square(theta), tape.constant(lc.a)));
    const auto lin = tape.sum(tape.mul(theta, tape.constant(lc.b)));
    const auto total = tape.add(tape.sub(quad, tape.scale(lin, 2.0)), tape.scalar_constant(lc.c));
    out.loss = tape.scale(total, 1.0 / lc.norm);
    return out;
  }
  for (Eigen::Index k = 0; k < th.size(); ++k) {
    const bool low = th[k] < clip && lc.a[k] > 0;
    const bool high = th[k] > 1.0 - clip && lc.b[k] > 0;
    out.clipped = out.clipped || low || high;
  }
  const auto p = tape.clip(theta, clip, 1.0 - clip);
  auto ll = tape.sum(tape.mul(tape.log(p), tape.constant(lc.a)));
  if (domain == Domain::snare) {
    const auto q = tape.sub(tape.constant(Matrix::Ones(th.size(), 1)), p);
    ll = tape.add(ll, tape.sum(tape.mul(tape.log(q), tape.constant(lc.b))));
  }
  out.loss = tape.scale(ll, -1.0 / lc.norm);
  return out;
}

inline double two_stage_loss(Domain domain, const Vector& theta, const std::vector<Trajectory>& trajs,
                             double clip = 1e-6, bool* clipped = nullptr) {
  ad::Tape tape;
  const auto th = tape.constant(theta);
  const auto rec = record_two_stage_loss(domain, tape, th, trajs, clip);
  if (clipped) *clipped = rec.clipped;
  return tape.scalar(rec.loss);
}

struct LossGradient {
  double loss = 0.0;
  Vector grad;  // d loss / d w
  bool clipped = false;
};

inline LossGradient two_stage_loss_grad(const PredictiveModel& model, const Matrix& features,
                                        const std::vector<Trajectory>& trajs, double clip = 1e-6) {
  auto rec = record_prediction(model, features);
  const auto l = record_two_stage_loss(model.domain, rec.tape, rec.theta, trajs, clip);
  return {rec.tape.scalar(l.loss), ad::gradient(rec.tape, l.loss, rec.weights), l.clipped};
}

// ---------------------------------------------------------------------------
// Logs

struct TrainLogRow {
  int epoch = 0;
  int instance = 0;
  Split split = Split::train;
  double loss = std::numeric_limits<double>::quiet_NaN();
  double ope = std::numeric_limits<double>::quiet_NaN();
  double backward_ms = 0.0;
};

struct TrainLog {
  std::vector<TrainLogRow> rows;
  int chosen_epoch = -1;
  double chosen_val_ope = std::numeric_limits<double>::quiet_NaN();
  Selection selection = Selection::best_val;
  std::vector<std::string> warnings;
  int skipped = 0;
  bool clipped = false;

  std::string to_csv() const {
    std::ostringstream os;
    os << std::setprecision(17);
    os << "epoch,instance,split,loss,ope,wallclock_backward_ms\n";
    auto num = [&](double v) {
      if (std::isnan(v)) return std::string();
      std::ostringstream s;
      s << std::setprecision(17) << v;
      return s.str();
    };
    for (const auto& r : rows)
      os << r.epoch << ',' << r.instance << ',' << to_string(r.split) << ',' << num(r.loss) << ',' << num(r.ope)
         << ',' << num(r.backward_ms) << '\n';
    return os.str();
  }

  /// Mean validation OPE per evaluated epoch.
  std::map<int, double> val_ope() const {
    std::map<int, std::pair<double, int>> acc;
    for (const auto& r : rows)
      if (r.split == Split::val && !std::isnan(r.ope)) {
        acc[r.epoch].first += r.ope;
        acc[r.epoch].second += 1;
      }
    std::map<int, double> out;
    for (const auto& [e, v] : acc) out[e] = v.first / v.second;
    return out;
  }
};

struct TrainResult {
  PredictiveModel model;
  TrainLog log;
};

// ---------------------------------------------------------------------------
// Shared forward path

inline std::uint64_t train_solve_seed(std::uint64_t run_seed, int epoch, std::size_t instance) {
  return stream_seed(stream_seed(run_seed, streams::solver),
                     static_cast<std::uint64_t>(epoch) * 100003ULL + instance);
}

inline std::uint64_t eval_solve_seed(std::uint64_t run_seed, std::size_t instance) {
  return stream_seed(stream_seed(run_seed, streams::solver), 0xE7A1ULL * 1000003ULL + instance);
}

/// Forward solve under predicted θ; the one code path every trainer uses.
inline SolveResult forward_solve(const Dataset& ds, const Vector& theta, const SolverConfig& sc, std::uint64_t seed,
                                 const QFunction* warm = nullptr) {
  return solve(ds.domain, ds.config, theta, sc, seed, warm);
}

inline OpeConfig ope_config(const Dataset& ds, const TrainConfig& cfg) {
  return OpeConfig{ds.config.gamma, cfg.lambda_ess, 0.0};
}

/// Per-instance cache of the last solved Q-function, used to warm-start
/// DDQN when `solver.warm_steps` is set.
class WarmCache {
 public:
  explicit WarmCache(const SolverConfig& sc) : enabled_(sc.warm_steps > 0) {}
  const QFunction* get(std::size_t i) const {
    if (!enabled_) return nullptr;
    auto it = cache_.find(i);
    return it == cache_.end() ? nullptr : &it->second;
  }
  void put(std::size_t i, const QFunction& q) {
    if (enabled_) cache_[i] = q;
  }

 private:
  bool enabled_;
  std::map<std::size_t, QFunction> cache_;
};

struct SplitEvaluation {
  std::vector<double> ope;  // per instance, in split order
  std::vector<std::size_t> instances;
  double mean = 0.0;
  double stderr_ = 0.0;
};

/// Predict, solve and evaluate each instance of a split on its own
/// trajectories.
inline SplitEvaluation evaluate_split(const PredictiveModel& model, const Dataset& ds, Split split,
                                      const TrainConfig& cfg, Access access = Access::evaluation,
                                      WarmCache* warm = nullptr) {
  const auto idx = ds.indices(split);
  if (idx.empty()) throw std::invalid_argument("evaluate_split: split '" + to_string(split) + "' is empty");
  SplitEvaluation out;
  const OpeConfig ope = ope_config(ds, cfg);
  for (std::size_t i : idx) {
    const Vector theta = predict_params(model, ds.instance(i).features);
    const auto sol = forward_solve(ds, theta, cfg.solver, eval_solve_seed(cfg.seed, i), warm ? warm->get(i) : nullptr);
    if (warm) warm->put(i, sol.q);
    const auto& trajs = ds.trajectories(i, access);
    out.ope.push_back(eval_metric(trajs, SoftPolicy(sol.q, sol.beta), ope).eval);
    out.instances.push_back(i);
  }
  const auto s = mean_stderr(out.ope);
  out.mean = s.mean;
  out.stderr_ = s.stderr_;
  return out;
}

// ---------------------------------------------------------------------------
// Trainers

namespace detail {

inline void note(const TrainConfig& cfg, TrainLog& log, const std::string& msg) {
  log.warnings.push_back(msg);
  if (cfg.progress) *cfg.progress << "warning: " << msg << '\n';
}

inline std::vector<std::size_t> shuffled(std::vector<std::size_t> v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[static_cast<std::size_t>(uniform_index(rng, static_cast<int>(i)))]);
  return v;
}

/// One decision-focused update direction for instance i:
/// Δw_eval − λ ∇w L, plus the logged quantities.
struct InstanceStep {
  Vector direction;
  double loss = 0.0;
  double ope = 0.0;
  double backward_ms = 0.0;
  bool clipped = false;
};

inline InstanceStep decision_focused_step(const PredictiveModel& model, const Dataset& ds, std::size_t i,
                                          const TrainConfig& cfg, std::uint64_t solve_seed, WarmCache& warm) {
  const auto& inst = ds.instance(i);
  const auto& trajs = ds.trajectories(i, Access::training);
  auto rec = record_prediction(model, inst.features);
  const Vector theta = rec.value();
  const auto loss = record_two_stage_loss(ds.domain, rec.tape, rec.theta, trajs, cfg.nll_clip);
  const Vector grad_loss = ad::gradient(rec.tape, loss.loss, rec.weights);

  const auto sol = forward_solve(ds, theta, cfg.solver, solve_seed, warm.get(i));
  warm.put(i, sol.q);
  const auto t0 = std::chrono::steady_clock::now();
  const auto eg = eval_grad(trajs, sol.q, sol.beta, ope_config(ds, cfg));
  BackwardConfig bc;
  bc.mode = method_mode(cfg.method);
  bc.strategy = method_strategy(cfg.method);
  bc.c_magnitude = cfg.c_magnitude;
  bc.delta_terms = cfg.delta_terms;
  bc.gamma = ds.config.gamma;
  bc.transitions_depend_on_theta = ds.domain != Domain::gridworld;
  auto sim = make_simulator(ds.domain, ds.config, theta);
  const auto samples = simulate_trajectories(*sim, SoftPolicy(sol.q, sol.beta), cfg.samples,
                                             stream_seed(solve_seed, streams::backward_samples),
                                             bc.transitions_depend_on_theta);
  const auto bw = theta_gradient(bc, eg.grad, samples, theta, sol.q, sol.beta);
  const Vector dw_eval = assemble_dw(rec, bw.g_theta);
  const auto t1 = std::chrono::steady_clock::now();

  InstanceStep out;
  out.direction = dw_eval - cfg.reg * grad_loss;
  if (!out.direction.allFinite()) throw TrainingError("non-finite update direction");
  out.loss = rec.tape.scalar(loss.loss);
  out.ope = eg.report.eval;
  out.backward_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
  out.clipped = loss.clipped;
  return out;
}

template <class StepFn>
TrainResult run_training(const Dataset& ds, const TrainConfig& cfg, StepFn&& step) {
  cfg.validate();
  const auto train_idx = ds.indices(Split::train);
  if (train_idx.empty()) throw std::invalid_argument("training split is empty");
  const bool has_val = !ds.indices(Split::val).empty();
  TrainResult res;
  res.model = make_predictive_model(ds.domain, cfg.seed, cfg.hidden);
  res.log.selection = cfg.selection;
  PredictiveModel best = res.model;
  double best_val = -std::numeric_limits<double>::infinity();
  Rng order_rng = make_rng(cfg.seed, streams::shuffle);
  WarmCache warm(cfg.solver);
  WarmCache val_warm(cfg.solver);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    int failures = 0;
    for (std::size_t i : shuffled(train_idx, order_rng)) {
      try {
        const auto s = step(res.model, i, epoch, warm);
        res.model.weights.values() += cfg.lr * s.direction;
        res.log.clipped = res.log.clipped || s.clipped;
        res.log.rows.push_back({epoch, static_cast<int>(i), Split::train, s.loss, s.ope, s.backward_ms});
        failures = 0;
      } catch (const TrainingError&) {
        throw;
      } catch (const SplitAccessError&) {
        throw;
      } catch (const std::exception& e) {
        ++res.log.skipped;
        note(cfg, res.log, "epoch " + std::to_string(epoch) + ", instance " + std::to_string(i) + " skipped: " + e.what());
        if (++failures >= cfg.max_consecutive_failures) {
          note(cfg, res.log, "epoch " + std::to_string(epoch) + " aborted after " + std::to_string(failures) +
                                 " consecutive failures");
          break;
        }
      }
    }
    if (!res.model.weights.values().allFinite())
      throw TrainingError("non-finite model weights after epoch " + std::to_string(epoch));
    const bool eval_now = epoch % cfg.eval_every == 0 || epoch == cfg.epochs;
    if (has_val && eval_now) {
      SplitEvaluation ev;
      try {
        ev = evaluate_split(res.model, ds, Split::val, cfg, Access::training, &val_warm);
      } catch (const OpeError& e) {
        note(cfg, res.log, "epoch " + std::to_string(epoch) + " not selectable: " + e.what());
        continue;
      }
      for (std::size_t j = 0; j < ev.instances.size(); ++j) {
        const std::size_t i = ev.instances[j];
        const double l = two_stage_loss(ds.domain, predict_params(res.model, ds.instance(i).features),
                                        ds.trajectories(i, Access::training), cfg.nll_clip);
        res.log.rows.push_back({epoch, static_cast<int>(i), Split::val, l, ev.ope[j], 0.0});
      }
      if (ev.mean > best_val) {
        best_val = ev.mean;
        best = res.model;
        res.log.chosen_epoch = epoch;
        res.log.chosen_val_ope = ev.mean;
      }
    }
    if (cfg.progress) *cfg.progress << to_string(cfg.method) << " epoch " << epoch << "/" << cfg.epochs << '\n';
  }
  if (cfg.selection == Selection::best_val && res.log.chosen_epoch > 0) {
    res.model = best;
  } else {
    res.log.chosen_epoch = cfg.epochs;
    const auto v = res.log.val_ope();
    auto it = v.find(cfg.epochs);
    res.log.chosen_val_ope = it == v.end() ? std::numeric_limits<double>::quiet_NaN() : it->second;
  }
  return res;
}

}  // namespace detail

/// Gradient descent on the predictive loss, one step per training instance.
inline TrainResult train_two_stage(const Dataset& ds, TrainConfig cfg) {
  cfg.method = Method::ts;
  return detail::run_training(ds, cfg, [&](const PredictiveModel& model, std::size_t i, int epoch, WarmCache&) {
    const auto g = two_stage_loss_grad(model, ds.instance(i).features, ds.trajectories(i, Access::training),
                                       cfg.nll_clip);
    if (!std::isfinite(g.loss)) throw TrainingError("non-finite predictive loss at epoch " + std::to_string(epoch));
    detail::InstanceStep s;
    s.direction = -g.grad;
    s.loss = g.loss;
    s.clipped = g.clipped;
    return s;
  });
}

/// Algorithm loop: per training instance, predict θ, solve, differentiate
/// Eval through the optimality condition, and step
/// w ← w + α(Δw_eval − λ ∇w L).
inline TrainResult train_decision_focused(const Dataset& ds, const TrainConfig& cfg) {
  if (!is_decision_focused(cfg.method)) throw std::invalid_argument("train_decision_focused needs a decision-focused method");
  // With θ only in the transitions, every Bellman term that survives without
  // δ weighting has zero θ-derivative.
  std::string degenerate;
  if (method_mode(cfg.method) == Mode::bellman && ds.domain != Domain::gridworld && !cfg.delta_terms) {
    degenerate = "bellman gradient without delta terms is identically zero on " + to_string(ds.domain) +
                 "; only the predictive loss trains the model";
    if (cfg.progress) *cfg.progress << "warning: " << degenerate << '\n';
  }
  auto res = detail::run_training(ds, cfg, [&](const PredictiveModel& model, std::size_t i, int epoch, WarmCache& warm) {
    return detail::decision_focused_step(model, ds, i, cfg, train_solve_seed(cfg.seed, epoch, i), warm);
  });
  if (!degenerate.empty()) res.log.warnings.insert(res.log.warnings.begin(), degenerate);
  return res;
}

inline TrainResult train(const Dataset& ds, const TrainConfig& cfg) {
  return is_decision_focused(cfg.method) ? train_decision_focused(ds, cfg) : train_two_stage(ds, cfg);
}

}  // namespace dfmdp
