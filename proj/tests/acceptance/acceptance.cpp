// Acceptance runner: one PASS/FAIL line per criterion. Exits non-zero when any
// criterion fails.
#include "../support.hpp"
#include "dfmdp/backward.hpp"
#include "dfmdp/enumerate.hpp"
#include "dfmdp/experiment.hpp"
#include "dfmdp/mlp.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

namespace fs = std::filesystem;
using namespace dfmdp;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string sci(double v) {
  std::ostringstream s;
  s << std::setprecision(3) << v;
  return s.str();
}

Matrix random_matrix(Rng& rng, Eigen::Index r, Eigen::Index c, double lo = -1.0, double hi = 1.0) {
  Matrix m(r, c);
  for (auto& v : m.reshaped()) v = uniform(rng, lo, hi);
  return m;
}

double tape_vs_fd(const ad::ParamVector& p, const ad::Program& program) {
  auto rec = ad::record_and_eval(program, {&p});
  const Vector g = ad::gradient(rec.tape, rec.output, rec.inputs[0]);
  const Vector fd = ad::finite_diff_grad(
      [&](const Vector& v) {
        const auto q = p.with_values(v);
        auto r = ad::record_and_eval(program, {&q});
        return r.tape.scalar(r.output);
      },
      p.values(), 1e-5);
  return ad::relative_error_inf(g, fd);
}

// 1. Every primitive and three random MLPs against central differences.
Verdict autodiff_vs_fd() {
  Rng rng(11);
  const Matrix x = random_matrix(rng, 3, 2);
  const Matrix pos = random_matrix(rng, 3, 2, 0.5, 2.0);
  const Matrix other = random_matrix(rng, 3, 2, 0.5, 2.0);
  const Matrix w = random_matrix(rng, 4, 3);
  const Matrix b = random_matrix(rng, 4, 1);
  using Unary = std::function<ad::Var(ad::Tape&, ad::Var)>;
  const std::vector<std::pair<Unary, Matrix>> cases = {
      {[&](ad::Tape& t, ad::Var v) { return t.affine(v, t.constant(x), t.constant(Matrix::Ones(4, 1))); }, w},
      {[&](ad::Tape& t, ad::Var v) { return t.affine(t.constant(w), v, t.constant(b)); }, x},
      {[&](ad::Tape& t, ad::Var v) { return t.affine(t.constant(w), t.constant(x), v); }, b},
      {[&](ad::Tape& t, ad::Var v) { return t.add(v, t.constant(other)); }, x},
      {[&](ad::Tape& t, ad::Var v) { return t.sub(t.constant(other), v); }, x},
      {[&](ad::Tape& t, ad::Var v) { return t.scale(v, -1.7); }, x},
      {[&](ad::Tape& t, ad::Var v) { return t.mul(v, t.square(v)); }, x},
      {[&](ad::Tape& t, ad::Var v) { return t.div(t.constant(other), v); }, pos},
      {[&](ad::Tape& t, ad::Var v) { return t.square(v); }, x},
      {[&](ad::Tape& t, ad::Var v) { return t.exp(v); }, x},
      {[&](ad::Tape& t, ad::Var v) { return t.log(v); }, pos},
      {[&](ad::Tape& t, ad::Var v) { return t.sigmoid(v); }, x},
      {[&](ad::Tape& t, ad::Var v) { return t.relu(v); }, x},
      {[&](ad::Tape& t, ad::Var v) { return t.clip(v, -0.5, 0.5); }, x},
      {[&](ad::Tape& t, ad::Var v) { return t.scale(t.sum(v), 1.0); }, x},
      {[&](ad::Tape& t, ad::Var v) { return t.softmax(v, 2.5); }, x},
      {[&](ad::Tape& t, ad::Var v) { return t.log_softmax(v, 0.7); }, x},
      {[&](ad::Tape& t, ad::Var v) { return t.pick(v, {2, 0}); }, x},
      {[&](ad::Tape& t, ad::Var v) { return t.mul(t.reshape(v, 2, 3), t.reshape(v, 2, 3)); }, x},
  };
  double worst = 0.0;
  for (const auto& [op, x0] : cases) {
    ad::ParamVector p;
    p.add_segment("x", x0);
    ad::Tape probe;
    const auto shape = probe.value(op(probe, probe.leaf(x0)));
    const Matrix weights = random_matrix(rng, shape.rows(), shape.cols());
    worst = std::max(worst, tape_vs_fd(p, [&](ad::Tape& t, const std::vector<ad::Bound>& in) {
                       return t.sum(t.mul(op(t, in[0]["x"]), t.constant(weights)));
                     }));
  }
  const std::vector<MlpShape> shapes{{3, {5, 4}, 2}, {6, {8}, 3}, {4, {7, 6, 5}, 1}};
  for (const auto& shape : shapes) {
    const auto p = init_mlp(shape, rng);
    const Matrix in = random_matrix(rng, shape.input, 4);
    worst = std::max(worst, tape_vs_fd(p, [&](ad::Tape& t, const std::vector<ad::Bound>& bound) {
                       return t.sum(t.square(mlp_record(shape, t, bound[0], t.constant(in))));
                     }));
  }
  return {worst < 1e-4, "max rel err " + sci(worst) + " over " + std::to_string(cases.size()) +
                            " primitive cases and 3 MLPs"};
}

// 2. Woodbury against dense inverses.
Verdict woodbury_cases() {
  Rng rng(2024);
  const double cs[] = {0.5, -0.5, 1.0, -1.0, 2.0, -2.0};
  int accepted = 0, rejected = 0;
  double worst = 0.0;
  while (accepted < 100) {
    const int n = 1 + uniform_index(rng, 50);
    const int k = 1 + uniform_index(rng, 10);
    LowRankHessian h;
    h.U = testing::random_table(n, k, rng, 0.3);
    h.V = testing::random_table(n, k, rng, 0.3);
    h.c = cs[uniform_index(rng, 6)];
    const Matrix dense = h.dense();
    if (Eigen::JacobiSVD<Matrix>(dense).singularValues().minCoeff() < 1e-3) {
      ++rejected;  // a near-singular draw has no well-defined dense reference
      continue;
    }
    const Vector g = testing::random_table(n, 1, rng);
    worst = std::max(worst, (woodbury_solve(h, g).y - dense.inverse() * g).cwiseAbs().maxCoeff());
    ++accepted;
  }
  return {worst < 1e-8, "max abs diff " + sci(worst) + " over 100 cases (" + std::to_string(rejected) +
                            " near-singular draws redrawn)"};
}

struct Enumerated {
  std::vector<Trajectory> trajs;
  std::vector<double> probs;
};

Enumerated enumerate(const TabularMdp& mdp, const Vector& theta, const QFunction& q, double beta) {
  Enumerated e;
  for (auto& w : enumerate_trajectories(mdp, theta, q, beta)) {
    e.trajs.push_back(std::move(w.trajectory));
    e.probs.push_back(w.prob);
  }
  return e;
}

constexpr double kBeta = 1.3;

// 3 and 4. Probability-weighted estimator means against the enumerated oracle.
Verdict unbiasedness(Mode mode) {
  const auto mdp = testing::tiny_mdp();
  Rng rng(mode == Mode::pg ? 301 : 401);
  double grad_err = 0.0, hess_err = 0.0, cross_err = 0.0;
  for (int trial = 0; trial < 3; ++trial) {
    const Vector theta = testing::random_tiny_theta(rng);
    const auto q = QFunction::tabular(testing::random_table(2, 2, rng));
    const auto e = enumerate(mdp, theta, q, kBeta);
    Vector mean = Vector::Zero(q.size());
    for (std::size_t i = 0; i < e.trajs.size(); ++i)
      mean += e.probs[i] * first_order_estimate(mode, e.trajs[i], theta, q, kBeta, mdp.gamma);
    grad_err = std::max(grad_err, ad::relative_error_inf(mean, exact_objective(mode, mdp, theta, q, kBeta).grad_pi));
    const auto est = full_hessian_sampled(mode, e.trajs, theta, q, kBeta, mdp.gamma, 1e-5, &e.probs);
    const auto exact = exact_hessians(mode, mdp, theta, q, kBeta);
    hess_err = std::max(hess_err, ad::relative_error_inf(est.hessian, exact.hessian));
    cross_err = std::max(cross_err, ad::relative_error_inf(est.cross, exact.cross));
  }
  bool pass = grad_err < 1e-6 && hess_err < 1e-4 && cross_err < 1e-4;
  std::string detail = "gradient " + sci(grad_err) + ", Hessian " + sci(hess_err) + ", cross " + sci(cross_err);
  if (mode == Mode::bellman) {
    double outer_err = 0.0, max_delta = 0.0;
    for (int trial = 0; trial < 3; ++trial) {
      const auto c = testing::zero_residual_case(mdp, kBeta, rng);
      const auto q = QFunction::tabular(c.q);
      const auto e = enumerate(mdp, c.theta, q, kBeta);
      Matrix outer = Matrix::Zero(q.size(), q.size());
      for (std::size_t i = 0; i < e.trajs.size(); ++i) {
        const auto st = bellman_stats(e.trajs[i], c.theta, q, kBeta, {mdp.gamma, true});
        max_delta = std::max(max_delta, std::abs(st.delta));
        outer += e.probs[i] * st.g_delta_pi * st.g_delta_pi.transpose();
      }
      outer_err = std::max(outer_err, ad::relative_error_inf(outer, exact_hessians(mode, mdp, c.theta, q, kBeta).hessian));
    }
    pass = pass && outer_err < 1e-4 && max_delta < 1e-12;
    detail += "; with delta = 0 (max |delta| " + sci(max_delta) + ") outer-product Hessian " + sci(outer_err);
  }
  return {pass, "rel err: " + detail};
}

// 5. Implicit θ-gradient on a 3x3 gridworld against perturb-and-resolve.
Verdict end_to_end() {
  const int side = 3, horizon = 6;
  const double gamma = 0.95, beta = 0.5;
  const auto mdp = make_gridworld(side, horizon, gamma);
  Rng rng(505);
  Vector theta(side * side);
  for (auto& v : theta) v = normal(rng);
  const auto solve_q = [&](const Vector& th) { return soft_value_iteration(mdp, th, beta, 20000).q; };
  const auto q = solve_q(theta);

  EnvConfig env;
  env.grid_size = side;
  env.grid_horizon = horizon;
  env.gamma = gamma;
  env.grid_reward_noise = 0.5;
  auto sim = make_simulator(Domain::gridworld, env, theta, true);
  const auto logged = simulate_trajectories(*sim, UniformPolicy(5), 50, 506, false);
  const OpeConfig ope{gamma, 1.0, 0.0};
  const Vector g_pi = eval_grad(logged, q, beta, ope).grad;

  const auto h = exact_hessians(Mode::bellman, mdp, theta, q, beta);
  const auto implicit = dense_theta_gradient(h.hessian, h.cross, g_pi);

  ad::ParamVector w;
  w.add_segment("theta", Matrix(theta));
  PredictionTape identity;
  identity.weights = ad::bind(identity.tape, w);
  identity.theta = identity.weights["theta"];
  const Vector dw = assemble_dw(identity, implicit.g_theta);

  const Vector fd = ad::finite_diff_grad(
      [&](const Vector& th) { return eval_metric(logged, SoftPolicy(solve_q(th), beta), ope).eval; }, theta, 1e-4);
  const double err = ad::relative_error_inf(dw, fd);
  return {err < 5e-2 && !implicit.ridged,
          "rel err " + sci(err) + " over " + std::to_string(theta.size()) + " cells, horizon " +
              std::to_string(horizon) + (implicit.ridged ? ", Hessian needed a ridge" : "")};
}

// 6. CWPDIS identities on-policy, and eval_grad against finite differences.
Verdict ope_identities() {
  Rng rng(606);
  const int k = 7, h = 4;
  const double gamma = 0.9;
  std::vector<Trajectory> trajs;
  for (int i = 0; i < k; ++i) {
    std::vector<int> s, a;
    std::vector<double> r, b;
    for (int t = 0; t < h; ++t) {
      s.push_back(uniform_index(rng, 3));
      a.push_back(uniform_index(rng, 2));
      r.push_back(normal(rng));
      b.push_back(0.5);
    }
    trajs.push_back(testing::make_trajectory(s, a, r, b, uniform_index(rng, 3)));
  }
  const UniformPolicy behavior(2);
  const Matrix rho = importance_ratios(trajs, behavior);
  const double rho_dev = (rho.array() - 1.0).abs().maxCoeff();
  const auto rep = eval_metric(trajs, behavior, OpeConfig{gamma, 1.0, 0.0});
  double direct = 0.0;
  for (int t = 0; t < h; ++t) {
    double mean = 0.0;
    for (const auto& tr : trajs) mean += tr.steps[t].reward / k;
    direct += std::pow(gamma, t + 1) * mean;
  }
  const double value_err = std::abs(rep.cwpdis_value - direct);
  const bool ess_exact = rep.ess == static_cast<double>(h * k);

  double grad_err = 0.0;
  for (int trial = 0; trial < 3; ++trial) {
    const auto q = QFunction::tabular(testing::random_table(2, 3, rng));
    const double beta = 0.5 + trial;
    const OpeConfig cfg{gamma, 1.0, 0.0};
    const Vector fd = ad::finite_diff_grad(
        [&](const Vector& v) { return eval_metric(trajs, SoftPolicy(q.with_values(v), beta), cfg).eval; },
        q.params().values(), 1e-6);
    grad_err = std::max(grad_err, ad::relative_error_inf(eval_grad(trajs, q, beta, cfg).grad, fd));
  }
  return {rho_dev == 0.0 && value_err < 1e-12 && ess_exact && grad_err < 1e-4,
          "max |rho - 1| " + sci(rho_dev) + ", value err " + sci(value_err) + ", ESS " + sci(rep.ess) + " (h*k = " +
              std::to_string(h * k) + "), gradient rel err " + sci(grad_err)};
}

std::vector<double> seed_means(const std::vector<RunRecord>& runs, Method m, const std::vector<std::uint64_t>& seeds) {
  std::vector<double> out;
  for (auto s : seeds)
    for (const auto& r : runs)
      if (r.method == m && r.seed == s) out.push_back(r.test_mean);
  return out;
}

// 7 and 8. Directional comparison over seeds with a one-sided paired t-test.
Verdict directional(const std::string& work, Domain domain, Regime regime, Method method, const json& overrides) {
  fs::remove_all(work);
  SweepSpec spec;
  spec.domain = domain;
  spec.regime = regime;
  spec.seeds = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  spec.methods = {Method::ts, method};
  spec.overrides = overrides;
  spec.out_dir = work;
  spec.threads = worker_threads();
  const auto res = run_sweep(spec, &std::cerr);
  if (!res.failures.empty()) return {false, std::to_string(res.failures.size()) + " runs failed: " + res.failures[0]};
  const auto df = seed_means(res.runs, method, spec.seeds);
  const auto ts = seed_means(res.runs, Method::ts, spec.seeds);
  const auto test = paired_t_test(df, ts);
  const auto a = mean_stderr(df), b = mean_stderr(ts);
  return {test.mean_diff > 0.0 && test.p_value < 0.05,
          to_string(method) + " " + sci(a.mean) + " +- " + sci(a.stderr_) + " vs ts " + sci(b.mean) + " +- " +
              sci(b.stderr_) + ", mean diff " + sci(test.mean_diff) + ", one-sided paired p " + sci(test.p_value)};
}

// 9. Backward-pass runtime scaling on gridworld.
Verdict runtime_scaling(const std::string& work) {
  RuntimeSpec spec;
  spec.domain = Domain::gridworld;
  spec.sizes = {4, 6, 8, 11, 16};
  spec.samples = 100;
  spec.reps = 5;
  const auto pts = run_runtime(spec, &std::cerr);
  fs::create_directories(work);
  write_file((fs::path(work) / "runtime.csv").string(), runtime_csv(pts));
  std::map<Strategy, std::vector<double>> ns, ms;
  for (const auto& p : pts) {
    if (p.timed_out) return {false, to_string(p.strategy) + " timed out at n=" + std::to_string(p.n)};
    ns[p.strategy].push_back(static_cast<double>(p.n));
    ms[p.strategy].push_back(p.median_ms);
  }
  const double span = ns[Strategy::woodbury].back() / ns[Strategy::woodbury].front();
  const double e_id = loglog_slope(ns[Strategy::identity], ms[Strategy::identity]);
  const double e_w = loglog_slope(ns[Strategy::woodbury], ms[Strategy::woodbury]);
  const double e_full = loglog_slope(ns[Strategy::full], ms[Strategy::full]);
  bool monotone = true;
  std::string ratios;
  double prev = 0.0;
  for (std::size_t i = 0; i < ms[Strategy::full].size(); ++i) {
    const double r = ms[Strategy::full][i] / ms[Strategy::woodbury][i];
    if (r <= prev) monotone = false;
    prev = r;
    ratios += (i ? "," : "") + sci(r);
  }
  return {span >= 16.0 && e_id < 1.5 && e_w < 1.5 && monotone,
          "n spans " + sci(span) + "x; exponents identity " + sci(e_id) + ", woodbury " + sci(e_w) + ", full " +
              sci(e_full) + "; full/woodbury ratios " + ratios};
}

// 10. Regularization sweep on snare.
Verdict lambda_sweep(const std::string& work, const json& overrides) {
  fs::remove_all(work);
  SweepSpec spec;
  spec.domain = Domain::snare;
  spec.regime = Regime::random;
  spec.seeds = {0, 1, 2};
  spec.methods = {Method::bellman_w};
  spec.regs = {0.0, 0.01, 0.1, 1.0, 10.0};
  spec.overrides = overrides;
  spec.out_dir = work;
  spec.threads = worker_threads();
  const auto res = run_sweep(spec, &std::cerr);
  if (!res.failures.empty()) return {false, std::to_string(res.failures.size()) + " runs failed: " + res.failures[0]};
  const auto rows = read_file((fs::path(work) / "sweep.csv").string());
  std::set<double> seen;
  std::string summary;
  for (const auto& c : aggregate(res.runs)) {
    seen.insert(c.key.reg);
    summary += (summary.empty() ? "" : ", ") + ("reg " + reg_label(c.key.reg) + ": " + sci(c.summary.mean));
  }
  const auto lines = std::count(rows.begin(), rows.end(), '\n') - 1;
  return {seen.size() == spec.regs.size() && lines == static_cast<long>(spec.regs.size()),
          std::to_string(lines) + " OPE rows (" + summary + ")"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::string work = "acceptance_runs";
  std::vector<int> only;
  app.add_option("--work-dir", work, "Directory for sweep outputs")->capture_default_str();
  app.add_option("--only", only, "Run only these criteria")->delimiter(',')->check(CLI::Range(1, 10));
  CLI11_PARSE(app, argc, argv);

  // Snare desk profile: warm-started DDQN re-solves, validation every 5 epochs,
  // and the δ-weighted Bellman terms without which θ has no Bellman gradient.
  const json snare_profile = {{"eval_every", 5}, {"delta_terms", true}, {"solver", {{"warm_steps", 1000}}}};

  struct Criterion {
    int id;
    std::string name;
    double budget_s;
    std::function<Verdict()> run;
  };
  const std::vector<Criterion> criteria = {
      {1, "autodiff matches finite differences", 1.0, autodiff_vs_fd},
      {2, "Woodbury solve matches dense inverse", 5.0, woodbury_cases},
      {3, "policy-gradient estimators are unbiased", 30.0, [] { return unbiasedness(Mode::pg); }},
      {4, "Bellman estimators are unbiased", 30.0, [] { return unbiasedness(Mode::bellman); }},
      {5, "end-to-end implicit gradient on 3x3 gridworld", 300.0, end_to_end},
      {6, "OPE identities", 5.0, ope_identities},
      {7, "gridworld near-optimal: pg-w beats ts", 4 * 3600.0,
       [&] { return directional(work + "/c7", Domain::gridworld, Regime::near_optimal, Method::pg_w, json::object()); }},
      {8, "snare random: bellman-w beats ts", 4 * 3600.0,
       [&] { return directional(work + "/c8", Domain::snare, Regime::random, Method::bellman_w, snare_profile); }},
      {9, "runtime scaling of the backward pass", 1800.0, [&] { return runtime_scaling(work + "/c9"); }},
      {10, "regularization sweep on snare", 7200.0, [&] { return lambda_sweep(work + "/c10", snare_profile); }},
  };

  int failed = 0;
  std::ostringstream report;
  for (const auto& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = c.run();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_budget = secs <= c.budget_s;
    const bool pass = v.pass && in_budget;
    if (!pass) ++failed;
    std::ostringstream line;
    line << (pass ? "PASS" : "FAIL") << "  criterion " << c.id << ": " << c.name << " | " << v.detail << " | "
         << std::fixed << std::setprecision(1) << secs << " s of " << c.budget_s << " s"
         << (in_budget ? "" : " (over budget)");
    std::cout << line.str() << std::endl;
    report << line.str() << '\n';
  }
  fs::create_directories(work);
  write_file((fs::path(work) / "acceptance.txt").string(), report.str());
  return failed == 0 ? 0 : 1;
}
