// Experiment runs: train, evaluate on the test split, persist and aggregate.
#pragma once

#include "dfmdp/dataset.hpp"
#include "dfmdp/io.hpp"
#include "dfmdp/stats.hpp"
#include "dfmdp/training.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

namespace dfmdp {

inline constexpr const char* kResultFormat = "dfmdp-result/1";

/// 64-bit FNV-1a digest as 16 hex digits; identifies input files in run records.
inline std::string content_hash(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------------------------
// Config serialization

inline json to_json(const SolverConfig& s) {
  const auto& d = s.ddqn;
  return {{"backup", s.backup == Backup::expected ? "expected" : "log_sum_exp"},
          {"vi_beta", s.vi_beta},
          {"vi_iterations", s.vi_iterations},
          {"warm_steps", s.warm_steps},
          {"ddqn",
           {{"beta", d.beta},
            {"gamma", d.gamma},
            {"random_steps", d.random_steps},
            {"train_steps", d.train_steps},
            {"batch", d.batch},
            {"target_refresh", d.target_refresh},
            {"lr", d.lr},
            {"adam_b1", d.adam_b1},
            {"adam_b2", d.adam_b2},
            {"adam_eps", d.adam_eps},
            {"hidden", d.hidden}}}};
}

template <class T>
void read_if_present(const json& j, const char* key, T& field) {
  if (j.contains(key)) field = j.at(key).get<T>();
}

inline SolverConfig solver_config_from_json(const json& j, SolverConfig s = {}) {
  if (j.contains("backup")) {
    const auto b = j.at("backup").get<std::string>();
    if (b != "expected" && b != "log_sum_exp") throw std::invalid_argument("unknown backup '" + b + "'");
    s.backup = b == "expected" ? Backup::expected : Backup::log_sum_exp;
  }
  read_if_present(j, "vi_beta", s.vi_beta);
  read_if_present(j, "vi_iterations", s.vi_iterations);
  read_if_present(j, "warm_steps", s.warm_steps);
  if (j.contains("ddqn")) {
    const auto& d = j.at("ddqn");
    read_if_present(d, "beta", s.ddqn.beta);
    read_if_present(d, "gamma", s.ddqn.gamma);
    read_if_present(d, "random_steps", s.ddqn.random_steps);
    read_if_present(d, "train_steps", s.ddqn.train_steps);
    read_if_present(d, "batch", s.ddqn.batch);
    read_if_present(d, "target_refresh", s.ddqn.target_refresh);
    read_if_present(d, "lr", s.ddqn.lr);
    read_if_present(d, "adam_b1", s.ddqn.adam_b1);
    read_if_present(d, "adam_b2", s.ddqn.adam_b2);
    read_if_present(d, "adam_eps", s.ddqn.adam_eps);
    read_if_present(d, "hidden", s.ddqn.hidden);
  }
  return s;
}

inline json to_json(const TrainConfig& c) {
  return {{"method", to_string(c.method)},
          {"epochs", c.epochs},
          {"lr", c.lr},
          {"reg", c.reg},
          {"lambda_ess", c.lambda_ess},
          {"samples", c.samples},
          {"c_magnitude", c.c_magnitude},
          {"delta_terms", c.delta_terms},
          {"seed", c.seed},
          {"selection", to_string(c.selection)},
          {"hidden", c.hidden},
          {"eval_every", c.eval_every},
          {"nll_clip", c.nll_clip},
          {"max_consecutive_failures", c.max_consecutive_failures},
          {"solver", to_json(c.solver)}};
}

inline TrainConfig train_config_from_json(const json& j, TrainConfig c = {}) {
  if (j.contains("method")) c.method = parse_method(j.at("method").get<std::string>());
  read_if_present(j, "epochs", c.epochs);
  read_if_present(j, "lr", c.lr);
  read_if_present(j, "reg", c.reg);
  read_if_present(j, "lambda_ess", c.lambda_ess);
  read_if_present(j, "samples", c.samples);
  read_if_present(j, "c_magnitude", c.c_magnitude);
  read_if_present(j, "delta_terms", c.delta_terms);
  read_if_present(j, "seed", c.seed);
  if (j.contains("selection")) c.selection = parse_selection(j.at("selection").get<std::string>());
  read_if_present(j, "hidden", c.hidden);
  read_if_present(j, "eval_every", c.eval_every);
  read_if_present(j, "nll_clip", c.nll_clip);
  read_if_present(j, "max_consecutive_failures", c.max_consecutive_failures);
  if (j.contains("solver")) c.solver = solver_config_from_json(j.at("solver"), c.solver);
  return c;
}

// ---------------------------------------------------------------------------
// Runs

struct RunOutcome {
  TrainResult train;
  SplitEvaluation test;
  double train_seconds = 0.0;
};

/// Trains on the train/val splits, then evaluates the selected model once on
/// the test split.
inline RunOutcome run_experiment(const Dataset& ds, const TrainConfig& cfg) {
  RunOutcome out;
  const auto t0 = std::chrono::steady_clock::now();
  out.train = train(ds, cfg);
  out.train_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  out.test = evaluate_split(out.train.model, ds, Split::test, cfg, Access::evaluation);
  return out;
}

/// Summary persisted as result.json in a run directory.
struct RunRecord {
  Domain domain = Domain::gridworld;
  Regime regime = Regime::random;
  Method method = Method::ts;
  std::uint64_t seed = 0;
  std::uint64_t dataset_seed = 0;
  double lambda_ess = 1.0;
  double reg = 0.1;
  Selection selection = Selection::best_val;
  int chosen_epoch = -1;
  double chosen_val_ope = 0.0;
  std::vector<double> test_ope;
  std::vector<std::size_t> test_instances;
  double test_mean = 0.0;
  double test_stderr = 0.0;
  int skipped = 0;
  std::vector<std::string> warnings;
  double train_seconds = 0.0;
  std::string dataset_hash;
};

inline RunRecord make_record(const Dataset& ds, const TrainConfig& cfg, const RunOutcome& o,
                             const std::string& dataset_hash) {
  RunRecord r;
  r.domain = ds.domain;
  r.regime = ds.regime;
  r.method = cfg.method;
  r.seed = cfg.seed;
  r.dataset_seed = ds.seed;
  r.lambda_ess = cfg.lambda_ess;
  r.reg = cfg.reg;
  r.selection = cfg.selection;
  r.chosen_epoch = o.train.log.chosen_epoch;
  r.chosen_val_ope = o.train.log.chosen_val_ope;
  r.test_ope = o.test.ope;
  r.test_instances = o.test.instances;
  r.test_mean = o.test.mean;
  r.test_stderr = o.test.stderr_;
  r.skipped = o.train.log.skipped;
  r.warnings = o.train.log.warnings;
  r.train_seconds = o.train_seconds;
  r.dataset_hash = dataset_hash;
  return r;
}

/// NaN has no JSON spelling; it is written as null.
inline json number_or_null(double v) { return std::isnan(v) ? json(nullptr) : json(v); }

inline json to_json(const RunRecord& r) {
  return {{"format", kResultFormat},
          {"domain", to_string(r.domain)},
          {"regime", to_string(r.regime)},
          {"method", to_string(r.method)},
          {"seed", r.seed},
          {"dataset_seed", r.dataset_seed},
          {"lambda_ess", r.lambda_ess},
          {"reg", r.reg},
          {"selection", to_string(r.selection)},
          {"chosen_epoch", r.chosen_epoch},
          {"chosen_val_ope", number_or_null(r.chosen_val_ope)},
          {"test_ope", r.test_ope},
          {"test_instances", r.test_instances},
          {"test_mean", r.test_mean},
          {"test_stderr", r.test_stderr},
          {"skipped", r.skipped},
          {"warnings", r.warnings},
          {"train_seconds", r.train_seconds},
          {"dataset_hash", r.dataset_hash}};
}

inline RunRecord run_record_from_json(const json& doc) {
  check_format(doc, kResultFormat);
  RunRecord r;
  try {
    r.domain = parse_domain(doc.at("domain").get<std::string>());
    r.regime = parse_regime(doc.at("regime").get<std::string>());
    r.method = parse_method(doc.at("method").get<std::string>());
    r.seed = doc.at("seed").get<std::uint64_t>();
    r.dataset_seed = doc.at("dataset_seed").get<std::uint64_t>();
    r.lambda_ess = doc.at("lambda_ess").get<double>();
    r.reg = doc.at("reg").get<double>();
    r.selection = parse_selection(doc.at("selection").get<std::string>());
    r.chosen_epoch = doc.at("chosen_epoch").get<int>();
    const auto& v = doc.at("chosen_val_ope");
    r.chosen_val_ope = v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
    r.test_ope = doc.at("test_ope").get<std::vector<double>>();
    r.test_instances = doc.at("test_instances").get<std::vector<std::size_t>>();
    r.test_mean = doc.at("test_mean").get<double>();
    r.test_stderr = doc.at("test_stderr").get<double>();
    r.skipped = doc.at("skipped").get<int>();
    r.warnings = doc.at("warnings").get<std::vector<std::string>>();
    r.train_seconds = doc.at("train_seconds").get<double>();
    r.dataset_hash = doc.at("dataset_hash").get<std::string>();
  } catch (const json::exception& e) {
    throw MalformedFileError(std::string("result: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw MalformedFileError(std::string("result: ") + e.what());
  }
  return r;
}

/// Frozen config of a training run: enough to re-execute it.
inline json run_config_json(const TrainConfig& cfg, const std::string& dataset_path, const std::string& dataset_hash) {
  return {{"command", "train"},
          {"dataset", dataset_path},
          {"dataset_hash", dataset_hash},
          {"train", to_json(cfg)}};
}

/// Writes model.json, train_log.csv, config.json and result.json into `dir`.
inline RunRecord write_run(const std::string& dir, const Dataset& ds, const TrainConfig& cfg, const RunOutcome& o,
                           const std::string& dataset_path, const std::string& dataset_hash) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const fs::path base(dir);
  save_model(o.train.model, (base / "model.json").string());
  write_file((base / "train_log.csv").string(), o.train.log.to_csv());
  write_file((base / "config.json").string(), run_config_json(cfg, dataset_path, dataset_hash).dump(2) + "\n");
  auto record = make_record(ds, cfg, o, dataset_hash);
  write_file((base / "result.json").string(), to_json(record).dump(2) + "\n");
  return record;
}

/// Every result.json below `root`, in path order.
inline std::vector<RunRecord> load_runs(const std::string& root) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw std::runtime_error("'" + root + "' is not a directory");
  std::vector<fs::path> paths;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file() && e.path().filename() == "result.json") paths.push_back(e.path());
  std::sort(paths.begin(), paths.end());
  std::vector<RunRecord> out;
  for (const auto& p : paths) out.push_back(run_record_from_json(parse_document(read_file(p.string()), p.string())));
  return out;
}

// ---------------------------------------------------------------------------
// Aggregation

struct CellKey {
  Domain domain = Domain::gridworld;
  Regime regime = Regime::random;
  Method method = Method::ts;
  double lambda_ess = 1.0;
  Selection selection = Selection::best_val;
  double reg = 0.1;

  friend bool operator<(const CellKey& a, const CellKey& b) {
    // Table rows follow the method order of all_methods().
    const auto rank = [](Method m) {
      const auto& all = all_methods();
      return std::find(all.begin(), all.end(), m) - all.begin();
    };
    return std::make_tuple(a.domain, a.regime, rank(a.method), a.lambda_ess, a.selection, a.reg) <
           std::make_tuple(b.domain, b.regime, rank(b.method), b.lambda_ess, b.selection, b.reg);
  }
};

struct Cell {
  CellKey key;
  std::vector<double> seed_means;  // one test-split mean per run
  MeanStderr summary;
  bool missing = false;
};

inline CellKey cell_key(const RunRecord& r) {
  return CellKey{r.domain, r.regime, r.method, r.lambda_ess, r.selection, r.reg};
}

/// Mean ± stderr across seeds of each run's test-split mean OPE.
inline std::vector<Cell> aggregate(const std::vector<RunRecord>& runs) {
  std::map<CellKey, Cell> cells;
  for (const auto& r : runs) {
    auto& c = cells[cell_key(r)];
    c.key = cell_key(r);
    c.seed_means.push_back(r.test_mean);
  }
  std::vector<Cell> out;
  for (auto& [k, c] : cells) {
    c.summary = mean_stderr(c.seed_means);
    out.push_back(std::move(c));
  }
  return out;
}

inline std::string format_number(double v) {
  if (std::isnan(v)) return "";
  std::ostringstream s;
  s << std::setprecision(10) << v;
  return s.str();
}

inline std::string results_csv(const std::vector<Cell>& cells) {
  std::ostringstream os;
  os << "domain,regime,method,n_seeds,mean,stderr,lambda_ess,selection,reg,status\n";
  for (const auto& c : cells) {
    os << to_string(c.key.domain) << ',' << to_string(c.key.regime) << ',' << to_string(c.key.method) << ','
       << (c.missing ? 0 : c.summary.n) << ',' << (c.missing ? "" : format_number(c.summary.mean)) << ','
       << (c.missing ? "" : format_number(c.summary.stderr_)) << ',' << format_number(c.key.lambda_ess) << ','
       << to_string(c.key.selection) << ',' << format_number(c.key.reg) << ',' << (c.missing ? "missing" : "ok")
       << '\n';
  }
  return os.str();
}

/// Aggregated cells plus one flagged row for every requested method absent
/// from a (domain, regime, λ_ESS, selection) group that has at least one run.
inline std::vector<Cell> table_cells(const std::vector<RunRecord>& runs, const std::vector<Method>& methods) {
  auto cells = aggregate(runs);
  std::set<std::tuple<Domain, Regime, double, Selection>> groups;
  std::set<std::tuple<Domain, Regime, double, Selection, Method>> present;
  for (const auto& c : cells) {
    groups.insert({c.key.domain, c.key.regime, c.key.lambda_ess, c.key.selection});
    present.insert({c.key.domain, c.key.regime, c.key.lambda_ess, c.key.selection, c.key.method});
  }
  for (const auto& [d, r, l, s] : groups)
    for (Method m : methods)
      if (!present.count({d, r, l, s, m})) {
        Cell c;
        c.key = CellKey{d, r, m, l, s, std::numeric_limits<double>::quiet_NaN()};
        c.missing = true;
        cells.push_back(c);
      }
  std::stable_sort(cells.begin(), cells.end(), [](const Cell& a, const Cell& b) { return a.key < b.key; });
  return cells;
}

// ---------------------------------------------------------------------------
// Frozen configs and parallel jobs

/// Writes `<path>.config.json` next to an output file.
inline void write_frozen_config(const std::string& output_path, const json& config) {
  write_file(output_path + ".config.json", config.dump(2) + "\n");
}

inline json generate_config_json(Domain domain, Regime regime, std::uint64_t seed, const EnvConfig& env,
                                 const DatasetOptions& opt) {
  return {{"command", "generate"},
          {"domain", to_string(domain)},
          {"regime", to_string(regime)},
          {"seed", seed},
          {"train", opt.train},
          {"val", opt.val},
          {"test", opt.test},
          {"trajectories", opt.trajectories},
          {"noise_scale", opt.noise_scale},
          {"env", to_json(env)}};
}

/// Worker count: DFMDP_THREADS when set, else the hardware concurrency.
inline int worker_threads() {
  if (const char* v = std::getenv("DFMDP_THREADS")) {
    char* end = nullptr;
    const long n = std::strtol(v, &end, 10);
    if (end == v || *end != '\0' || n < 1) throw std::invalid_argument("DFMDP_THREADS must be a positive integer");
    return static_cast<int>(n);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs fn(0..n-1) on up to `threads` workers; returns one error message per
/// failed index (empty on success).
inline std::vector<std::string> parallel_jobs(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
  std::vector<std::string> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next++) < n;) {
      try {
        fn(i);
      } catch (const std::exception& e) {
        errors[i] = e.what();
        if (errors[i].empty()) errors[i] = "unknown error";
      }
    }
  };
  const auto count = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, threads)));
  if (count <= 1) {
    worker();
    return errors;
  }
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < count; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  return errors;
}

// ---------------------------------------------------------------------------
// Sweeps

struct SweepSpec {
  Domain domain = Domain::gridworld;
  Regime regime = Regime::random;
  EnvConfig env;
  DatasetOptions data;
  std::vector<std::uint64_t> seeds;
  std::vector<Method> methods;
  std::vector<double> regs{0.1};
  json overrides = json::object();  // TrainConfig fields applied over the domain defaults
  std::string out_dir;
  int threads = 1;
};

inline json to_json(const SweepSpec& s) {
  std::vector<std::string> methods;
  for (Method m : s.methods) methods.push_back(to_string(m));
  return {{"command", "sweep"},
          {"domain", to_string(s.domain)},
          {"regime", to_string(s.regime)},
          {"env", to_json(s.env)},
          {"train", s.data.train},
          {"val", s.data.val},
          {"test", s.data.test},
          {"trajectories", s.data.trajectories},
          {"noise_scale", s.data.noise_scale},
          {"seeds", s.seeds},
          {"methods", methods},
          {"regs", s.regs},
          {"overrides", s.overrides}};
}

inline TrainConfig resolve_train_config(Domain domain, const EnvConfig& env, const json& overrides) {
  auto cfg = train_config_from_json(overrides, default_train_config(domain, env));
  cfg.validate();
  return cfg;
}

inline std::string reg_label(double reg) {
  std::ostringstream s;
  s << reg;
  return s.str();
}

struct SweepResult {
  std::vector<RunRecord> runs;
  std::vector<std::string> failures;
};

/// One dataset per seed under out/data, one run per (method, reg, seed) under
/// out/runs, aggregated into out/sweep.csv. Each job trains on its own copy
/// of the dataset loaded from disk.
inline SweepResult run_sweep(const SweepSpec& spec, std::ostream* progress = nullptr) {
  namespace fs = std::filesystem;
  if (spec.seeds.empty() || spec.methods.empty() || spec.regs.empty())
    throw std::invalid_argument("sweep needs at least one seed, method and reg value");
  const fs::path root(spec.out_dir);
  fs::create_directories(root / "data");
  fs::create_directories(root / "runs");
  write_file((root / "sweep.config.json").string(), to_json(spec).dump(2) + "\n");
  std::mutex io;
  auto say = [&](const std::string& line) {
    if (!progress) return;
    std::lock_guard<std::mutex> lock(io);
    *progress << line << '\n' << std::flush;
  };

  std::vector<std::string> paths;
  for (auto s : spec.seeds)
    paths.push_back((root / "data" /
                     (to_string(spec.domain) + "_" + to_string(spec.regime) + "_seed" + std::to_string(s) + ".json"))
                        .string());
  auto gen_errors = parallel_jobs(spec.seeds.size(), spec.threads, [&](std::size_t i) {
    const auto ds = generate_dataset(spec.domain, spec.regime, spec.seeds[i], spec.env, spec.data);
    save_dataset(ds, paths[i]);
    write_frozen_config(paths[i], generate_config_json(spec.domain, spec.regime, spec.seeds[i], spec.env, spec.data));
    say("generated " + paths[i]);
  });
  for (std::size_t i = 0; i < gen_errors.size(); ++i)
    if (!gen_errors[i].empty()) throw std::runtime_error("generating " + paths[i] + ": " + gen_errors[i]);

  struct Job {
    Method method;
    double reg;
    std::size_t seed_index;
  };
  std::vector<Job> jobs;
  for (Method m : spec.methods)
    for (double reg : spec.regs)
      for (std::size_t i = 0; i < spec.seeds.size(); ++i) jobs.push_back({m, reg, i});

  std::vector<std::optional<RunRecord>> records(jobs.size());
  std::vector<std::string> dirs(jobs.size());
  auto errors = parallel_jobs(jobs.size(), spec.threads, [&](std::size_t j) {
    const auto& job = jobs[j];
    const auto seed = spec.seeds[job.seed_index];
    const std::string text = read_file(paths[job.seed_index]);
    const Dataset ds = dataset_from_string(text);
    auto cfg = resolve_train_config(spec.domain, spec.env, spec.overrides);
    cfg.method = job.method;
    cfg.reg = job.reg;
    cfg.seed = seed;
    dirs[j] = (root / "runs" / (to_string(job.method) + "_reg" + reg_label(job.reg) + "_seed" + std::to_string(seed)))
                  .string();
    const auto outcome = run_experiment(ds, cfg);
    records[j] = write_run(dirs[j], ds, cfg, outcome, paths[job.seed_index], content_hash(text));
    std::ostringstream line;
    line << "[" << j + 1 << "/" << jobs.size() << "] " << to_string(job.method) << " reg=" << job.reg
         << " seed=" << seed << ": test OPE " << outcome.test.mean << " (" << std::fixed << std::setprecision(1)
         << outcome.train_seconds << " s)";
    say(line.str());
  });

  SweepResult out;
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    if (records[j]) out.runs.push_back(*records[j]);
    if (!errors[j].empty()) {
      out.failures.push_back(to_string(jobs[j].method) + " reg=" + reg_label(jobs[j].reg) +
                             " seed=" + std::to_string(spec.seeds[jobs[j].seed_index]) + ": " + errors[j]);
      say("failed: " + out.failures.back());
    }
  }
  if (!out.runs.empty())
    write_file((root / "sweep.csv").string(), results_csv(table_cells(out.runs, spec.methods)));
  return out;
}

// ---------------------------------------------------------------------------
// Runtime scaling

struct RuntimeSpec {
  Domain domain = Domain::gridworld;  // sizes are grid sides (gridworld) or hidden widths (snare)
  std::vector<Strategy> strategies{Strategy::identity, Strategy::woodbury, Strategy::full};
  std::vector<int> sizes;
  int samples = 100;
  int reps = 5;
  double timeout_s = 600.0;
  Mode mode = Mode::pg;
  std::uint64_t seed = 0;
};

inline json to_json(const RuntimeSpec& s) {
  std::vector<std::string> strategies;
  for (auto st : s.strategies) strategies.push_back(to_string(st));
  return {{"command", "runtime"},   {"domain", to_string(s.domain)}, {"strategies", strategies},
          {"sizes", s.sizes},       {"samples", s.samples},          {"reps", s.reps},
          {"timeout_s", s.timeout_s}, {"mode", to_string(s.mode)},  {"seed", s.seed}};
}

struct RuntimePoint {
  Strategy strategy = Strategy::identity;
  int size = 0;
  Eigen::Index n = 0;  // policy parameter count
  int k = 0;
  double median_ms = std::numeric_limits<double>::quiet_NaN();
  int reps = 0;
  bool timed_out = false;
};

/// A random policy of the requested size with pre-simulated samples; the
/// timed region is one backward pass (θ gradient from dEval/dπ).
struct RuntimeProblem {
  BackwardConfig bc;
  Vector theta, g_pi;
  QFunction q;
  double beta = 1.0;
  std::vector<Trajectory> samples;
};

inline RuntimeProblem runtime_problem(const RuntimeSpec& spec, int size) {
  if (size < 1) throw std::invalid_argument("runtime sizes must be positive");
  RuntimeProblem p;
  EnvConfig env;
  Rng rng(stream_seed(spec.seed, static_cast<std::uint64_t>(size)));
  if (spec.domain == Domain::gridworld) {
    if (size < 2) throw std::invalid_argument("gridworld side must be at least 2");
    env.grid_size = size;
    const int states = size * size;
    p.theta = Vector(states);
    for (auto& v : p.theta) v = normal(rng);
    Matrix table(env.num_actions(Domain::gridworld), states);
    for (auto& v : table.reshaped()) v = normal(rng);
    p.q = QFunction::tabular(table);
    p.beta = forward_solver(Domain::gridworld, env).vi_beta;
  } else if (spec.domain == Domain::snare) {
    p.theta = Vector(env.snare_sites);
    for (auto& v : p.theta) v = uniform(rng, 0.05, 0.95);
    const MlpShape shape{env.snare_sites, {size, size}, env.num_actions(Domain::snare)};
    p.q = QFunction::mlp(shape, init_mlp(shape, rng));
    p.beta = forward_solver(Domain::snare, env).ddqn.beta;
  } else {
    throw std::invalid_argument("runtime benchmark supports gridworld and snare");
  }
  p.g_pi = Vector(p.q.size());
  for (auto& v : p.g_pi) v = normal(rng);
  p.bc.mode = spec.mode;
  p.bc.gamma = env.gamma;
  p.bc.transitions_depend_on_theta = spec.domain != Domain::gridworld;
  auto sim = make_simulator(spec.domain, env, p.theta);
  p.samples = simulate_trajectories(*sim, SoftPolicy(p.q, p.beta), spec.samples,
                                    stream_seed(spec.seed, streams::backward_samples), p.bc.transitions_depend_on_theta);
  return p;
}

/// Median over `reps` timed backward passes after one warm-up. The timeout is
/// checked between passes; once a strategy times out, its larger sizes are
/// recorded as timeouts without running.
inline std::vector<RuntimePoint> run_runtime(const RuntimeSpec& spec, std::ostream* progress = nullptr) {
  if (spec.reps < 1) throw std::invalid_argument("need at least one repetition");
  if (spec.samples < 1) throw std::invalid_argument("need at least one sample");
  Eigen::setNbThreads(1);
  std::vector<int> sizes = spec.sizes;
  std::sort(sizes.begin(), sizes.end());
  std::set<Strategy> exhausted;
  std::vector<RuntimePoint> out;
  using clock = std::chrono::steady_clock;
  for (int size : sizes) {
    auto problem = runtime_problem(spec, size);
    for (Strategy st : spec.strategies) {
      RuntimePoint pt;
      pt.strategy = st;
      pt.size = size;
      pt.n = problem.q.size();
      pt.k = spec.samples;
      if (exhausted.count(st)) {
        pt.timed_out = true;
        out.push_back(pt);
        continue;
      }
      problem.bc.strategy = st;
      const auto start = clock::now();
      auto elapsed = [&] { return std::chrono::duration<double>(clock::now() - start).count(); };
      std::vector<double> ms;
      for (int r = 0; r <= spec.reps && elapsed() <= spec.timeout_s; ++r) {
        const auto t0 = clock::now();
        const auto g = theta_gradient(problem.bc, problem.g_pi, problem.samples, problem.theta, problem.q, problem.beta);
        const auto t1 = clock::now();
        if (!g.g_theta.allFinite()) throw std::runtime_error("non-finite gradient in runtime benchmark");
        if (r > 0) ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
      }
      pt.reps = static_cast<int>(ms.size());
      if (pt.reps < spec.reps) {
        pt.timed_out = true;
        exhausted.insert(st);
      } else {
        std::nth_element(ms.begin(), ms.begin() + static_cast<long>(ms.size() / 2), ms.end());
        double med = ms[ms.size() / 2];
        if (ms.size() % 2 == 0) {
          const double lower = *std::max_element(ms.begin(), ms.begin() + static_cast<long>(ms.size() / 2));
          med = 0.5 * (med + lower);
        }
        pt.median_ms = med;
      }
      if (progress)
        *progress << to_string(st) << " size=" << size << " n=" << pt.n << ": "
                  << (pt.timed_out ? std::string("timeout") : format_number(pt.median_ms) + " ms") << '\n';
      out.push_back(pt);
    }
  }
  return out;
}

inline std::string runtime_csv(const std::vector<RuntimePoint>& pts) {
  std::ostringstream os;
  os << "strategy,n,k,median_ms,size,reps,status\n";
  for (const auto& p : pts)
    os << to_string(p.strategy) << ',' << p.n << ',' << p.k << ',' << format_number(p.median_ms) << ',' << p.size
       << ',' << p.reps << ',' << (p.timed_out ? "timeout" : "ok") << '\n';
  return os.str();
}

/// Least-squares slope of log y on log x.
inline double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("loglog_slope: need two or more points");
  const auto n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0 && y[i] > 0)) throw std::invalid_argument("loglog_slope: values must be positive");
    const double lx = std::log(x[i]), ly = std::log(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  const double den = n * sxx - sx * sx;
  if (den <= 0) throw std::invalid_argument("loglog_slope: x values are all equal");
  return (n * sxy - sx * sy) / den;
}

}  // namespace dfmdp
