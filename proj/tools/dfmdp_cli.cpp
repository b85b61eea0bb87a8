// dfmdp: dataset generation, training runs, sweeps, result tables and the
// runtime-scaling benchmark.
#include "dfmdp/experiment.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>

using namespace dfmdp;
namespace fs = std::filesystem;

namespace {

const std::vector<std::string> kDomains{"gridworld", "snare", "tb"};
const std::vector<std::string> kRegimes{"random", "near_optimal"};
const std::vector<std::string> kSelections{"best_val", "last"};

std::vector<std::string> method_names() {
  std::vector<std::string> out;
  for (Method m : all_methods()) out.push_back(to_string(m));
  return out;
}

/// Hyperparameter flags shared by train and sweep; unset flags keep the
/// domain defaults (or the values of a frozen config).
struct TrainOverrides {
  std::optional<int> epochs, samples, eval_every, hidden, warm_steps, vi_iterations, ddqn_steps;
  std::optional<double> lr, reg, lambda_ess, c_magnitude;
  std::optional<bool> delta_terms;
  std::optional<std::string> selection;

  void add_to(CLI::App* app) {
    app->add_option("--epochs", epochs, "Training epochs")->check(CLI::PositiveNumber);
    app->add_option("--lr", lr, "Learning rate α")->check(CLI::NonNegativeNumber);
    app->add_option("--reg", reg, "Weight λ of the predictive loss")->check(CLI::NonNegativeNumber);
    app->add_option("--lambda-ess", lambda_ess, "ESS penalty λ_ESS in the OPE objective")
        ->check(CLI::NonNegativeNumber);
    app->add_option("--samples", samples, "Trajectories per backward pass (k)")->check(CLI::PositiveNumber);
    app->add_option("--c", c_magnitude, "Magnitude |c| of the Hessian approximation constant")
        ->check(CLI::PositiveNumber);
    app->add_option("--delta-terms", delta_terms, "Include δ-weighted Bellman terms (true/false)");
    app->add_option("--selection", selection, "Model selection rule")->check(CLI::IsMember(kSelections));
    app->add_option("--eval-every", eval_every, "Epochs between validation evaluations")
        ->check(CLI::PositiveNumber);
    app->add_option("--hidden", hidden, "Hidden width of the predictive network")->check(CLI::PositiveNumber);
    app->add_option("--warm-steps", warm_steps, "DDQN steps when warm-starting from the previous epoch (0: full)")
        ->check(CLI::NonNegativeNumber);
    app->add_option("--vi-iterations", vi_iterations, "Soft value iteration budget")->check(CLI::PositiveNumber);
    app->add_option("--ddqn-steps", ddqn_steps, "DDQN training steps")->check(CLI::PositiveNumber);
  }

  json to_json() const {
    json j = json::object();
    if (epochs) j["epochs"] = *epochs;
    if (lr) j["lr"] = *lr;
    if (reg) j["reg"] = *reg;
    if (lambda_ess) j["lambda_ess"] = *lambda_ess;
    if (samples) j["samples"] = *samples;
    if (c_magnitude) j["c_magnitude"] = *c_magnitude;
    if (delta_terms) j["delta_terms"] = *delta_terms;
    if (selection) j["selection"] = *selection;
    if (eval_every) j["eval_every"] = *eval_every;
    if (hidden) j["hidden"] = *hidden;
    json solver = json::object();
    if (warm_steps) solver["warm_steps"] = *warm_steps;
    if (vi_iterations) solver["vi_iterations"] = *vi_iterations;
    if (ddqn_steps) solver["ddqn"] = {{"train_steps", *ddqn_steps}};
    if (!solver.empty()) j["solver"] = solver;
    return j;
  }
};

/// Environment and split flags shared by generate and sweep.
struct DataFlags {
  std::string domain = "gridworld";
  std::string regime = "random";
  DatasetOptions opt;
  std::optional<int> grid_size, horizon;
  std::optional<double> reward_noise;

  void add_to(CLI::App* app) {
    app->add_option("--domain", domain, "Environment")->check(CLI::IsMember(kDomains))->capture_default_str();
    app->add_option("--regime", regime, "Behavior policy of the logged trajectories")
        ->check(CLI::IsMember(kRegimes))
        ->capture_default_str();
    app->add_option("--train", opt.train, "Training instances")->check(CLI::NonNegativeNumber)->capture_default_str();
    app->add_option("--val", opt.val, "Validation instances")->check(CLI::NonNegativeNumber)->capture_default_str();
    app->add_option("--test", opt.test, "Test instances")->check(CLI::NonNegativeNumber)->capture_default_str();
    app->add_option("--trajectories", opt.trajectories, "Logged trajectories per instance")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    app->add_option("--noise", opt.noise_scale, "Feature noise scale")
        ->check(CLI::NonNegativeNumber)
        ->capture_default_str();
    app->add_option("--grid-size", grid_size, "Gridworld side length")->check(CLI::Range(2, 64));
    app->add_option("--horizon", horizon, "Episode horizon")->check(CLI::PositiveNumber);
    app->add_option("--reward-noise", reward_noise, "Std of gridworld logged-reward noise")
        ->check(CLI::NonNegativeNumber);
  }

  EnvConfig env() const {
    EnvConfig e;
    if (grid_size) e.grid_size = *grid_size;
    if (reward_noise) e.grid_reward_noise = *reward_noise;
    if (horizon) {
      e.grid_horizon = *horizon;
      e.snare_horizon = *horizon;
      e.tb_horizon = *horizon;
    }
    return e;
  }
};

void require_absent(const std::string& path, bool force) {
  if (fs::exists(path) && !force) throw std::runtime_error("'" + path + "' exists; pass --force to overwrite");
}

void ensure_parent(const std::string& path) {
  const auto parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

void emit(const std::string& out, const std::string& text) {
  if (out.empty() || out == "-") {
    std::cout << text;
  } else {
    ensure_parent(out);
    write_file(out, text);
  }
}

int cmd_generate(const DataFlags& f, std::uint64_t seed, const std::string& out, bool force) {
  require_absent(out, force);
  const Domain domain = parse_domain(f.domain);
  const Regime regime = parse_regime(f.regime);
  const auto env = f.env();
  const auto ds = generate_dataset(domain, regime, seed, env, f.opt);
  ensure_parent(out);
  save_dataset(ds, out);
  auto cfg = generate_config_json(domain, regime, seed, env, f.opt);
  cfg["output"] = out;
  cfg["output_hash"] = content_hash(read_file(out));
  write_frozen_config(out, cfg);
  std::cerr << "wrote " << out << " (" << ds.size() << " instances)\n";
  return 0;
}

struct TrainFlags {
  std::string dataset, method, out, config;
  std::optional<std::uint64_t> seed;
  bool force = false, quiet = false;
  TrainOverrides overrides;
};

int cmd_train(const TrainFlags& f) {
  json frozen;
  std::string dataset_path = f.dataset;
  if (!f.config.empty()) {
    frozen = parse_document(read_file(f.config), f.config);
    if (!frozen.is_object() || frozen.value("command", "") != "train" || !frozen.contains("train"))
      throw MalformedFileError("'" + f.config + "' is not a frozen train config");
    if (dataset_path.empty()) dataset_path = frozen.at("dataset").get<std::string>();
  }
  if (dataset_path.empty()) throw CLI::RequiredError("--dataset");
  const std::string text = read_file(dataset_path);
  const Dataset ds = dataset_from_string(text);
  const std::string hash = content_hash(text);
  if (frozen.contains("dataset_hash") && frozen.at("dataset_hash").get<std::string>() != hash)
    std::cerr << "warning: dataset content differs from the frozen config's hash\n";

  auto cfg = default_train_config(ds.domain, ds.config);
  if (!frozen.is_null()) cfg = train_config_from_json(frozen.at("train"), cfg);
  cfg = train_config_from_json(f.overrides.to_json(), cfg);
  if (!f.method.empty()) cfg.method = parse_method(f.method);
  else if (frozen.is_null()) throw CLI::RequiredError("--method");
  if (f.seed) cfg.seed = *f.seed;
  cfg.validate();
  if (!f.quiet) cfg.progress = &std::cerr;

  require_absent((fs::path(f.out) / "result.json").string(), f.force);
  const auto outcome = run_experiment(ds, cfg);
  const auto record = write_run(f.out, ds, cfg, outcome, dataset_path, hash);
  std::cerr << to_string(cfg.method) << ": chosen epoch " << record.chosen_epoch << ", test OPE " << record.test_mean
            << " ± " << record.test_stderr << " (" << outcome.train.log.skipped << " skipped steps)\n";
  return 0;
}

int cmd_table(const std::string& runs_dir, const std::string& out, const std::vector<std::string>& methods) {
  const auto runs = load_runs(runs_dir);
  if (runs.empty()) throw std::runtime_error("no result.json files under '" + runs_dir + "'");
  std::vector<Method> wanted;
  for (const auto& m : methods) wanted.push_back(parse_method(m));
  const auto cells = table_cells(runs, wanted);
  for (const auto& c : cells)
    if (c.missing)
      std::cerr << "warning: missing cell " << to_string(c.key.domain) << '/' << to_string(c.key.regime) << '/'
                << to_string(c.key.method) << " (lambda_ess " << c.key.lambda_ess << ", "
                << to_string(c.key.selection) << ")\n";
  emit(out, results_csv(cells));
  if (!out.empty() && out != "-")
    write_frozen_config(out, {{"command", "table"}, {"runs", runs_dir}, {"methods", methods}, {"n_runs", runs.size()}});
  return 0;
}

int cmd_runtime(const RuntimeSpec& spec, const std::string& out) {
  const auto points = run_runtime(spec, &std::cerr);
  emit(out, runtime_csv(points));
  if (!out.empty() && out != "-") write_frozen_config(out, to_json(spec));
  return 0;
}

int cmd_sweep(SweepSpec spec, const std::vector<std::string>& methods, const TrainOverrides& overrides,
              const DataFlags& data) {
  spec.domain = parse_domain(data.domain);
  spec.regime = parse_regime(data.regime);
  spec.env = data.env();
  spec.data = data.opt;
  for (const auto& m : methods) spec.methods.push_back(parse_method(m));
  spec.overrides = overrides.to_json();
  resolve_train_config(spec.domain, spec.env, spec.overrides);
  spec.threads = worker_threads();
  const auto result = run_sweep(spec, &std::cerr);
  std::cerr << result.runs.size() << " runs completed, " << result.failures.size() << " failed; table in "
            << (fs::path(spec.out_dir) / "sweep.csv").string() << '\n';
  return result.failures.empty() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Decision-focused model-based RL experiments"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("generate", "Generate a dataset of MDP instances and logged trajectories");
  DataFlags gen_data;
  std::uint64_t gen_seed = 0;
  std::string gen_out;
  bool gen_force = false;
  gen_data.add_to(gen);
  gen->add_option("--seed", gen_seed, "Dataset seed")->capture_default_str();
  gen->add_option("--out", gen_out, "Output dataset file")->required();
  gen->add_flag("--force", gen_force, "Overwrite an existing output");

  auto* tr = app.add_subcommand("train", "Train one method on a dataset and evaluate it on the test split");
  TrainFlags tf;
  tr->add_option("--dataset", tf.dataset, "Dataset file");
  tr->add_option("--method", tf.method, "Training method")->check(CLI::IsMember(method_names()));
  tr->add_option("--seed", tf.seed, "Training seed");
  tr->add_option("--out", tf.out, "Run directory")->required();
  tr->add_option("--config", tf.config, "Re-run from a frozen config.json");
  tr->add_flag("--force", tf.force, "Overwrite an existing run");
  tr->add_flag("--quiet", tf.quiet, "No per-epoch progress");
  tf.overrides.add_to(tr);

  auto* tab = app.add_subcommand("table", "Aggregate run directories into a results CSV");
  std::string tab_runs, tab_out;
  std::vector<std::string> tab_methods = method_names();
  tab->add_option("--runs", tab_runs, "Directory searched recursively for result.json")->required();
  tab->add_option("--out", tab_out, "Output CSV (default: stdout)");
  tab->add_option("--methods", tab_methods, "Methods expected in every group")
      ->check(CLI::IsMember(method_names()))
      ->delimiter(',');

  auto* rt = app.add_subcommand("runtime", "Backward-pass runtime versus policy size");
  RuntimeSpec rs;
  std::string rt_domain = "gridworld", rt_mode = "pg", rt_out;
  std::vector<std::string> rt_strategies{"identity", "woodbury", "full"};
  rt->add_option("--domain", rt_domain, "gridworld (sizes are grid sides) or snare (sizes are hidden widths)")
      ->check(CLI::IsMember({"gridworld", "snare"}))
      ->capture_default_str();
  rt->add_option("--strategy", rt_strategies, "Hessian strategies")
      ->check(CLI::IsMember({"identity", "woodbury", "full"}))
      ->delimiter(',');
  rt->add_option("--sizes", rs.sizes, "Policy sizes")->required()->delimiter(',')->check(CLI::PositiveNumber);
  rt->add_option("--samples", rs.samples, "Sampled trajectories k")->check(CLI::PositiveNumber)->capture_default_str();
  rt->add_option("--reps", rs.reps, "Timed repetitions after one warm-up")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  rt->add_option("--timeout", rs.timeout_s, "Seconds per point")->check(CLI::PositiveNumber)->capture_default_str();
  rt->add_option("--mode", rt_mode, "Optimality condition")->check(CLI::IsMember({"pg", "bellman"}))
      ->capture_default_str();
  rt->add_option("--seed", rs.seed, "Seed of the random policies")->capture_default_str();
  rt->add_option("--out", rt_out, "Output CSV (default: stdout)");

  auto* sw = app.add_subcommand("sweep", "Generate datasets and train every (method, reg, seed) combination");
  SweepSpec ss;
  DataFlags sw_data;
  TrainOverrides sw_over;
  std::vector<std::string> sw_methods = method_names();
  ss.seeds = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  sw_data.add_to(sw);
  sw->add_option("--seeds", ss.seeds, "Seeds (dataset and training)")->delimiter(',');
  sw->add_option("--methods", sw_methods, "Methods")->check(CLI::IsMember(method_names()))->delimiter(',');
  sw->add_option("--regs,--lambdas", ss.regs, "Values of the predictive-loss weight λ")
      ->delimiter(',')
      ->check(CLI::NonNegativeNumber);
  sw->add_option("--out", ss.out_dir, "Output directory")->required();
  sw_over.add_to(sw);
  sw->get_option("--reg")->excludes("--regs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*gen) return cmd_generate(gen_data, gen_seed, gen_out, gen_force);
    if (*tr) return cmd_train(tf);
    if (*tab) return cmd_table(tab_runs, tab_out, tab_methods);
    if (*rt) {
      rs.domain = parse_domain(rt_domain);
      rs.mode = rt_mode == "pg" ? Mode::pg : Mode::bellman;
      rs.strategies.clear();
      for (const auto& s : rt_strategies) rs.strategies.push_back(parse_strategy(s));
      return cmd_runtime(rs, rt_out);
    }
    if (*sw) {
      if (sw_over.reg) ss.regs = {*sw_over.reg};
      return cmd_sweep(ss, sw_methods, sw_over, sw_data);
    }
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const TruncatedFileError& e) {
    std::cerr << "error: truncated file: " << e.what() << '\n';
  } catch (const VersionMismatchError& e) {
    std::cerr << "error: unsupported format version: " << e.what() << '\n';
  } catch (const MalformedFileError& e) {
    std::cerr << "error: malformed file: " << e.what() << '\n';
  } catch (const InvariantViolationError& e) {
    std::cerr << "error: invalid data: " << e.what() << '\n';
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
  }
  return 1;
}
