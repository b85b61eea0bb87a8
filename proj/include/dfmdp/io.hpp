// Versioned text formats: "dfmdp-dataset/1" datasets and "dfmdp-model/1"
// checkpoints, both JSON trees with decimal float arrays.
#pragma once

#include "dfmdp/predictive_model.hpp"
#include "dfmdp/soft_vi.hpp"
#include "dfmdp/types.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

namespace dfmdp {

using json = nlohmann::json;

inline constexpr const char* kDatasetFormat = "dfmdp-dataset/1";
inline constexpr const char* kModelFormat = "dfmdp-model/1";

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class VersionMismatchError : public FormatError {
 public:
  using FormatError::FormatError;
};
class TruncatedFileError : public FormatError {
 public:
  using FormatError::FormatError;
};
class MalformedFileError : public FormatError {
 public:
  using FormatError::FormatError;
};
class InvariantViolationError : public FormatError {
 public:
  using FormatError::FormatError;
};

// ---------------------------------------------------------------------------
// Value encoders

inline json to_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline Vector vector_from_json(const json& j) {
  const auto vals = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(vals.data(), static_cast<Eigen::Index>(vals.size()));
}

/// Matrices are stored row-major with their shape.
inline json to_json(const Matrix& m) {
  std::vector<double> vals;
  vals.reserve(m.size());
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) vals.push_back(m(r, c));
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", vals}};
}

inline Matrix matrix_from_json(const json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto vals = j.at("data").get<std::vector<double>>();
  if (rows < 0 || cols < 0 || static_cast<Eigen::Index>(vals.size()) != rows * cols)
    throw MalformedFileError("matrix shape does not match its data");
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = vals[static_cast<std::size_t>(r * cols + c)];
  return m;
}

inline json to_json(const EnvConfig& c) {
  return {{"gamma", c.gamma},
          {"grid_size", c.grid_size},
          {"grid_horizon", c.grid_horizon},
          {"cliff_fraction", c.cliff_fraction},
          {"grid_reward_noise", c.grid_reward_noise},
          {"snare_sites", c.snare_sites},
          {"snare_high_risk", c.snare_high_risk},
          {"snare_horizon", c.snare_horizon},
          {"snare_clip_lo", c.snare_clip_lo},
          {"snare_clip_hi", c.snare_clip_hi},
          {"snare_removal_success", c.snare_removal_success},
          {"tb_patients", c.tb_patients},
          {"tb_horizon", c.tb_horizon},
          {"tb_effect_hi", c.tb_effect_hi},
          {"tb_clip_lo", c.tb_clip_lo},
          {"tb_clip_hi", c.tb_clip_hi},
          {"tb_adhere_lo", c.tb_adhere_lo},
          {"tb_adhere_hi", c.tb_adhere_hi},
          {"tb_lapse_lo", c.tb_lapse_lo},
          {"tb_lapse_hi", c.tb_lapse_hi}};
}

/// Missing keys keep their defaults so configs can be written partially.
inline EnvConfig env_config_from_json(const json& j) {
  EnvConfig c;
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
  };
  get("gamma", c.gamma);
  get("grid_size", c.grid_size);
  get("grid_horizon", c.grid_horizon);
  get("cliff_fraction", c.cliff_fraction);
  get("grid_reward_noise", c.grid_reward_noise);
  get("snare_sites", c.snare_sites);
  get("snare_high_risk", c.snare_high_risk);
  get("snare_horizon", c.snare_horizon);
  get("snare_clip_lo", c.snare_clip_lo);
  get("snare_clip_hi", c.snare_clip_hi);
  get("snare_removal_success", c.snare_removal_success);
  get("tb_patients", c.tb_patients);
  get("tb_horizon", c.tb_horizon);
  get("tb_effect_hi", c.tb_effect_hi);
  get("tb_clip_lo", c.tb_clip_lo);
  get("tb_clip_hi", c.tb_clip_hi);
  get("tb_adhere_lo", c.tb_adhere_lo);
  get("tb_adhere_hi", c.tb_adhere_hi);
  get("tb_lapse_lo", c.tb_lapse_lo);
  get("tb_lapse_hi", c.tb_lapse_hi);
  return c;
}

inline json to_json(const Trajectory& tr) {
  json steps = json::array();
  for (const auto& s : tr.steps) {
    json events = json::array();
    for (const auto& e : s.events)
      events.push_back({e.entity, e.outcome, e.param_index, e.kind == EventKind::bernoulli ? "b" : "c"});
    steps.push_back({{"state", s.state},
                     {"action", s.action},
                     {"reward", s.reward},
                     {"behavior_prob", s.behavior_prob},
                     {"reward_param", s.reward_param},
                     {"observation", s.observation},
                     {"latent", s.latent},
                     {"events", events}});
  }
  return {{"steps", steps}, {"final_state", tr.final_state}, {"final_latent", tr.final_latent}};
}

inline Trajectory trajectory_from_json(const json& j) {
  Trajectory tr;
  for (const auto& js : j.at("steps")) {
    Step s;
    s.state = js.at("state").get<std::vector<double>>();
    s.action = js.at("action").get<int>();
    s.reward = js.at("reward").get<double>();
    s.behavior_prob = js.at("behavior_prob").get<double>();
    s.reward_param = js.at("reward_param").get<int>();
    s.observation = js.at("observation").get<int>();
    s.latent = js.at("latent").get<std::vector<int>>();
    for (const auto& je : js.at("events")) {
      const auto kind = je.at(3).get<std::string>();
      if (kind != "b" && kind != "c") throw MalformedFileError("unknown event kind '" + kind + "'");
      s.events.push_back({je.at(0).get<int>(), je.at(1).get<int>(), je.at(2).get<int>(),
                          kind == "b" ? EventKind::bernoulli : EventKind::categorical});
    }
    tr.steps.push_back(std::move(s));
  }
  tr.final_state = j.at("final_state").get<std::vector<double>>();
  tr.final_latent = j.at("final_latent").get<std::vector<int>>();
  return tr;
}

// ---------------------------------------------------------------------------
// Parsing with error categories

/// Parses text, classifying failures: input that ends early is truncated,
/// anything else is malformed.
inline json parse_document(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    if (e.byte > text.size()) throw TruncatedFileError(what + ": unexpected end of input");
    throw MalformedFileError(what + ": " + e.what());
  }
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw std::runtime_error("failed writing '" + path + "'");
}

inline void check_format(const json& doc, const char* expected) {
  if (!doc.is_object() || !doc.contains("format")) throw MalformedFileError("document has no format field");
  const auto f = doc.at("format").get<std::string>();
  if (f != expected)
    throw VersionMismatchError("format '" + f + "' is not the supported '" + std::string(expected) + "'");
}

// ---------------------------------------------------------------------------
// Datasets

inline json dataset_to_json(const Dataset& ds) {
  json instances = json::array();
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& e = ds.entries()[i];
    json trajs = json::array();
    for (const auto& tr : e.trajectories) trajs.push_back(to_json(tr));
    instances.push_back({{"seed", e.instance.seed},
                         {"split", to_string(e.split)},
                         {"true_params", to_json(e.instance.true_params)},
                         {"features", to_json(e.instance.features)},
                         {"cliffs", e.instance.cliffs},
                         {"high_risk", e.instance.high_risk},
                         {"trajectories", trajs}});
  }
  return {{"format", kDatasetFormat},
          {"domain", to_string(ds.domain)},
          {"regime", to_string(ds.regime)},
          {"seed", ds.seed},
          {"feature_seed", ds.feature_seed},
          {"noise_scale", ds.noise_scale},
          {"config", to_json(ds.config)},
          {"instances", instances}};
}

/// Throws InvariantViolationError when loaded values break the data model.
inline void validate_dataset(const Dataset& ds) {
  const auto& cfg = ds.config;
  const int n_params = cfg.num_params(ds.domain);
  const int entities = cfg.entities(ds.domain);
  const int horizon = cfg.horizon(ds.domain);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& e = ds.entries()[i];
    const std::string where = "instance " + std::to_string(i);
    const Vector& th = e.instance.true_params;
    if (th.size() != n_params) throw InvariantViolationError(where + ": wrong parameter count");
    if (!th.allFinite()) throw InvariantViolationError(where + ": non-finite parameter");
    if (ds.domain != Domain::gridworld)
      for (Eigen::Index k = 0; k < th.size(); ++k)
        if (th[k] < 0.0 || th[k] > 1.0)
          throw InvariantViolationError(where + ": probability " + std::to_string(th[k]) + " outside [0, 1]");
    if (ds.domain == Domain::tb)
      for (Eigen::Index k = 0; k < th.size(); k += 2)
        if (std::abs(th[k] + th[k + 1] - 1.0) > 1e-9)
          throw InvariantViolationError(where + ": transition row does not sum to 1");
    if (e.instance.features.rows() != entities || e.instance.features.cols() != kFeatureDim)
      throw InvariantViolationError(where + ": feature matrix shape mismatch");
    for (std::size_t t = 0; t < e.trajectories.size(); ++t) {
      const auto& tr = e.trajectories[t];
      if (tr.horizon() != horizon)
        throw InvariantViolationError(where + ", trajectory " + std::to_string(t) + ": length != horizon");
      for (const auto& s : tr.steps)
        if (!(s.behavior_prob > 0.0 && s.behavior_prob <= 1.0))
          throw InvariantViolationError(where + ", trajectory " + std::to_string(t) +
                                        ": behavior probability outside (0, 1]");
    }
  }
}

inline Dataset dataset_from_json(const json& doc) {
  check_format(doc, kDatasetFormat);
  Dataset ds;
  try {
    ds.domain = parse_domain(doc.at("domain").get<std::string>());
    ds.regime = parse_regime(doc.at("regime").get<std::string>());
    ds.seed = doc.at("seed").get<std::uint64_t>();
    ds.feature_seed = doc.at("feature_seed").get<std::uint64_t>();
    ds.noise_scale = doc.at("noise_scale").get<double>();
    ds.config = env_config_from_json(doc.at("config"));
    for (const auto& ji : doc.at("instances")) {
      DatasetEntry e;
      e.instance.domain = ds.domain;
      e.instance.config = ds.config;
      e.instance.seed = ji.at("seed").get<std::uint64_t>();
      e.split = parse_split(ji.at("split").get<std::string>());
      e.instance.true_params = vector_from_json(ji.at("true_params"));
      e.instance.features = matrix_from_json(ji.at("features"));
      e.instance.cliffs = ji.at("cliffs").get<std::vector<int>>();
      e.instance.high_risk = ji.at("high_risk").get<std::vector<int>>();
      for (const auto& jt : ji.at("trajectories")) e.trajectories.push_back(trajectory_from_json(jt));
      ds.entries().push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    throw MalformedFileError(std::string("dataset: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw MalformedFileError(std::string("dataset: ") + e.what());
  }
  validate_dataset(ds);
  return ds;
}

inline std::string dataset_to_string(const Dataset& ds) { return dataset_to_json(ds).dump() + "\n"; }

inline Dataset dataset_from_string(const std::string& text) {
  return dataset_from_json(parse_document(text, "dataset"));
}

inline void save_dataset(const Dataset& ds, const std::string& path) { write_file(path, dataset_to_string(ds)); }
inline Dataset load_dataset(const std::string& path) { return dataset_from_string(read_file(path)); }

// ---------------------------------------------------------------------------
// Checkpoints

inline json segments_to_json(const ad::ParamVector& p) {
  json segs = json::array();
  for (const auto& s : p.segments())
    segs.push_back({{"name", s.name}, {"value", to_json(Matrix(p.matrix(s.name)))}});
  return segs;
}

inline ad::ParamVector segments_from_json(const json& j) {
  ad::ParamVector p;
  for (const auto& s : j) p.add_segment(s.at("name").get<std::string>(), matrix_from_json(s.at("value")));
  if (!p.values().allFinite()) throw InvariantViolationError("checkpoint holds non-finite weights");
  return p;
}

inline json shape_to_json(const MlpShape& s) {
  return {{"input", s.input}, {"hidden", s.hidden}, {"output", s.output}};
}

inline MlpShape shape_from_json(const json& j) {
  return MlpShape{j.at("input").get<int>(), j.at("hidden").get<std::vector<int>>(), j.at("output").get<int>()};
}

inline json model_to_json(const PredictiveModel& m) {
  return {{"format", kModelFormat},
          {"kind", "predictive"},
          {"domain", to_string(m.domain)},
          {"head", to_string(m.head)},
          {"shape", shape_to_json(m.shape)},
          {"segments", segments_to_json(m.weights)}};
}

inline PredictiveModel model_from_json(const json& doc) {
  check_format(doc, kModelFormat);
  PredictiveModel m;
  try {
    if (doc.at("kind").get<std::string>() != "predictive")
      throw MalformedFileError("checkpoint does not hold a predictive model");
    m.domain = parse_domain(doc.at("domain").get<std::string>());
    m.head = parse_head(doc.at("head").get<std::string>());
    m.shape = shape_from_json(doc.at("shape"));
    m.weights = segments_from_json(doc.at("segments"));
  } catch (const json::exception& e) {
    throw MalformedFileError(std::string("model: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw MalformedFileError(std::string("model: ") + e.what());
  }
  if (m.weights.size() != zero_mlp(m.shape).size())
    throw InvariantViolationError("checkpoint weights do not match the declared shape");
  return m;
}

inline json solve_result_to_json(const SolveResult& r, Domain domain) {
  json j = {{"format", kModelFormat},
            {"kind", "policy"},
            {"domain", to_string(domain)},
            {"q_kind", r.q.kind() == QKind::tabular ? "tabular" : "mlp"},
            {"beta", r.beta},
            {"iterations", r.iterations},
            {"residual", r.residual},
            {"segments", segments_to_json(r.q.params())}};
  if (r.q.kind() == QKind::mlp) j["shape"] = shape_to_json(r.q.shape());
  return j;
}

inline SolveResult solve_result_from_json(const json& doc) {
  check_format(doc, kModelFormat);
  SolveResult r;
  try {
    if (doc.at("kind").get<std::string>() != "policy")
      throw MalformedFileError("checkpoint does not hold a policy");
    r.beta = doc.at("beta").get<double>();
    r.iterations = doc.at("iterations").get<int>();
    r.residual = doc.at("residual").get<double>();
    auto params = segments_from_json(doc.at("segments"));
    if (doc.at("q_kind").get<std::string>() == "tabular")
      r.q = QFunction::tabular(params.matrix("Q"));
    else
      r.q = QFunction::mlp(shape_from_json(doc.at("shape")), std::move(params));
  } catch (const json::exception& e) {
    throw MalformedFileError(std::string("policy: ") + e.what());
  }
  if (!(r.beta > 0.0)) throw InvariantViolationError("policy temperature must be positive");
  return r;
}

inline void save_model(const PredictiveModel& m, const std::string& path) {
  write_file(path, model_to_json(m).dump(2) + "\n");
}
inline PredictiveModel load_model(const std::string& path) {
  return model_from_json(parse_document(read_file(path), "model"));
}

}  // namespace dfmdp
