#pragma once

// Experiment runner behind the command-line tool: config parsing, data
// construction, the simulated MLR run plus baselines, and the artifacts.
//
// Artifacts written to the output directory:
//   predictions.csv  day,date,node,model,predicted,raw,observed,error,flagged
//   reports.json     one EvalReport per model, the evaluation span, calibration stats
//   simulation.log   the network log(s), see sim::write_log
//   plot.csv         day,date,node,observed,<one column per model>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "solarmlr/baselines.hpp"
#include "solarmlr/dataio.hpp"
#include "solarmlr/features.hpp"
#include "solarmlr/metrics.hpp"
#include "solarmlr/predictor.hpp"
#include "solarmlr/simnet.hpp"

namespace solarmlr::cli {

using nlohmann::json;

struct DataConfig {
  std::optional<std::string> csv;
  SyntheticConfig synthetic;
  bool synthetic_seed_set = false;
  std::size_t min_samples_per_day = kMinSamplesPerDay;
  std::int64_t day_offset_seconds = 0;
};

struct FeatureConfig {
  NodeId target = 0;
  std::size_t self_lags = 2;
  std::size_t neighbor_lags = 1;                   // for every other node, unless `neighbors` is given
  std::optional<std::vector<NeighborLags>> neighbors;
  std::vector<EnvLags> env;
  bool use_error = true;
  bool use_derivative = false;
  std::size_t lead = 2;
  std::size_t train_window = 42;
  std::size_t recal_window = 7;
};

struct RecalConfig {
  RecalPolicy::Kind policy = RecalPolicy::Kind::Periodic;
  std::optional<std::size_t> period;  // defaults to features.recal_window
  double threshold = std::numeric_limits<double>::infinity();
  std::size_t min_new_days = 4;
};

struct BaselineConfig {
  bool persistence = true;
  bool ewma = true;
  double ewma_alpha = kDefaultEwmaAlpha;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::string output_dir = "out";
  DataConfig data;
  PredictionMode mode = PredictionMode::SharedSingle;
  FeatureConfig features;
  RecalConfig recalibration;
  std::size_t ticks_per_day = 96;
  sim::NetworkConfig network;
  bool network_seed_set = false;
  sim::FaultPlan faults;
  BaselineConfig baselines;
  bool exclude_flagged = true;

  /// Seed used for synthetic data and the network unless set explicitly.
  void apply_seed(std::uint64_t s) {
    seed = s;
    if (!data.synthetic_seed_set) data.synthetic.seed = s;
    if (!network_seed_set) network.seed = s;
  }
};

// --- config parsing --------------------------------------------------------------

namespace detail {

[[noreturn]] inline void invalid(const std::string& field, const std::string& why) {
  throw Error(ErrorCode::Validation, field + ": " + why);
}

/// Reads fields out of one JSON object and rejects keys nobody asked for.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) invalid(path_.empty() ? "config" : path_, "expected an object");
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json* find(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end() || it->is_null()) return nullptr;
    return &*it;
  }

  template <class T>
  bool get(const std::string& key, T& out) {
    const json* v = find(key);
    if (!v) return false;
    out = convert<T>(*v, field(key));
    return true;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.contains(it.key())) invalid(field(it.key()), "unknown field");
  }

  template <class T>
  static T convert(const json& v, const std::string& name) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) invalid(name, "expected true or false");
      return v.get<bool>();
    } else if constexpr (std::is_integral_v<T> && std::is_unsigned_v<T>) {
      if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0))
        invalid(name, "expected a non-negative integer");
      const auto u = v.get<std::uint64_t>();
      if (u > std::numeric_limits<T>::max()) invalid(name, "value out of range");
      return static_cast<T>(u);
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) invalid(name, "expected an integer");
      return v.get<T>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) invalid(name, "expected a number");
      return v.get<T>();
    } else {
      if (!v.is_string()) invalid(name, "expected a string");
      return v.get<std::string>();
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline std::optional<sim::MessageKind> message_kind_from(const std::string& s) {
  using K = sim::MessageKind;
  for (K k : {K::LoadData, K::QColumn, K::RTransfer, K::QtbTransfer, K::Coefficients, K::PredictShare, K::Ack})
    if (sim::to_string(k) == s) return k;
  return std::nullopt;
}

inline sim::Fault parse_fault(const json& j, const std::string& path) {
  ObjectReader r(j, path);
  std::string type;
  if (!r.get("type", type)) invalid(r.field("type"), "required");
  sim::Fault fault;
  if (type == "drop_message") {
    sim::MessageMatcher m;
    std::string kind;
    if (r.get("kind", kind)) {
      m.kind = message_kind_from(kind);
      if (!m.kind) invalid(r.field("kind"), "unknown message kind '" + kind + "'");
    }
    NodeId node = 0;
    std::size_t value = 0;
    if (r.get("from", node)) m.from = node;
    if (r.get("to", node)) m.to = node;
    if (r.get("round", value)) m.round = value;
    if (r.get("column", value)) m.column = value;
    fault = sim::DropMessage{m};
  } else if (type == "node_offline") {
    sim::NodeOffline off;
    if (!r.get("node", off.node)) invalid(r.field("node"), "required");
    if (!r.get("from_tick", off.from_tick)) invalid(r.field("from_tick"), "required");
    if (!r.get("to_tick", off.to_tick)) invalid(r.field("to_tick"), "required");
    if (off.to_tick <= off.from_tick) invalid(r.field("to_tick"), "must be greater than from_tick");
    fault = off;
  } else if (type == "zero_first_column" || type == "zero_coefficients" || type == "reorder_columns") {
    std::size_t round = 0;
    if (!r.get("round", round) || round == 0) invalid(r.field("round"), "required, >= 1");
    if (type == "zero_first_column") fault = sim::ZeroFirstColumn{round};
    else if (type == "zero_coefficients") fault = sim::ZeroCoefficients{round};
    else fault = sim::ReorderColumns{round};
  } else {
    invalid(r.field("type"), "unknown fault type '" + type + "'");
  }
  r.finish();
  return fault;
}

inline void parse_synthetic(const json& j, const std::string& path, SyntheticConfig& s, bool* seed_set) {
  ObjectReader r(j, path);
  r.get("days", s.days);
  r.get("nodes", s.nodes);
  r.get("base", s.base);
  r.get("seasonal_amplitude", s.seasonal_amplitude);
  r.get("seasonal_period", s.seasonal_period);
  r.get("seasonal_phase", s.seasonal_phase);
  r.get("cloud_ar", s.cloud_ar);
  r.get("cloud_scale", s.cloud_scale);
  r.get("noise_scale", s.noise_scale);
  if (const json* sh = r.find("shading")) {
    if (!sh->is_array()) invalid(r.field("shading"), "expected an array");
    s.shading.clear();
    for (std::size_t i = 0; i < sh->size(); ++i)
      s.shading.push_back(ObjectReader::convert<double>((*sh)[i], r.field("shading") + "[" + std::to_string(i) + "]"));
  }
  r.get("coupling", s.coupling);
  const bool has_seed = r.get("seed", s.seed);
  if (seed_set) *seed_set = has_seed;
  r.get("start_date", s.start_date);
  r.get("samples_per_day", s.samples_per_day);
  r.finish();
}

}  // namespace detail

/// Synthetic generator config, either at the top level or under "synthetic".
inline SyntheticConfig parse_synthetic_config(const json& j) {
  SyntheticConfig s;
  if (j.is_object() && j.contains("synthetic") && j.size() == 1) {
    detail::parse_synthetic(j.at("synthetic"), "synthetic", s, nullptr);
  } else {
    detail::parse_synthetic(j, "synthetic", s, nullptr);
  }
  s.validate();
  return s;
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Parse, "cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::Parse, path + ": " + e.what());
  }
}

inline ExperimentConfig parse_experiment_config(const json& j) {
  using detail::invalid;
  using detail::ObjectReader;
  ExperimentConfig c;
  ObjectReader top(j, "");
  std::uint64_t seed = c.seed;
  top.get("seed", seed);
  top.get("output_dir", c.output_dir);

  if (const json* d = top.find("data")) {
    ObjectReader r(*d, "data");
    std::string csv;
    if (r.get("csv", csv)) c.data.csv = csv;
    if (const json* s = r.find("synthetic")) detail::parse_synthetic(*s, "data.synthetic", c.data.synthetic, &c.data.synthetic_seed_set);
    r.get("min_samples_per_day", c.data.min_samples_per_day);
    r.get("day_offset_seconds", c.data.day_offset_seconds);
    r.finish();
  }

  std::string mode;
  if (top.get("mode", mode)) {
    if (mode == "shared_single") c.mode = PredictionMode::SharedSingle;
    else if (mode == "per_node") c.mode = PredictionMode::PerNode;
    else invalid("mode", "expected shared_single or per_node, got '" + mode + "'");
  }

  if (const json* f = top.find("features")) {
    ObjectReader r(*f, "features");
    FeatureConfig& fc = c.features;
    r.get("target", fc.target);
    r.get("self_lags", fc.self_lags);
    r.get("neighbor_lags", fc.neighbor_lags);
    if (const json* nb = r.find("neighbors")) {
      if (!nb->is_array()) invalid("features.neighbors", "expected an array");
      fc.neighbors.emplace();
      for (std::size_t i = 0; i < nb->size(); ++i) {
        ObjectReader e((*nb)[i], "features.neighbors[" + std::to_string(i) + "]");
        NeighborLags n;
        if (!e.get("node", n.node)) invalid(e.field("node"), "required");
        e.get("lags", n.lags);
        e.finish();
        fc.neighbors->push_back(n);
      }
    }
    if (const json* env = r.find("env")) {
      if (!env->is_array()) invalid("features.env", "expected an array");
      for (std::size_t i = 0; i < env->size(); ++i) {
        ObjectReader e((*env)[i], "features.env[" + std::to_string(i) + "]");
        EnvLags el;
        if (!e.get("sensor", el.sensor)) invalid(e.field("sensor"), "required");
        if (!known_sensors().contains(el.sensor) || el.sensor == kSolarSensor)
          invalid(e.field("sensor"), "unknown sensor '" + el.sensor + "'");
        e.get("lags", el.lags);
        e.finish();
        fc.env.push_back(el);
      }
    }
    r.get("use_error", fc.use_error);
    r.get("use_derivative", fc.use_derivative);
    r.get("lead", fc.lead);
    r.get("train_window", fc.train_window);
    r.get("recal_window", fc.recal_window);
    r.finish();
  }

  if (const json* rc = top.find("recalibration")) {
    ObjectReader r(*rc, "recalibration");
    std::string policy;
    if (r.get("policy", policy)) {
      if (policy == "periodic") c.recalibration.policy = RecalPolicy::Kind::Periodic;
      else if (policy == "error_threshold") c.recalibration.policy = RecalPolicy::Kind::ErrorThreshold;
      else invalid("recalibration.policy", "expected periodic or error_threshold, got '" + policy + "'");
    }
    std::size_t period = 0;
    if (r.get("period", period)) c.recalibration.period = period;
    r.get("threshold", c.recalibration.threshold);
    r.get("min_new_days", c.recalibration.min_new_days);
    r.finish();
  }

  if (const json* s = top.find("schedule")) {
    ObjectReader r(*s, "schedule");
    r.get("ticks_per_day", c.ticks_per_day);
    r.finish();
  }

  if (const json* n = top.find("network")) {
    ObjectReader r(*n, "network");
    r.get("hop_delay", c.network.hop_delay);
    r.get("timeout_ticks", c.network.timeout_ticks);
    r.get("drop_probability", c.network.drop_probability);
    c.network_seed_set = r.get("seed", c.network.seed);
    r.finish();
  }

  if (const json* f = top.find("faults")) {
    if (!f->is_array()) invalid("faults", "expected an array");
    for (std::size_t i = 0; i < f->size(); ++i)
      c.faults.faults.push_back(detail::parse_fault((*f)[i], "faults[" + std::to_string(i) + "]"));
  }

  if (const json* b = top.find("baselines")) {
    ObjectReader r(*b, "baselines");
    r.get("persistence", c.baselines.persistence);
    r.get("ewma", c.baselines.ewma);
    r.get("ewma_alpha", c.baselines.ewma_alpha);
    r.finish();
  }

  if (const json* e = top.find("evaluation")) {
    ObjectReader r(*e, "evaluation");
    r.get("exclude_flagged", c.exclude_flagged);
    r.finish();
  }
  top.finish();
  c.apply_seed(seed);
  return c;
}

/// Checks that do not need the data.
inline void validate(const ExperimentConfig& c) {
  using detail::invalid;
  if (!c.data.csv) c.data.synthetic.validate();
  if (c.data.min_samples_per_day == 0) invalid("data.min_samples_per_day", "must be >= 1");
  if (c.ticks_per_day == 0) invalid("schedule.ticks_per_day", "must be >= 1");
  c.network.validate();
  if (!(c.baselines.ewma_alpha >= 0.0 && c.baselines.ewma_alpha <= 1.0)) invalid("baselines.ewma_alpha", "must be in [0, 1]");
  if (c.recalibration.period && *c.recalibration.period == 0) invalid("recalibration.period", "must be >= 1");
  if (c.recalibration.policy == RecalPolicy::Kind::ErrorThreshold && !(c.recalibration.threshold >= 0.0))
    invalid("recalibration.threshold", "must be >= 0");
  if (c.mode == PredictionMode::PerNode && c.features.neighbors)
    invalid("features.neighbors", "only valid in shared_single mode");
  if (c.features.neighbor_lags == 0) invalid("features.neighbor_lags", "must be >= 1");
}

// --- data -------------------------------------------------------------------------

inline DailyData load_data(const ExperimentConfig& c) {
  if (!c.data.csv) return DailyData::from_series(generate_synthetic(c.data.synthetic));
  const auto raw = load_csv(*c.data.csv);
  if (raw.empty()) throw Error(ErrorCode::Validation, "data.csv: " + *c.data.csv + " has no samples");
  std::vector<TimeSeries> daily;
  for (const auto& s : raw) daily.push_back(daily_average(s, c.data.min_samples_per_day, c.data.day_offset_seconds));
  return DailyData::from_series(daily);
}

inline std::vector<NodeId> solar_nodes(const DailyData& data) {
  std::vector<NodeId> out;
  for (const auto& k : data.keys())
    if (k.sensor == kSolarSensor) out.push_back(k.node);
  return out;
}

inline FeatureSpec spec_for(const ExperimentConfig& c, const DailyData& data, NodeId target) {
  const FeatureConfig& f = c.features;
  FeatureSpec s;
  s.target = target;
  s.self_lags = f.self_lags;
  s.env = f.env;
  s.use_error = f.use_error;
  s.use_derivative = f.use_derivative;
  s.lead = f.lead;
  s.train_window = f.train_window;
  s.recal_window = f.recal_window;
  if (f.neighbors && c.mode == PredictionMode::SharedSingle) {
    s.neighbors = *f.neighbors;
  } else {
    for (NodeId n : solar_nodes(data))
      if (n != target) s.neighbors.push_back({n, f.neighbor_lags});
  }
  if (!data.contains({target, kSolarSensor}))
    throw Error(ErrorCode::Validation, "features.target: no solar series for node " + std::to_string(target));
  for (const auto& nb : s.neighbors)
    if (!data.contains({nb.node, kSolarSensor}))
      throw Error(ErrorCode::Validation, "features.neighbors: no solar series for node " + std::to_string(nb.node));
  for (const auto& e : s.env)
    if (!data.contains({target, e.sensor}))
      throw Error(ErrorCode::Validation,
                  "features.env: no '" + e.sensor + "' series for node " + std::to_string(target));
  validate(s);
  return s;
}

// --- run --------------------------------------------------------------------------

struct PointPrediction {
  std::size_t made_on = 0;
  double predicted = 0.0;
  double raw = 0.0;
};

struct ModelSeries {
  std::string model;
  std::map<std::pair<NodeId, std::size_t>, PointPrediction> points;  // (node, target day)
  std::map<NodeId, Counters> counters;
};

struct ExperimentResult {
  std::vector<EvalReport> reports;
  std::vector<ModelSeries> series;
  std::vector<std::pair<NodeId, std::size_t>> eval_points;  // (node, day)
  std::vector<sim::SimulationLog> logs;
  std::vector<CoefficientHistoryEntry> history;
  std::size_t first_day = 0;
  std::size_t last_day = 0;
  std::shared_ptr<const DailyData> data;
};

/// Runs the configured experiment in memory.
inline ExperimentResult run_experiment(const ExperimentConfig& c) {
  validate(c);
  auto data_ptr = std::make_shared<const DailyData>(load_data(c));
  const DailyData& data = *data_ptr;
  std::vector<NodeId> targets;
  if (c.mode == PredictionMode::SharedSingle) targets.push_back(c.features.target);
  else targets = solar_nodes(data);

  NodeId max_node = 0;
  for (const auto& k : data.keys()) max_node = std::max(max_node, k.node);
  sim::NetworkConfig net_cfg = c.network;
  net_cfg.node_count = static_cast<std::size_t>(max_node) + 1;

  ExperimentResult result;
  result.data = data_ptr;
  ModelSeries mlr{"mlr", {}, {}};
  ModelSeries persistence{"persistence", {}, {}};
  ModelSeries ewma{"ewma", {}, {}};

  for (NodeId target : targets) {
    const FeatureSpec spec = spec_for(c, data, target);
    const RecalPolicy policy = c.recalibration.policy == RecalPolicy::Kind::Periodic
                                   ? RecalPolicy::periodic(c.recalibration.period.value_or(spec.recal_window))
                                   : RecalPolicy::error_threshold(c.recalibration.threshold, c.recalibration.min_new_days);
    sim::Network net(net_cfg, c.faults);
    Predictor predictor(spec, policy);

    Predictor::Calibrator calibrate = [&](const FeatureMatrix& fm,
                                          const FeatureSpec& s) -> std::optional<CoefficientVector> {
      const auto rec = net.calibrate(fm, owner_partition(s));
      if (!rec || !rec->succeeded() || !rec->coefficients) return std::nullopt;
      return CoefficientVector{*rec->coefficients, net.now(), rec->round_id};
    };
    Predictor::RowEvaluator evaluate_row = [&](const Vector& row, const CoefficientVector&,
                                               const FeatureSpec& s) -> std::optional<double> {
      return net.predict(row).at(s.target);
    };
    const auto loop = run_prediction_loop(data, predictor, calibrate, evaluate_row, 0, data.days() - 1,
                                          [&](std::size_t day) { net.advance_to(day * c.ticks_per_day); });

    // A skipped prediction keeps the previous one in force.
    std::optional<PointPrediction> last;
    for (const auto& e : loop) {
      if (e.predicted) last = PointPrediction{e.day, *e.predicted, *e.raw};
      if (last && e.target_day < data.days()) mlr.points[{target, e.target_day}] = *last;
    }
    for (std::size_t n = 0; n < net.log().counters.size(); ++n) mlr.counters[static_cast<NodeId>(n)] += net.log().counters[n];
    result.logs.push_back(net.log());
    for (auto h : predictor.history()) result.history.push_back(std::move(h));

    const SourceKey self{target, kSolarSensor};
    EwmaState state{c.baselines.ewma_alpha};
    Counters pc, ec;
    for (std::size_t day = 0; day + spec.lead < data.days(); ++day) {
      const double x = data.value(self, day);
      ops::Scope scope;
      const double p = persistence_predict(x);
      pc.flops += scope.count();
      persistence.points[{target, day + spec.lead}] = {day, p, p};
      ops::Scope escope;
      const double q = ewma_update(state, x);
      ec.flops += escope.count();
      ewma.points[{target, day + spec.lead}] = {day, q, q};
    }
    persistence.counters[target] += pc;
    ewma.counters[target] += ec;
  }

  // Evaluation points: every MLR target day with an observation (flagged days
  // optionally excluded); baselines are scored on the same points.
  for (const auto& [key, p] : mlr.points) {
    const auto [node, day] = key;
    if (c.exclude_flagged && data.flagged({node, kSolarSensor}, day)) continue;
    result.eval_points.push_back(key);
  }
  if (result.eval_points.size() < 2)
    throw Error(ErrorCode::InsufficientData, "fewer than 2 evaluation points; is the data long enough for the training window?");
  result.first_day = result.eval_points.front().second;
  result.last_day = result.eval_points.front().second;
  for (const auto& [node, day] : result.eval_points) {
    result.first_day = std::min(result.first_day, day);
    result.last_day = std::max(result.last_day, day);
  }

  result.series.push_back(std::move(mlr));
  if (c.baselines.persistence) result.series.push_back(std::move(persistence));
  if (c.baselines.ewma) result.series.push_back(std::move(ewma));

  for (const auto& s : result.series) {
    std::vector<double> pred, obs;
    for (const auto& key : result.eval_points) {
      pred.push_back(s.points.at(key).predicted);
      obs.push_back(data.value({key.first, kSolarSensor}, key.second));
    }
    EvalReport r = evaluate(pred, obs, s.model);
    r.first_day = result.first_day;
    r.last_day = result.last_day;
    for (const auto& [node, counters] : s.counters) {
      r.node_counters.emplace_back(node, counters);
      r.total += counters;
    }
    result.reports.push_back(std::move(r));
  }
  return result;
}

// --- artifacts ----------------------------------------------------------------------

/// first_day counts days since 1970-01-01; day is an index into the data.
inline std::string date_of(std::int64_t first_day, std::size_t day) {
  return format_timestamp((first_day + static_cast<std::int64_t>(day)) * kSecondsPerDay).substr(0, 10);
}

inline json to_json(const Counters& c) {
  return json{{"flops", c.flops},
              {"messages_sent", c.messages_sent},
              {"messages_received", c.messages_received},
              {"values_stored_peak", c.values_stored_peak}};
}

inline json to_json(const EvalReport& r, std::int64_t first_day) {
  json nodes = json::array();
  for (const auto& [node, c] : r.node_counters) {
    json n = to_json(c);
    n["node"] = node;
    nodes.push_back(n);
  }
  return json{{"model", r.model},
              {"rmse", r.rmse},
              {"max_abs_error", r.max_abs_error},
              {"mean_residual", r.mean_residual},
              {"ci95", r.ci95},
              {"n_points", r.n_points},
              {"first_day", r.first_day},
              {"last_day", r.last_day},
              {"first_date", date_of(first_day, r.first_day)},
              {"last_date", date_of(first_day, r.last_day)},
              {"counters", to_json(r.total)},
              {"node_counters", nodes}};
}


inline void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

struct Artifacts {
  std::filesystem::path predictions, reports, simulation_log, plot;
};

/// Writes the four artifacts; returns their paths.
inline Artifacts write_artifacts(const ExperimentConfig& c, const ExperimentResult& r,
                                 const std::filesystem::path& out_dir) {
  const DailyData& data = *r.data;
  const std::int64_t t0 = data.first_day();
  std::filesystem::create_directories(out_dir);
  Artifacts a{out_dir / "predictions.csv", out_dir / "reports.json", out_dir / "simulation.log", out_dir / "plot.csv"};

  std::ostringstream pred;
  pred << "day,date,node,model,predicted,raw,observed,error,flagged\n";
  for (const auto& s : r.series) {
    for (const auto& [key, p] : s.points) {
      const auto [node, day] = key;
      const double obs = data.value({node, kSolarSensor}, day);
      pred << day << ',' << date_of(t0, day) << ',' << node << ',' << s.model << ',' << format_value(p.predicted) << ','
           << format_value(p.raw) << ',' << format_value(obs) << ',' << format_value(p.predicted - obs) << ','
           << (data.flagged({node, kSolarSensor}, day) ? 1 : 0) << '\n';
    }
  }
  write_file(a.predictions, pred.str());

  json reports = json::array();
  for (const auto& rep : r.reports) reports.push_back(to_json(rep, t0));
  std::size_t attempts = 0, successes = 0;
  for (const auto& log : r.logs) {
    attempts += log.attempts();
    successes += log.successes();
  }
  json calib{{"attempts", attempts}, {"successes", successes}};
  calib["success_rate"] = attempts ? json(sim::success_rate(successes, attempts)) : json(nullptr);
  json history = json::array();
  for (const auto& h : r.history)
    history.push_back({{"day", h.day}, {"round", h.round_id}, {"stage", h.stage}, {"uses_error", h.uses_error},
                       {"weights", h.weights.values()}});
  const json doc{{"seed", c.seed},
                 {"mode", c.mode == PredictionMode::SharedSingle ? "shared_single" : "per_node"},
                 {"span", {{"first_day", r.first_day}, {"last_day", r.last_day}, {"first_date", date_of(t0, r.first_day)},
                           {"last_date", date_of(t0, r.last_day)}, {"n_points", r.eval_points.size()}}},
                 {"reports", reports},
                 {"calibration", calib},
                 {"coefficient_history", history}};
  write_file(a.reports, doc.dump(2) + "\n");

  std::ostringstream log;
  for (std::size_t k = 0; k < r.logs.size(); ++k) {
    if (r.logs.size() > 1) log << "# network " << k << '\n';
    sim::write_log(log, r.logs[k]);
  }
  write_file(a.simulation_log, log.str());

  std::ostringstream plot;
  plot << "day,date,node,observed";
  for (const auto& s : r.series) plot << ',' << s.model;
  plot << '\n';
  for (const auto& key : r.eval_points) {
    const auto [node, day] = key;
    plot << day << ',' << date_of(t0, day) << ',' << node << ',' << format_value(data.value({node, kSolarSensor}, day));
    for (const auto& s : r.series) plot << ',' << format_value(s.points.at(key).predicted);
    plot << '\n';
  }
  write_file(a.plot, plot.str());
  return a;
}

// --- compare ------------------------------------------------------------------------

struct ComparedReport {
  std::string source;
  EvalReport report;
  std::string first_date;
  std::string last_date;
};

/// Reads every model report from a reports file. A file may hold the full
/// experiment document or a bare report object / array.
inline std::vector<ComparedReport> read_reports(const std::string& path) {
  const json doc = read_json_file(path);
  const json* list = &doc;
  if (doc.is_object() && doc.contains("reports")) list = &doc.at("reports");
  std::vector<json> items;
  if (list->is_array()) items.assign(list->begin(), list->end());
  else items.push_back(*list);
  std::vector<ComparedReport> out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const std::string where = path + ": reports[" + std::to_string(i) + "]";
    try {
      const json& j = items[i];
      ComparedReport c;
      c.source = path;
      c.report.model = j.at("model").get<std::string>();
      c.report.rmse = j.at("rmse").get<double>();
      c.report.max_abs_error = j.value("max_abs_error", 0.0);
      c.report.mean_residual = j.value("mean_residual", 0.0);
      c.report.ci95 = j.value("ci95", 0.0);
      c.report.n_points = j.value("n_points", std::size_t{0});
      c.report.first_day = j.value("first_day", std::size_t{0});
      c.report.last_day = j.value("last_day", std::size_t{0});
      c.first_date = j.value("first_date", std::string());
      c.last_date = j.value("last_date", std::string());
      out.push_back(std::move(c));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::Validation, where + ": " + e.what());
    }
  }
  return out;
}

struct Improvement {
  std::string ours;
  std::string other;
  double rmse = 0.0;       // (other - ours) / other
  double max_error = 0.0;
};

struct Comparison {
  std::vector<EvalReport> reports;
  std::vector<Improvement> pairs;
};

inline Comparison compare(const std::vector<ComparedReport>& reports) {
  if (reports.size() < 2) throw Error(ErrorCode::Validation, "compare needs at least 2 reports");
  const auto& ref = reports.front();
  for (const auto& r : reports) {
    const bool same = r.first_date == ref.first_date && r.last_date == ref.last_date &&
                      r.report.first_day == ref.report.first_day && r.report.last_day == ref.report.last_day &&
                      r.report.n_points == ref.report.n_points;
    if (!same) {
      throw Error(ErrorCode::SpanMismatch, "report '" + r.report.model + "' (" + r.source +
                                               ") covers a different evaluation span than '" + ref.report.model + "'");
    }
  }
  // Model names repeat when several runs are compared; qualify them with the run
  // directory (or the file name) so every row stays identifiable.
  std::map<std::string, std::size_t> seen;
  for (const auto& r : reports) ++seen[r.report.model];
  Comparison c;
  for (const auto& r : reports) {
    c.reports.push_back(r.report);
    if (seen[r.report.model] > 1) {
      const std::filesystem::path p(r.source);
      std::string run = p.parent_path().filename().string();
      if (run.empty()) run = p.stem().string();
      c.reports.back().model = run + "/" + r.report.model;
    }
  }
  for (std::size_t a = 0; a < c.reports.size(); ++a)
    for (std::size_t b = 0; b < c.reports.size(); ++b) {
      if (a == b) continue;
      c.pairs.push_back({c.reports[a].model, c.reports[b].model, improvement(c.reports[a].rmse, c.reports[b].rmse),
                         improvement(c.reports[a].max_abs_error, c.reports[b].max_abs_error)});
    }
  return c;
}

inline std::string render(const Comparison& c) {
  std::ostringstream os;
  os << render_table(c.reports) << '\n';
  os << "Improvement (other - ours) / other\n";
  for (const auto& p : c.pairs)
    os << "  " << p.ours << " vs " << p.other << ": rmse " << percent(p.rmse) << ", max abs error "
       << percent(p.max_error) << '\n';
  return os.str();
}

// --- exit codes -----------------------------------------------------------------------

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitValidation = 2;

/// Config and input-data problems are validation errors; everything else is a
/// runtime failure.
inline int exit_code_for(const Error& e) {
  switch (e.code()) {
    case ErrorCode::Validation:
    case ErrorCode::Parse:
    case ErrorCode::SpanMismatch:
    case ErrorCode::MissingSeries:
    case ErrorCode::InsufficientData:
      return kExitValidation;
    default:
      return kExitRuntime;
  }
}

}  // namespace solarmlr::cli
