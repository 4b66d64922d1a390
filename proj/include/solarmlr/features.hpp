#pragma once

// Calibration matrix construction.
//
// A row is anchored at a base day t (the most recent day whose data it uses)
// and predicts the target node's solar value on day t + lead. Day indices are
// 0-based positions in a DailyData table.
//
// Column order, which is also the column-ownership order for distributed
// runs:
//   self solar lags 0..N-1      (target node)
//   derivative  s(t) - s(t-1)   (target node, optional)
//   prediction error e(t)       (target node, optional)
//   environmental lags          (target node, per sensor)
//   neighbor solar lags         (owning neighbor, per neighbor)
//
// "N past values" gives N columns at lags 0..N-1; lag 0 is the base day.

#include <algorithm>
#include <cmath>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "solarmlr/dataio.hpp"
#include "solarmlr/linalg.hpp"

namespace solarmlr {

inline constexpr const char* kSolarSensor = "solar";

struct NeighborLags {
  NodeId node = 0;
  std::size_t lags = 1;
};

struct EnvLags {
  std::string sensor;
  std::size_t lags = 1;
};

struct FeatureSpec {
  NodeId target = 0;
  std::size_t self_lags = 1;
  std::vector<NeighborLags> neighbors;
  std::vector<EnvLags> env;
  bool use_error = false;
  bool use_derivative = false;
  std::size_t lead = 2;          // days ahead
  std::size_t train_window = 7;  // days of history per calibration
  std::size_t recal_window = 7;  // days between periodic recalibrations

  /// Same spec without the error column (first bootstrap calibration).
  FeatureSpec without_error() const {
    FeatureSpec s = *this;
    s.use_error = false;
    return s;
  }
};

enum class FeatureKind { SelfLag, Derivative, Error, Env, Neighbor };

struct ColumnLabel {
  FeatureKind kind = FeatureKind::SelfLag;
  NodeId node = 0;
  std::string sensor;
  std::size_t lag = 0;

  std::string name() const {
    switch (kind) {
      case FeatureKind::SelfLag: return "self[t-" + std::to_string(lag) + "]";
      case FeatureKind::Derivative: return "derivative";
      case FeatureKind::Error: return "error";
      case FeatureKind::Env: return sensor + "[t-" + std::to_string(lag) + "]";
      case FeatureKind::Neighbor: return "node" + std::to_string(node) + "[t-" + std::to_string(lag) + "]";
    }
    return "?";
  }
  friend bool operator==(const ColumnLabel&, const ColumnLabel&) = default;
};

inline std::vector<ColumnLabel> column_labels(const FeatureSpec& spec) {
  std::vector<ColumnLabel> out;
  for (std::size_t k = 0; k < spec.self_lags; ++k) out.push_back({FeatureKind::SelfLag, spec.target, kSolarSensor, k});
  if (spec.use_derivative) out.push_back({FeatureKind::Derivative, spec.target, kSolarSensor, 0});
  if (spec.use_error) out.push_back({FeatureKind::Error, spec.target, "", 0});
  for (const auto& e : spec.env)
    for (std::size_t k = 0; k < e.lags; ++k) out.push_back({FeatureKind::Env, spec.target, e.sensor, k});
  for (const auto& nb : spec.neighbors)
    for (std::size_t k = 0; k < nb.lags; ++k) out.push_back({FeatureKind::Neighbor, nb.node, kSolarSensor, k});
  return out;
}

inline std::size_t column_count(const FeatureSpec& spec) { return column_labels(spec).size(); }

/// Oldest lag any column reaches back from the base day.
inline std::size_t max_lag(const FeatureSpec& spec) {
  std::size_t lag = spec.self_lags > 0 ? spec.self_lags - 1 : 0;
  if (spec.use_derivative) lag = std::max<std::size_t>(lag, 1);
  for (const auto& e : spec.env)
    if (e.lags > 0) lag = std::max(lag, e.lags - 1);
  for (const auto& nb : spec.neighbors)
    if (nb.lags > 0) lag = std::max(lag, nb.lags - 1);
  return lag;
}

/// Usable training rows per window: T_T - T_L - max_lag.
inline std::size_t training_rows(const FeatureSpec& spec) {
  const std::size_t used = spec.lead + max_lag(spec);
  return spec.train_window > used ? spec.train_window - used : 0;
}

inline void validate(const FeatureSpec& spec) {
  auto bad = [](const std::string& why) { throw Error(ErrorCode::Validation, "feature spec: " + why); };
  const std::size_t n = column_count(spec);
  if (n == 0) bad("needs at least one feature column");
  if (spec.lead == 0) bad("lead must be >= 1");
  if (spec.train_window <= spec.lead) bad("train_window must exceed lead");
  if (spec.recal_window == 0) bad("recal_window must be >= 1");
  std::set<NodeId> seen;
  for (const auto& nb : spec.neighbors) {
    if (nb.node == spec.target) bad("neighbor list contains the target node");
    if (!seen.insert(nb.node).second) bad("neighbor " + std::to_string(nb.node) + " listed twice");
    if (nb.lags == 0) bad("neighbor lag count must be >= 1");
  }
  std::set<std::string> sensors;
  for (const auto& e : spec.env) {
    if (!known_sensors().contains(e.sensor) || e.sensor == kSolarSensor) bad("unknown sensor '" + e.sensor + "'");
    if (!sensors.insert(e.sensor).second) bad("sensor '" + e.sensor + "' listed twice");
    if (e.lags == 0) bad("sensor lag count must be >= 1");
  }
  if (training_rows(spec) < n) {
    bad("train_window " + std::to_string(spec.train_window) + " yields " + std::to_string(training_rows(spec)) +
        " rows for " + std::to_string(n) + " columns");
  }
}

/// Column ownership: each column lives on the node that measures it.
inline ColumnPartition owner_partition(const FeatureSpec& spec) {
  std::vector<NodeId> owners;
  for (const auto& label : column_labels(spec)) owners.push_back(label.node);
  return ColumnPartition::from_owners(owners);
}

struct FeatureMatrix {
  Matrix x;
  Vector targets;
  std::vector<ColumnLabel> labels;
  std::size_t first_base_day = 0;  // base day of row 0
  std::size_t last_base_day = 0;
  std::size_t lead = 0;
};

namespace detail {

inline void fill_row(const DailyData& data, const FeatureSpec& spec, double error, std::size_t day,
                     std::span<double> row) {
  if (day < max_lag(spec) || day >= data.days()) {
    throw Error(ErrorCode::InsufficientData, "lags for day " + std::to_string(day) + " fall outside the data");
  }
  const SourceKey self{spec.target, kSolarSensor};
  std::size_t c = 0;
  for (std::size_t k = 0; k < spec.self_lags; ++k) row[c++] = data.value(self, day - k);
  if (spec.use_derivative) row[c++] = data.value(self, day) - data.value(self, day - 1);
  if (spec.use_error) row[c++] = error;
  for (const auto& e : spec.env) {
    const SourceKey key{spec.target, e.sensor};
    for (std::size_t k = 0; k < e.lags; ++k) row[c++] = data.value(key, day - k);
  }
  for (const auto& nb : spec.neighbors) {
    const SourceKey key{nb.node, kSolarSensor};
    for (std::size_t k = 0; k < nb.lags; ++k) row[c++] = data.value(key, day - k);
  }
}

inline void require_series(const DailyData& data, const FeatureSpec& spec) {
  auto need = [&](const SourceKey& k) {
    if (!data.contains(k)) throw Error(ErrorCode::MissingSeries, "no series for " + to_string(k));
  };
  need({spec.target, kSolarSensor});
  for (const auto& e : spec.env) need({spec.target, e.sensor});
  for (const auto& nb : spec.neighbors) need({nb.node, kSolarSensor});
}

}  // namespace detail

/// One feature row anchored at `day`; dotted with the coefficients it gives
/// the prediction for day + lead.
inline Vector build_row(const DailyData& data, const FeatureSpec& spec, double current_error, std::size_t day) {
  detail::require_series(data, spec);
  Vector row(column_count(spec));
  detail::fill_row(data, spec, current_error, day, row.span());
  return row;
}

/// Calibration matrix for the training window ending on window_end (the last
/// day whose observation is known). errors[t] is the error feature for base
/// day t and must be supplied when spec.use_error is set.
inline FeatureMatrix build_matrix(const DailyData& data, const FeatureSpec& spec, std::span<const double> errors,
                                  std::size_t window_end) {
  detail::require_series(data, spec);
  const std::size_t n = column_count(spec);
  if (n == 0) throw Error(ErrorCode::InvalidArgument, "feature spec has no columns");
  if (window_end >= data.days() || window_end + 1 < spec.train_window)
    throw Error(ErrorCode::InsufficientData, "training window not covered by data");
  const std::size_t window_start = window_end + 1 - spec.train_window;
  const std::size_t first_base = window_start + max_lag(spec);
  if (window_end < spec.lead || first_base > window_end - spec.lead)
    throw Error(ErrorCode::InsufficientData, "training window too short for lags and lead");
  const std::size_t last_base = window_end - spec.lead;
  const std::size_t m = last_base - first_base + 1;
  if (m < n) {
    throw Error(ErrorCode::InsufficientData,
                std::to_string(m) + " training rows for " + std::to_string(n) + " columns");
  }
  if (spec.use_error && errors.size() <= last_base)
    throw Error(ErrorCode::InsufficientData, "error series does not cover the training window");

  FeatureMatrix fm{Matrix(m, n), Vector(m), column_labels(spec), first_base, last_base, spec.lead};
  std::vector<double> row(n);
  const SourceKey self{spec.target, kSolarSensor};
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t t = first_base + i;
    detail::fill_row(data, spec, spec.use_error ? errors[t] : 0.0, t, row);
    for (std::size_t c = 0; c < n; ++c) fm.x(i, c) = row[c];
    fm.targets[i] = data.value(self, t + spec.lead);
  }
  detail::require_finite(fm.x.storage(), "build_matrix");
  return fm;
}

}  // namespace solarmlr
