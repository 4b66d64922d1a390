#pragma once

// Recalibrating MLR prediction loop and the distributed prediction sum.
//
// Day flow for a bootstrapped predictor at day t:
//   step(phi(t), t)      error e(t) = prediction for t - phi(t); trigger check
//   recalibrate(t)       only when step() asked for it
//   predict(t)           prediction for t + lead, from the row anchored at t
//
// Bootstrap at the first day with a full window: calibrate without the error
// column, predict the window in-sample to obtain an error series, then (if
// the spec uses it) recalibrate with the error column.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "solarmlr/calibrate.hpp"
#include "solarmlr/features.hpp"
#include "solarmlr/linalg.hpp"

namespace solarmlr {

enum class PredictionMode { SharedSingle, PerNode };

struct RecalPolicy {
  enum class Kind { Periodic, ErrorThreshold };
  Kind kind = Kind::Periodic;
  std::size_t period = 7;
  double threshold = std::numeric_limits<double>::infinity();
  std::size_t min_new_days = 4;

  static RecalPolicy periodic(std::size_t period) { return {Kind::Periodic, period}; }
  static RecalPolicy error_threshold(double threshold, std::size_t min_new_days = 4) {
    return {Kind::ErrorThreshold, 7, threshold, min_new_days};
  }
};

struct PredictionShare {
  NodeId node = 0;
  double tau = 0.0;
};

/// tau_i: the node's weighted partial sum over the features it measures.
inline PredictionShare compute_share(NodeId node, std::span<const double> row_slice,
                                     std::span<const double> coeff_slice) {
  return {node, dot(row_slice, coeff_slice)};
}

/// Sums shares in partition block order, so every node obtains the same value.
inline double combine_shares(const std::vector<PredictionShare>& shares) {
  double total = shares.front().tau;
  for (std::size_t k = 1; k < shares.size(); ++k) total += shares[k].tau;
  ops::add(shares.size() - 1);
  return total;
}

/// Every node computes its share, exchanges it, and sums. Returns one
/// prediction per partition block (all equal).
inline std::vector<double> predict_distributed(const ColumnPartition& partition, const Vector& row,
                                               const Vector& coeffs) {
  if (row.size() != partition.total_cols() || coeffs.size() != partition.total_cols())
    throw Error(ErrorCode::DimensionMismatch, "row / coefficient width must match partition");
  std::vector<PredictionShare> shares;
  for (const auto& block : partition.blocks()) {
    const std::size_t lo = block.cols.front();
    shares.push_back(compute_share(block.node, row.span().subspan(lo, block.cols.size()),
                                   coeffs.span().subspan(lo, block.cols.size())));
  }
  std::vector<double> out;
  for (std::size_t k = 0; k < partition.node_count(); ++k) out.push_back(combine_shares(shares));
  return out;
}

struct CoefficientHistoryEntry {
  std::size_t day = 0;
  std::size_t round_id = 0;
  bool uses_error = false;
  std::string stage;  // "initial", "with_error", "recalibration"
  Vector weights;
};

struct PredictionRecord {
  std::size_t made_on = 0;
  std::size_t target_day = 0;
  double predicted = 0.0;  // clamped at zero
  double raw = 0.0;
  std::size_t round_id = 0;
};

class Predictor {
 public:
  using Calibrator = std::function<std::optional<CoefficientVector>(const FeatureMatrix&, const FeatureSpec&)>;
  using RowEvaluator =
      std::function<std::optional<double>(const Vector& row, const CoefficientVector&, const FeatureSpec&)>;

  Predictor(FeatureSpec spec, RecalPolicy policy) : spec_(std::move(spec)), policy_(policy) {}

  const FeatureSpec& spec() const { return spec_; }
  /// Spec matching the active coefficients (may lack the error column).
  FeatureSpec active_spec() const { return active_uses_error_ ? spec_ : spec_.without_error(); }
  bool bootstrapped() const { return active_.has_value(); }
  const std::optional<CoefficientVector>& coefficients() const { return active_; }
  const std::vector<CoefficientHistoryEntry>& history() const { return history_; }
  const std::map<std::size_t, PredictionRecord>& predictions() const { return predictions_; }
  std::optional<std::size_t> last_calibration_day() const { return last_calibration_day_; }

  /// Error feature value for base day `day`: the defined error on that day,
  /// else the most recent earlier one, else 0.
  double error_at(std::size_t day) const {
    auto it = errors_.upper_bound(day);
    if (it == errors_.begin()) return 0.0;
    return std::prev(it)->second;
  }

  std::vector<double> error_series(std::size_t through_day) const {
    std::vector<double> out(through_day + 1);
    for (std::size_t d = 0; d <= through_day; ++d) out[d] = error_at(d);
    return out;
  }

  /// Initial two-stage calibration on the window ending at `day`.
  bool bootstrap(const DailyData& data, std::size_t day, const Calibrator& calibrate) {
    const FeatureSpec plain = spec_.without_error();
    std::optional<FeatureMatrix> fm;
    try {
      fm = build_matrix(data, plain, {}, day);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::InsufficientData) return false;
      throw;
    }
    auto first = calibrate(*fm, plain);
    if (!first) return false;
    adopt(*first, false, day, "initial");

    // In-sample fit gives the error series over the window.
    const SourceKey self{spec_.target, kSolarSensor};
    for (std::size_t i = 0; i < fm->x.rows(); ++i) {
      const std::size_t target = fm->first_base_day + i + spec_.lead;
      const double fitted = dot(fm->x.row(i), first->weights);
      errors_[target] = fitted - data.value(self, target);
    }

    if (spec_.use_error) {
      try {
        const auto series = error_series(day);
        auto second = calibrate(build_matrix(data, spec_, series, day), spec_);
        if (second) adopt(*second, true, day, "with_error");
      } catch (const Error& e) {
        if (e.code() != ErrorCode::InsufficientData) throw;
      }
    }
    return true;
  }

  /// Consumes the observation for `day`; returns true when a recalibration is due.
  bool step(double observation, std::size_t day) {
    std::optional<double> e;
    if (auto it = predictions_.find(day); it != predictions_.end()) {
      e = it->second.predicted - observation;
      errors_[day] = *e;
    }
    if (!active_) return false;
    if (policy_.kind == RecalPolicy::Kind::Periodic) return policy_.period > 0 && day % policy_.period == 0;
    const std::size_t fresh = last_calibration_day_ ? day - *last_calibration_day_ : day;
    return e && std::abs(*e) > policy_.threshold && fresh >= policy_.min_new_days;
  }

  /// Refits on the window ending at `day`; on failure the old coefficients stay.
  bool recalibrate(const DailyData& data, std::size_t day, const Calibrator& calibrate) {
    const auto series = error_series(day);
    std::optional<FeatureMatrix> fm;
    try {
      fm = build_matrix(data, spec_, series, day);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::InsufficientData) return false;
      throw;
    }
    auto fresh = calibrate(*fm, spec_);
    if (!fresh) return false;
    adopt(*fresh, spec_.use_error, day, "recalibration");
    return true;
  }

  /// Prediction for day + lead from the row anchored at `day`, clamped at
  /// zero. Returns nothing when the evaluator could not produce a value; the
  /// previous prediction for that target (if any) is then kept.
  std::optional<double> predict(const DailyData& data, std::size_t day, const RowEvaluator& evaluate) {
    if (!active_) throw Error(ErrorCode::StaleCoefficients, "no calibration has succeeded yet");
    const FeatureSpec spec = active_spec();
    const Vector row = build_row(data, spec, error_at(day), day);
    const auto raw = evaluate(row, *active_, spec);
    if (!raw) return std::nullopt;
    const PredictionRecord rec{day, day + spec_.lead, std::max(0.0, *raw), *raw, active_->round_id};
    predictions_[rec.target_day] = rec;
    return rec.predicted;
  }

  /// predict() with the row dotted against the local coefficient vector.
  double predict_local(const DailyData& data, std::size_t day) {
    return *predict(data, day, [](const Vector& row, const CoefficientVector& c, const FeatureSpec&) {
      return std::optional<double>(dot(row, c.weights));
    });
  }

 private:
  void adopt(CoefficientVector coeffs, bool uses_error, std::size_t day, const char* stage) {
    coeffs.round_id = ++round_counter_;
    coeffs.fitted_at = day;
    history_.push_back({day, coeffs.round_id, uses_error, stage, coeffs.weights});
    active_ = std::move(coeffs);
    active_uses_error_ = uses_error;
    last_calibration_day_ = day;
  }

  FeatureSpec spec_;
  RecalPolicy policy_;
  std::optional<CoefficientVector> active_;
  bool active_uses_error_ = false;
  std::size_t round_counter_ = 0;
  std::optional<std::size_t> last_calibration_day_;
  std::map<std::size_t, double> errors_;  // defined errors by day
  std::map<std::size_t, PredictionRecord> predictions_;
  std::vector<CoefficientHistoryEntry> history_;
};

/// Calibrator backed by the single-node SVD path.
inline Predictor::Calibrator centralized_calibrator() {
  return [](const FeatureMatrix& fm, const FeatureSpec&) -> std::optional<CoefficientVector> {
    try {
      return calibrate_centralized(fm.x, fm.targets).coeffs;
    } catch (const Error&) {
      return std::nullopt;
    }
  };
}

/// Calibrator backed by the in-process distributed path, columns split by owner.
inline Predictor::Calibrator distributed_calibrator() {
  return [](const FeatureMatrix& fm, const FeatureSpec& spec) -> std::optional<CoefficientVector> {
    try {
      return calibrate_distributed(fm.x, owner_partition(spec), fm.targets).coeffs;
    } catch (const Error&) {
      return std::nullopt;
    }
  };
}

inline Predictor::RowEvaluator local_evaluator() {
  return [](const Vector& row, const CoefficientVector& c, const FeatureSpec&) {
    return std::optional<double>(dot(row, c.weights));
  };
}

struct LoopEntry {
  std::size_t day = 0;  // day the prediction was made
  std::size_t target_day = 0;
  std::optional<double> predicted;
  std::optional<double> raw;
  bool recalibrated = false;
};

/// Runs the whole day loop over [first_day, last_day]. before_day, when set,
/// is called at the start of every day.
inline std::vector<LoopEntry> run_prediction_loop(const DailyData& data, Predictor& predictor,
                                                  const Predictor::Calibrator& calibrate,
                                                  const Predictor::RowEvaluator& evaluate, std::size_t first_day,
                                                  std::size_t last_day,
                                                  const std::function<void(std::size_t)>& before_day = {}) {
  std::vector<LoopEntry> out;
  const SourceKey self{predictor.spec().target, kSolarSensor};
  for (std::size_t day = first_day; day <= last_day && day < data.days(); ++day) {
    if (before_day) before_day(day);
    LoopEntry entry{day, day + predictor.spec().lead, std::nullopt, std::nullopt, false};
    if (!predictor.bootstrapped()) {
      if (!predictor.bootstrap(data, day, calibrate)) continue;
      entry.recalibrated = true;
    } else if (predictor.step(data.value(self, day), day)) {
      entry.recalibrated = predictor.recalibrate(data, day, calibrate);
    }
    entry.predicted = predictor.predict(data, day, evaluate);
    if (entry.predicted) entry.raw = predictor.predictions().at(entry.target_day).raw;
    out.push_back(entry);
  }
  return out;
}

}  // namespace solarmlr
