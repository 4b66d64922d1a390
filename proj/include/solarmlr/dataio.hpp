#pragma once

// Time-series ingestion and synthetic data.
//
// CSV layout (one sample per row, '\n' line endings, '.' decimal point):
//
//   timestamp,node_id,sensor,value
//   2024-01-01T00:00:00Z,0,solar,12.5
//
// Timestamps are ISO-8601 UTC (a bare date means midnight).

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <compare>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "solarmlr/error.hpp"
#include "solarmlr/linalg.hpp"
#include "solarmlr/rng.hpp"

namespace solarmlr {

inline constexpr std::int64_t kSecondsPerDay = 86400;
inline constexpr std::int64_t kSecondsPerHour = 3600;
inline constexpr std::size_t kMinSamplesPerDay = 4;

inline const std::set<std::string, std::less<>>& known_sensors() {
  static const std::set<std::string, std::less<>> sensors{
      "solar", "humidity", "soil_moisture", "air_temperature", "leaf_wetness", "wind_speed", "wind_direction"};
  return sensors;
}

struct SourceKey {
  NodeId node = 0;
  std::string sensor;

  friend auto operator<=>(const SourceKey&, const SourceKey&) = default;
  friend bool operator==(const SourceKey&, const SourceKey&) = default;
};

inline std::string to_string(const SourceKey& k) { return std::to_string(k.node) + ":" + k.sensor; }

enum class Resolution { Raw, Hourly, Daily };

/// How an averaged bin got its value.
enum class BinFill { Observed, PartialMean, PreviousBin };

struct Sample {
  std::int64_t timestamp = 0;  // seconds since the Unix epoch, UTC
  double value = 0.0;

  friend bool operator==(const Sample&, const Sample&) = default;
};

struct TimeSeries {
  SourceKey source;
  Resolution resolution = Resolution::Raw;
  std::vector<Sample> samples;
  std::vector<BinFill> fills;  // one per sample for averaged series, empty for raw

  bool flagged(std::size_t i) const { return !fills.empty() && fills[i] != BinFill::Observed; }
  friend bool operator==(const TimeSeries&, const TimeSeries&) = default;
};

// --- timestamps ---------------------------------------------------------

inline std::string format_timestamp(std::int64_t ts) {
  using namespace std::chrono;
  const sys_seconds tp{seconds{ts}};
  const auto day = floor<days>(tp);
  const year_month_day ymd{day};
  const hh_mm_ss hms{tp - day};
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02dZ", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                static_cast<int>(hms.hours().count()), static_cast<int>(hms.minutes().count()),
                static_cast<int>(hms.seconds().count()));
  return buf;
}

inline std::optional<std::int64_t> parse_timestamp(std::string_view s) {
  auto num = [&](std::size_t pos, std::size_t len, int& out) {
    if (pos + len > s.size()) return false;
    auto r = std::from_chars(s.data() + pos, s.data() + pos + len, out);
    return r.ec == std::errc{} && r.ptr == s.data() + pos + len;
  };
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, sec = 0;
  if (s.size() < 10 || s[4] != '-' || s[7] != '-') return std::nullopt;
  if (!num(0, 4, y) || !num(5, 2, mo) || !num(8, 2, d)) return std::nullopt;
  if (s.size() > 10) {
    if ((s[10] != 'T' && s[10] != ' ') || s.size() < 19 || s[13] != ':' || s[16] != ':') return std::nullopt;
    if (!num(11, 2, h) || !num(14, 2, mi) || !num(17, 2, sec)) return std::nullopt;
    const std::string_view tail = s.substr(19);
    if (!(tail.empty() || tail == "Z" || tail == "+00:00")) return std::nullopt;
  }
  using namespace std::chrono;
  const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
  if (!ymd.ok() || h > 23 || mi > 59 || sec > 60) return std::nullopt;
  const auto tp = sys_days{ymd}.time_since_epoch();
  return duration_cast<seconds>(tp).count() + h * 3600LL + mi * 60LL + sec;
}

inline std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  std::int64_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

// --- CSV ------------------------------------------------------------------

/// Parses CSV text. Series come back ordered by (node, sensor).
inline std::vector<TimeSeries> parse_csv(std::istream& in) {
  std::map<SourceKey, TimeSeries> by_key;
  std::map<SourceKey, std::size_t> last_line;
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& why) {
    throw Error(ErrorCode::Parse, "line " + std::to_string(line_no) + ": " + why);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line_no == 1 && line.rfind("timestamp", 0) == 0) {
      if (line != "timestamp,node_id,sensor,value") fail("unexpected header '" + line + "'");
      continue;
    }
    std::vector<std::string_view> fields;
    std::string_view rest(line);
    for (std::size_t pos; (pos = rest.find(',')) != std::string_view::npos; rest.remove_prefix(pos + 1))
      fields.push_back(rest.substr(0, pos));
    fields.push_back(rest);
    if (fields.size() != 4) fail("expected 4 fields, got " + std::to_string(fields.size()));

    const auto ts = parse_timestamp(fields[0]);
    if (!ts) fail("bad timestamp '" + std::string(fields[0]) + "'");
    NodeId node = 0;
    if (auto r = std::from_chars(fields[1].data(), fields[1].data() + fields[1].size(), node);
        r.ec != std::errc{} || r.ptr != fields[1].data() + fields[1].size())
      fail("bad node_id '" + std::string(fields[1]) + "'");
    const std::string sensor(fields[2]);
    if (!known_sensors().contains(sensor)) fail("unknown sensor '" + sensor + "'");
    double value = 0.0;
    try {
      std::size_t used = 0;
      value = std::stod(std::string(fields[3]), &used);
      if (used != fields[3].size()) fail("bad value '" + std::string(fields[3]) + "'");
    } catch (const std::logic_error&) {
      fail("bad value '" + std::string(fields[3]) + "'");
    }
    if (!std::isfinite(value)) fail("non-finite value");

    SourceKey key{node, sensor};
    auto& series = by_key[key];
    series.source = key;
    if (!series.samples.empty() && series.samples.back().timestamp >= *ts) {
      fail("timestamp not after line " + std::to_string(last_line[key]) + " for " + to_string(key));
    }
    series.samples.push_back({*ts, value});
    last_line[key] = line_no;
  }
  std::vector<TimeSeries> out;
  for (auto& [key, s] : by_key) out.push_back(std::move(s));
  return out;
}

inline std::vector<TimeSeries> load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Parse, "cannot open " + path);
  return parse_csv(in);
}

inline std::string format_value(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Writes every sample, series by series in the given order.
inline void write_csv(std::ostream& out, const std::vector<TimeSeries>& series) {
  out << "timestamp,node_id,sensor,value\n";
  for (const auto& s : series)
    for (const auto& smp : s.samples)
      out << format_timestamp(smp.timestamp) << ',' << s.source.node << ',' << s.source.sensor << ','
          << format_value(smp.value) << '\n';
}

inline void write_csv(const std::string& path, const std::vector<TimeSeries>& series) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Parse, "cannot write " + path);
  write_csv(out, series);
}

// --- averaging --------------------------------------------------------------

/// Mean per fixed-width bin over the covered span. A bin with fewer than
/// min_samples samples takes the previous bin's value and is flagged; the
/// first bin falls back to the mean of what it has.
inline TimeSeries bin_average(const TimeSeries& ts, std::int64_t bin_seconds, std::size_t min_samples,
                              Resolution resolution, std::int64_t offset_seconds = 0) {
  TimeSeries out{ts.source, resolution, {}, {}};
  if (ts.samples.empty()) return out;
  const std::int64_t first = floor_div(ts.samples.front().timestamp + offset_seconds, bin_seconds);
  const std::int64_t last = floor_div(ts.samples.back().timestamp + offset_seconds, bin_seconds);
  std::size_t i = 0;
  for (std::int64_t bin = first; bin <= last; ++bin) {
    double sum = 0.0;
    std::size_t count = 0;
    while (i < ts.samples.size() && floor_div(ts.samples[i].timestamp + offset_seconds, bin_seconds) == bin) {
      sum += ts.samples[i].value;
      ++count;
      ++i;
    }
    const std::int64_t stamp = bin * bin_seconds - offset_seconds;
    if (count >= min_samples) {
      out.samples.push_back({stamp, sum / static_cast<double>(count)});
      out.fills.push_back(BinFill::Observed);
    } else if (!out.samples.empty()) {
      out.samples.push_back({stamp, out.samples.back().value});
      out.fills.push_back(BinFill::PreviousBin);
    } else {
      out.samples.push_back({stamp, sum / static_cast<double>(count)});
      out.fills.push_back(BinFill::PartialMean);
    }
  }
  return out;
}

/// Daily means on UTC day boundaries (shifted by offset_seconds). Daily input
/// is returned unchanged.
inline TimeSeries daily_average(const TimeSeries& ts, std::size_t min_samples = kMinSamplesPerDay,
                                std::int64_t offset_seconds = 0) {
  if (ts.resolution == Resolution::Daily) return ts;
  return bin_average(ts, kSecondsPerDay, min_samples, Resolution::Daily, offset_seconds);
}

inline TimeSeries hourly_average(const TimeSeries& ts, std::size_t min_samples = 1) {
  if (ts.resolution != Resolution::Raw) return ts;
  return bin_average(ts, kSecondsPerHour, min_samples, Resolution::Hourly);
}

// --- aligned daily table ----------------------------------------------------

struct DailySeries {
  std::vector<double> values;
  std::vector<bool> flagged;
};

/// Daily series on a common day axis: index 0 is first_day (days since epoch).
class DailyData {
 public:
  DailyData() = default;
  DailyData(std::int64_t first_day, std::size_t days) : first_day_(first_day), days_(days) {}

  /// Aligns daily series to the union of their spans; days a series does not
  /// cover are filled from its nearest earlier (else first) value and flagged.
  static DailyData from_series(const std::vector<TimeSeries>& daily) {
    if (daily.empty()) return {};
    std::int64_t lo = INT64_MAX, hi = INT64_MIN;
    for (const auto& s : daily) {
      if (s.samples.empty()) continue;
      lo = std::min(lo, floor_div(s.samples.front().timestamp, kSecondsPerDay));
      hi = std::max(hi, floor_div(s.samples.back().timestamp, kSecondsPerDay));
    }
    if (lo > hi) return {};
    DailyData out(lo, static_cast<std::size_t>(hi - lo + 1));
    for (const auto& s : daily) {
      if (s.samples.empty()) continue;
      DailySeries ds{std::vector<double>(out.days_, 0.0), std::vector<bool>(out.days_, true)};
      for (std::size_t i = 0; i < s.samples.size(); ++i) {
        const auto d = static_cast<std::size_t>(floor_div(s.samples[i].timestamp, kSecondsPerDay) - lo);
        ds.values[d] = s.samples[i].value;
        ds.flagged[d] = s.flagged(i);
      }
      std::vector<bool> present(out.days_, false);
      for (const auto& smp : s.samples)
        present[static_cast<std::size_t>(floor_div(smp.timestamp, kSecondsPerDay) - lo)] = true;
      std::optional<double> prev;
      for (std::size_t d = 0; d < out.days_; ++d) {
        if (present[d]) {
          prev = ds.values[d];
        } else {
          ds.values[d] = prev ? *prev : s.samples.front().value;
          ds.flagged[d] = true;
        }
      }
      out.series_[s.source] = std::move(ds);
    }
    return out;
  }

  std::int64_t first_day() const { return first_day_; }
  std::size_t days() const { return days_; }
  bool contains(const SourceKey& k) const { return series_.contains(k); }

  const DailySeries& series(const SourceKey& k) const {
    auto it = series_.find(k);
    if (it == series_.end()) throw Error(ErrorCode::MissingSeries, "no series for " + to_string(k));
    return it->second;
  }
  double value(const SourceKey& k, std::size_t day) const { return series(k).values.at(day); }
  bool flagged(const SourceKey& k, std::size_t day) const { return series(k).flagged.at(day); }

  void set(const SourceKey& k, std::vector<double> values, std::vector<bool> flagged = {}) {
    if (values.size() != days_) throw Error(ErrorCode::LengthMismatch, "series length must equal day count");
    if (flagged.empty()) flagged.assign(days_, false);
    series_[k] = DailySeries{std::move(values), std::move(flagged)};
  }

  std::vector<SourceKey> keys() const {
    std::vector<SourceKey> out;
    for (const auto& [k, v] : series_) out.push_back(k);
    return out;
  }

 private:
  std::int64_t first_day_ = 0;
  std::size_t days_ = 0;
  std::map<SourceKey, DailySeries> series_;
};

// --- synthetic data -----------------------------------------------------------

struct SyntheticConfig {
  std::size_t days = 120;
  std::size_t nodes = 4;
  double base = 30.0;                   // mean daily solar current
  double seasonal_amplitude = 8.0;
  double seasonal_period = 365.0;       // days
  double seasonal_phase = 0.0;          // days
  double cloud_ar = 0.8;                // AR(1) coefficient of the cloud term
  double cloud_scale = 2.0;             // innovation std-dev of the cloud term
  double noise_scale = 3.0;             // independent per-node noise std-dev
  std::vector<double> shading;          // per node, in (0, 1]; empty = all 1
  double coupling = 0.8;                // weight of the shared weather term, [0, 1]
  std::uint64_t seed = 1;
  std::string start_date = "2024-01-01";
  std::size_t samples_per_day = 24;     // only used when expanding to raw samples

  void validate() const {
    auto bad = [](const std::string& field, const std::string& why) {
      throw Error(ErrorCode::Validation, "synthetic." + field + ": " + why);
    };
    if (days < 2) bad("days", "must be >= 2");
    if (nodes < 1) bad("nodes", "must be >= 1");
    if (seasonal_period <= 0.0) bad("seasonal_period", "must be > 0");
    if (cloud_ar < 0.0 || cloud_ar >= 1.0) bad("cloud_ar", "must be in [0, 1)");
    if (cloud_scale < 0.0) bad("cloud_scale", "must be >= 0");
    if (noise_scale < 0.0) bad("noise_scale", "must be >= 0");
    if (coupling < 0.0 || coupling > 1.0) bad("coupling", "must be in [0, 1]");
    if (!shading.empty() && shading.size() != nodes) bad("shading", "needs one factor per node");
    for (double s : shading)
      if (!(s > 0.0 && s <= 1.0)) bad("shading", "factors must be in (0, 1]");
    if (!parse_timestamp(start_date)) bad("start_date", "not an ISO-8601 date");
    if (samples_per_day < 1) bad("samples_per_day", "must be >= 1");
  }
};

/// Per node: daily solar = shading * (season + cloud + noise), clamped at 0,
/// where cloud = coupling * shared AR(1) + (1 - coupling) * local AR(1).
/// Also emits air_temperature and humidity series driven by the same weather.
inline std::vector<TimeSeries> generate_synthetic(const SyntheticConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  const std::int64_t start = *parse_timestamp(cfg.start_date);
  const std::int64_t start_day = floor_div(start, kSecondsPerDay) * kSecondsPerDay;

  std::vector<double> shared(cfg.days);
  std::vector<std::vector<double>> local(cfg.nodes, std::vector<double>(cfg.days));
  // Start each AR(1) process from its stationary distribution.
  const double stationary = cfg.cloud_scale / std::sqrt(1.0 - cfg.cloud_ar * cfg.cloud_ar);
  double s_prev = stationary * rng.normal();
  std::vector<double> l_prev(cfg.nodes);
  for (auto& v : l_prev) v = stationary * rng.normal();

  std::vector<TimeSeries> out;
  for (std::size_t i = 0; i < cfg.nodes; ++i) {
    for (const char* sensor : {"solar", "air_temperature", "humidity"})
      out.push_back(TimeSeries{SourceKey{static_cast<NodeId>(i), sensor}, Resolution::Daily, {}, {}});
  }
  for (std::size_t d = 0; d < cfg.days; ++d) {
    s_prev = cfg.cloud_ar * s_prev + cfg.cloud_scale * rng.normal();
    const double season = cfg.base + cfg.seasonal_amplitude *
                                         std::sin(2.0 * std::numbers::pi *
                                                  (static_cast<double>(d) + cfg.seasonal_phase) /
                                                  cfg.seasonal_period);
    const std::int64_t ts = start_day + static_cast<std::int64_t>(d) * kSecondsPerDay;
    for (std::size_t i = 0; i < cfg.nodes; ++i) {
      l_prev[i] = cfg.cloud_ar * l_prev[i] + cfg.cloud_scale * rng.normal();
      const double cloud = cfg.coupling * s_prev + (1.0 - cfg.coupling) * l_prev[i];
      const double shade = cfg.shading.empty() ? 1.0 : cfg.shading[i];
      const double solar = std::max(0.0, shade * (season + cloud + cfg.noise_scale * rng.normal()));
      const double temp = 18.0 + 0.5 * (season - cfg.base) + 0.4 * cloud + 0.5 * rng.normal();
      const double humid = 65.0 - 1.5 * cloud + 2.0 * rng.normal();
      out[3 * i + 0].samples.push_back({ts, solar});
      out[3 * i + 1].samples.push_back({ts, temp});
      out[3 * i + 2].samples.push_back({ts, humid});
    }
  }
  for (auto& s : out) s.fills.assign(s.samples.size(), BinFill::Observed);
  return out;
}

/// Spreads each daily value over samples_per_day evenly spaced samples with a
/// daytime profile whose mean is exactly the daily value (solar only; other
/// sensors are held flat).
inline std::vector<TimeSeries> expand_to_samples(const std::vector<TimeSeries>& daily, std::size_t samples_per_day) {
  std::vector<double> profile(samples_per_day, 1.0);
  if (samples_per_day > 1) {
    double total = 0.0;
    for (std::size_t k = 0; k < samples_per_day; ++k) {
      const double hour = 24.0 * (static_cast<double>(k) + 0.5) / static_cast<double>(samples_per_day);
      profile[k] = std::max(0.0, std::sin(std::numbers::pi * (hour - 6.0) / 12.0));
      total += profile[k];
    }
    for (double& p : profile) p *= static_cast<double>(samples_per_day) / total;
  }
  const std::int64_t step = kSecondsPerDay / static_cast<std::int64_t>(samples_per_day);
  std::vector<TimeSeries> out;
  for (const auto& s : daily) {
    TimeSeries raw{s.source, Resolution::Raw, {}, {}};
    const bool shaped = s.source.sensor == "solar";
    for (const auto& smp : s.samples) {
      for (std::size_t k = 0; k < samples_per_day; ++k)
        raw.samples.push_back({smp.timestamp + static_cast<std::int64_t>(k) * step,
                               shaped ? smp.value * profile[k] : smp.value});
    }
    out.push_back(std::move(raw));
  }
  return out;
}

}  // namespace solarmlr
