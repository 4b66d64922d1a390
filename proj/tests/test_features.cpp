#include <gtest/gtest.h>

#include "solarmlr/features.hpp"
#include "solarmlr/rng.hpp"

using namespace solarmlr;

namespace {

DailyData ramp_data(std::size_t days) {
  DailyData d(19723, days);
  std::vector<double> v(days);
  for (std::size_t i = 0; i < days; ++i) v[i] = static_cast<double>(i + 1);
  d.set({0, "solar"}, v);
  return d;
}

DailyData noisy_data(std::size_t days, std::size_t nodes, std::uint64_t seed) {
  Rng rng(seed);
  DailyData d(19723, days);
  for (NodeId n = 0; n < nodes; ++n) {
    for (const char* sensor : {"solar", "humidity", "wind_speed"}) {
      std::vector<double> v(days);
      for (auto& x : v) x = rng.uniform(0.0, 50.0);
      d.set({n, sensor}, v);
    }
  }
  return d;
}

FeatureSpec rich_spec() {
  FeatureSpec s;
  s.target = 0;
  s.self_lags = 3;
  s.use_derivative = true;
  s.use_error = true;
  s.env = {{"humidity", 2}};
  s.neighbors = {{1, 2}, {2, 1}};
  s.lead = 2;
  s.train_window = 30;
  return s;
}

}  // namespace

TEST(BuildMatrix, PureShiftOfRamp) {
  const DailyData d = ramp_data(10);
  FeatureSpec s;
  s.self_lags = 1;
  s.lead = 2;
  s.train_window = 10;
  const auto fm = build_matrix(d, s, {}, 9);
  // m = T_T - T_L - max_lag = 10 - 2 - 0.
  ASSERT_EQ(fm.x.rows(), 8u);
  ASSERT_EQ(fm.x.cols(), 1u);
  for (std::size_t i = 0; i < 8; ++i) {
    EXPECT_EQ(fm.x(i, 0), static_cast<double>(i + 1));
    EXPECT_EQ(fm.targets[i], static_cast<double>(i + 3));
  }
  EXPECT_EQ(fm.first_base_day, 0u);
  EXPECT_EQ(fm.last_base_day, 7u);
  EXPECT_EQ(training_rows(s), 8u);
}

TEST(BuildMatrix, ConstantSeriesHasZeroDerivative) {
  DailyData d(0, 12);
  d.set({0, "solar"}, std::vector<double>(12, 4.5));
  FeatureSpec s;
  s.self_lags = 1;
  s.use_derivative = true;
  s.train_window = 12;
  const auto fm = build_matrix(d, s, {}, 11);
  for (std::size_t i = 0; i < fm.x.rows(); ++i) EXPECT_EQ(fm.x(i, 1), 0.0);
}

TEST(FeatureSpec, WinterConfigurationHasEightColumns) {
  FeatureSpec s;
  s.self_lags = 3;
  s.env = {{"wind_direction", 1}, {"wind_speed", 1}, {"leaf_wetness", 1}, {"soil_moisture", 1}};
  s.use_error = true;
  EXPECT_EQ(column_count(s), 8u);
}

TEST(FeatureSpec, ColumnOrderAndLabels) {
  const auto labels = column_labels(rich_spec());
  std::vector<std::string> names;
  for (const auto& l : labels) names.push_back(l.name());
  const std::vector<std::string> want{"self[t-0]", "self[t-1]", "self[t-2]", "derivative", "error",
                                      "humidity[t-0]", "humidity[t-1]", "node1[t-0]", "node1[t-1]", "node2[t-0]"};
  EXPECT_EQ(names, want);
  // Bijection: every label distinct.
  for (std::size_t i = 0; i < labels.size(); ++i)
    for (std::size_t j = i + 1; j < labels.size(); ++j) EXPECT_FALSE(labels[i] == labels[j]);
}

TEST(FeatureSpec, OwnerPartitionFollowsMeasuringNode) {
  const auto p = owner_partition(rich_spec());
  EXPECT_EQ(p.controller(), 0u);
  EXPECT_EQ(p.node_count(), 3u);
  EXPECT_EQ(p.block_of(0)->cols.size(), 7u);
  EXPECT_EQ(p.block_of(1)->cols.size(), 2u);
  EXPECT_EQ(p.block_of(2)->cols.size(), 1u);
}

TEST(FeatureSpec, ValidationCatchesBadSpecs) {
  FeatureSpec s;
  s.train_window = 2;
  EXPECT_THROW(validate(s), Error);
  s = FeatureSpec{};
  s.env = {{"moonlight", 1}};
  try {
    validate(s);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Validation);
    EXPECT_NE(std::string(e.what()).find("moonlight"), std::string::npos);
  }
  s = FeatureSpec{};
  s.neighbors = {{0, 1}};
  EXPECT_THROW(validate(s), Error);
  s = FeatureSpec{};
  s.self_lags = 0;
  EXPECT_THROW(validate(s), Error);
  EXPECT_NO_THROW(validate(FeatureSpec{}));
}

TEST(BuildRow, AgreesWithMatrixRows) {
  const DailyData d = noisy_data(60, 3, 41);
  const FeatureSpec s = rich_spec();
  std::vector<double> errors(60);
  Rng rng(42);
  for (auto& e : errors) e = rng.normal();
  const auto fm = build_matrix(d, s, errors, 50);
  for (std::size_t i = 0; i < fm.x.rows(); ++i) {
    const std::size_t t = fm.first_base_day + i;
    EXPECT_EQ(build_row(d, s, errors[t], t), fm.x.row(i)) << "day " << t;
  }
}

TEST(BuildRow, LagBeforeStartIsInsufficientData) {
  const DailyData d = noisy_data(20, 3, 43);
  try {
    build_row(d, rich_spec(), 0.0, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InsufficientData);
  }
}

TEST(BuildMatrix, MissingSeriesReported) {
  const DailyData d = noisy_data(40, 2, 44);
  try {
    build_matrix(d, rich_spec(), std::vector<double>(40), 39);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MissingSeries);
  }
}

TEST(BuildMatrix, TooFewRowsForColumns) {
  const DailyData d = noisy_data(40, 3, 45);
  FeatureSpec s = rich_spec();
  s.train_window = 12;
  try {
    build_matrix(d, s, std::vector<double>(40), 39);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InsufficientData);
  }
}

TEST(BuildMatrix, NoLeakageFromFutureValues) {
  // Perturbing anything later than (target day - lead) must leave that row unchanged.
  const FeatureSpec s = rich_spec();
  const DailyData base = noisy_data(60, 3, 46);
  const std::vector<double> errors(60, 0.25);
  const auto ref = build_matrix(base, s, errors, 55);
  Rng rng(47);
  for (int trial = 0; trial < 30; ++trial) {
    DailyData mutated = base;
    const NodeId node = static_cast<NodeId>(rng.below(3));
    const char* sensor = rng.below(2) == 0 ? "solar" : "humidity";
    const std::size_t day = rng.below(60);
    auto values = mutated.series({node, sensor}).values;
    values[day] += 100.0;
    mutated.set({node, sensor}, values);
    const auto fm = build_matrix(mutated, s, errors, 55);
    for (std::size_t i = 0; i < fm.x.rows(); ++i) {
      const std::size_t base_day = fm.first_base_day + i;
      if (day > base_day) {
        EXPECT_EQ(fm.x.row(i), ref.x.row(i)) << "mutated day " << day << ", row base " << base_day;
      }
    }
  }
}

TEST(BuildMatrix, ErrorSeriesRequiredWhenUsed) {
  const DailyData d = noisy_data(60, 3, 48);
  EXPECT_THROW(build_matrix(d, rich_spec(), {}, 50), Error);
}
