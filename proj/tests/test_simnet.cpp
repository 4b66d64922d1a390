#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "solarmlr/simnet.hpp"

using namespace solarmlr;
using namespace solarmlr::sim;

namespace {

struct Problem {
  Matrix x;
  Vector b;
  ColumnPartition partition;
};

Problem make_problem(std::size_t nodes, std::size_t cols_per_node, std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t n = nodes * cols_per_node;
  Matrix x = oracle::random_full_rank(3 * n + 5, n, rng, 1e3);
  Vector b = oracle::random_vector(3 * n + 5, rng);
  return {std::move(x), std::move(b), ColumnPartition::even(n, nodes)};
}

NetworkConfig config(std::size_t nodes, std::uint64_t seed = 1, double drop = 0.0) {
  NetworkConfig c;
  c.node_count = nodes;
  c.seed = seed;
  c.drop_probability = drop;
  return c;
}

std::optional<RoundRecord> calibrate(Network& net, const Problem& p) {
  auto id = net.start_calibration(p.x, p.b, p.partition);
  net.run_until_idle();
  if (!id) return std::nullopt;
  return net.log().rounds.at(*id - 1);
}

std::vector<std::optional<Vector>> snapshot(const Network& net, std::size_t nodes) {
  std::vector<std::optional<Vector>> out;
  for (NodeId i = 0; i < nodes; ++i) {
    const auto& c = net.coefficients(i);
    out.push_back(c ? std::optional<Vector>(c->weights) : std::nullopt);
  }
  return out;
}

double success_over_rounds(std::size_t nodes, double drop, std::uint64_t seed, std::size_t rounds) {
  const Problem p = make_problem(nodes, 2, 1000 + seed);
  Network net(config(nodes, seed, drop));
  for (std::size_t r = 0; r < rounds; ++r) calibrate(net, p);
  return success_rate(net.log());
}

// Runs one good round, one faulted round (id 2), one good round; checks the
// faulted round's reason, that no node changed coefficients, and recovery.
void expect_atomic_failure(const FaultPlan& plan, FailureReason want) {
  const Problem p = make_problem(5, 2, 91);
  Network net(config(5), plan);
  const auto first = calibrate(net, p);
  ASSERT_TRUE(first && first->succeeded());
  const auto before = snapshot(net, 5);
  for (const auto& c : before) ASSERT_TRUE(c.has_value());

  const auto faulted = calibrate(net, p);
  ASSERT_TRUE(faulted);
  EXPECT_EQ(faulted->round_id, 2u);
  EXPECT_EQ(faulted->outcome, CalibrationPhase::Failed);
  ASSERT_TRUE(faulted->reason);
  EXPECT_EQ(*faulted->reason, want) << to_string(*faulted->reason);
  EXPECT_EQ(snapshot(net, 5), before);

  const auto next = calibrate(net, p);
  ASSERT_TRUE(next);
  EXPECT_TRUE(next->succeeded());
  for (NodeId i = 0; i < 5; ++i) EXPECT_EQ(net.coefficients(i)->round_id, 3u);
}

}  // namespace

TEST(SuccessRate, Ratios) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%.4f", success_rate(2679, 2773));
  EXPECT_STREQ(buf, "0.9661");
  EXPECT_EQ(success_rate(10, 10), 1.0);
  EXPECT_THROW(success_rate(0, 0), Error);
}

TEST(Network, SingleNodeAlwaysSucceeds) {
  Rng rng(92);
  const Matrix x = oracle::random_full_rank(20, 4, rng);
  const Vector c({1.0, -2.0, 0.5, 3.0});
  const Vector b = matvec(x, c);
  Network net(config(1));
  for (int r = 0; r < 20; ++r) {
    auto id = net.start_calibration(x, b, ColumnPartition::single(4));
    ASSERT_TRUE(id);
    net.run_until_idle();
  }
  EXPECT_EQ(success_rate(net.log()), 1.0);
  EXPECT_LT(oracle::max_abs_diff(net.coefficients(0)->weights, c), 1e-10);
}

TEST(Network, CoefficientsMatchInProcessCalibration) {
  const Problem p = make_problem(4, 3, 93);
  Network net(config(4));
  const auto rec = calibrate(net, p);
  ASSERT_TRUE(rec && rec->succeeded());
  const auto ref = calibrate_distributed(p.x, p.partition, p.b);
  for (NodeId i = 0; i < 4; ++i)
    EXPECT_LT(oracle::max_abs_diff(net.coefficients(i)->weights, ref.coeffs.weights), 1e-12);
  EXPECT_EQ(rec->acks, 3u);
}

TEST(Network, DistributedPredictionAgreesOnAllNodes) {
  const Problem p = make_problem(3, 2, 94);
  Network net(config(3));
  ASSERT_TRUE(calibrate(net, p)->succeeded());
  Rng rng(95);
  const Vector row = oracle::random_vector(6, rng);
  const double want = dot(row, net.coefficients(0)->weights);
  const auto got = net.predict(row);
  ASSERT_EQ(got.size(), 3u);
  for (const auto& v : got) {
    ASSERT_TRUE(v);
    EXPECT_NEAR(*v, want, 1e-12 * (1.0 + std::abs(want)));
  }
}

TEST(Network, PredictionWithoutCoefficientsYieldsNothing) {
  Network net(config(2));
  const auto got = net.predict(Vector({1.0, 2.0}));
  EXPECT_FALSE(got[0]);
  EXPECT_FALSE(got[1]);
}

TEST(Network, OfflineNodeFailsRoundThenRecovers) {
  const Problem p = make_problem(3, 2, 96);
  Network net(config(3), FaultPlan{{NodeOffline{2, 100, 300}}});
  ASSERT_TRUE(calibrate(net, p)->succeeded());
  const auto before = snapshot(net, 3);
  net.advance_to(100);
  const auto failed = calibrate(net, p);
  ASSERT_TRUE(failed);
  EXPECT_FALSE(failed->succeeded());
  ASSERT_TRUE(failed->reason);
  EXPECT_TRUE(*failed->reason == FailureReason::QMissing || *failed->reason == FailureReason::Timeout);
  EXPECT_EQ(snapshot(net, 3), before);
  net.advance_to(300);
  const auto next = calibrate(net, p);
  ASSERT_TRUE(next);
  EXPECT_TRUE(next->succeeded());
}

TEST(Network, OfflineControllerSkipsRound) {
  const Problem p = make_problem(2, 1, 97);
  Network net(config(2), FaultPlan{{NodeOffline{0, 0, 10}}});
  EXPECT_FALSE(net.start_calibration(p.x, p.b, p.partition));
  EXPECT_EQ(net.log().attempts(), 0u);
  EXPECT_FALSE(net.log().events.empty());
}

TEST(Faults, ZeroFirstColumn) { expect_atomic_failure({{ZeroFirstColumn{2}}}, FailureReason::ZeroFirstColumn); }

TEST(Faults, ColumnsOutOfOrder) { expect_atomic_failure({{ReorderColumns{2}}}, FailureReason::QOutOfOrder); }

TEST(Faults, QColumnMissing) {
  MessageMatcher m;
  m.kind = MessageKind::QColumn;
  m.round = 2;
  m.column = 5;
  m.to = 0;
  expect_atomic_failure({{DropMessage{m}}}, FailureReason::QMissing);
}

TEST(Faults, RMissing) {
  MessageMatcher m;
  m.kind = MessageKind::RTransfer;
  m.round = 2;
  m.from = 3;
  expect_atomic_failure({{DropMessage{m}}}, FailureReason::RMissing);
}

TEST(Faults, CoefficientsAllZero) {
  expect_atomic_failure({{ZeroCoefficients{2}}}, FailureReason::ZeroCoefficients);
}

TEST(Faults, ZeroFirstColumnSendsNothing) {
  const Problem p = make_problem(3, 1, 98);
  Network net(config(3), FaultPlan{{ZeroFirstColumn{1}}});
  const auto rec = calibrate(net, p);
  ASSERT_TRUE(rec);
  EXPECT_EQ(rec->controller_messages(), 0u);
  EXPECT_TRUE(net.log().messages.empty());
}

TEST(Network, RandomDropsGivePartialSuccessDeterministically) {
  const Problem p = make_problem(5, 2, 99);
  auto run_once = [&] {
    Network net(config(5, 7, 0.05));
    for (int r = 0; r < 200; ++r) calibrate(net, p);
    return net.log();
  };
  const SimulationLog a = run_once();
  const double rate = success_rate(a);
  EXPECT_EQ(a.attempts(), 200u);
  EXPECT_GT(rate, 0.0);
  EXPECT_LT(rate, 1.0);
  EXPECT_EQ(to_text(a), to_text(run_once()));
}

TEST(Network, SuccessRateFallsWithDropProbability) {
  double prev = 2.0;
  for (double drop : {0.0, 0.01, 0.03, 0.08, 0.2}) {
    double total = 0.0;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) total += success_over_rounds(4, drop, seed, 20);
    const double mean = total / 20.0;
    EXPECT_LE(mean, prev) << "drop " << drop;
    prev = mean;
  }
}

TEST(Network, ControllerMessagesLinearInNodes) {
  std::vector<double> xs, ys;
  for (std::size_t n : {2u, 4u, 8u, 16u}) {
    const Problem p = make_problem(n, 1, 100 + n);
    Network net(config(n));
    const auto rec = calibrate(net, p);
    ASSERT_TRUE(rec && rec->succeeded());
    xs.push_back(static_cast<double>(n));
    ys.push_back(static_cast<double>(rec->controller_messages()));
  }
  // Least-squares line and coefficient of determination.
  const double k = static_cast<double>(xs.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sx += xs[i];
    sy += ys[i];
    sxx += xs[i] * xs[i];
    sxy += xs[i] * ys[i];
  }
  const double slope = (k * sxy - sx * sy) / (k * sxx - sx * sx);
  const double icpt = (sy - slope * sx) / k;
  double ss_res = 0, ss_tot = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double f = icpt + slope * xs[i];
    ss_res += (ys[i] - f) * (ys[i] - f);
    ss_tot += (ys[i] - sy / k) * (ys[i] - sy / k);
  }
  EXPECT_GT(1.0 - ss_res / ss_tot, 0.99);
  EXPECT_GT(slope, 0.0);
}

TEST(Network, ScheduledRunIsByteIdentical) {
  const Problem p = make_problem(3, 2, 101);
  Workload w;
  w.window = [&](std::size_t) { return FeatureMatrix{p.x, p.b, {}, 0, 0, 0}; };
  w.row = [&](std::size_t epoch) { return p.x.row(epoch % p.x.rows()); };
  w.partition = p.partition;
  Schedule s;
  s.total_ticks = 600;
  const FaultPlan plan{{NodeOffline{1, 200, 260}}};
  const auto a = run(config(3, 5, 0.02), w, s, plan);
  const auto b = run(config(3, 5, 0.02), w, s, plan);
  EXPECT_EQ(to_text(a), to_text(b));
  EXPECT_EQ(a.attempts(), 600u / 90u + 1);
  EXPECT_FALSE(a.predictions.empty());
}

TEST(Network, LogRecordsUseDocumentedLayout) {
  const Problem p = make_problem(2, 1, 102);
  Network net(config(2));
  calibrate(net, p);
  const std::string text = to_text(net.log());
  EXPECT_EQ(text.rfind("# solarmlr simulation log v1\n", 0), 0u);
  EXPECT_NE(text.find("msg,0,1,load_data,0,1,1,delivered\n"), std::string::npos) << text;
  EXPECT_NE(text.find("round,1,0,"), std::string::npos);
  EXPECT_NE(text.find("counter,1,"), std::string::npos);
}

TEST(NetworkConfig, Validation) {
  NetworkConfig c;
  c.node_count = 0;
  EXPECT_THROW(Network{c}, Error);
  c = NetworkConfig{};
  c.drop_probability = 1.0;
  EXPECT_THROW(Network{c}, Error);
  EXPECT_THROW((Network{config(2), FaultPlan{{NodeOffline{5, 0, 1}}}}), Error);
}
