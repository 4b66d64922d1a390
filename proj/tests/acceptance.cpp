// Acceptance checks: one PASS/FAIL line per criterion, non-zero exit if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>

#include "oracles.hpp"
#include "solarmlr.hpp"
#include "solarmlr/experiment.hpp"

using namespace solarmlr;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double orth_error(const Matrix& q) { return frobenius_norm(sub(matmul(transpose(q), q), Matrix::identity(q.cols()))); }

double rel_error(const Vector& got, const Vector& want) { return l2_norm(sub(got, want)) / l2_norm(want); }

Outcome qr_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst_recon = 0, worst_orth = 0, worst_r = 0, worst_cond = 0;
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    Rng rng(seed);
    const std::size_t n = 2 + rng.below(19);
    const std::size_t m = std::max<std::size_t>(10, n) + rng.below(200 - std::max<std::size_t>(10, n) + 1);
    // Half the instances are plain Gaussian, half have a prescribed condition up to ~3e5.
    const Matrix a = seed % 2 ? oracle::random_full_rank(m, n, rng)
                              : oracle::random_conditioned(m, n, std::pow(10.0, 1.0 + 4.5 * rng.uniform()), rng);
    const double cond = oracle::condition_number(a);
    worst_cond = std::max(worst_cond, cond);
    const auto partition = oracle::random_partition(n, rng);
    const auto qr = qr_distributed(a, partition);
    Matrix q_ref, r_ref;
    oracle::mgs(a, q_ref, r_ref);
    worst_recon = std::max(worst_recon, frobenius_norm(sub(matmul(qr.q, qr.r), a)) / frobenius_norm(a));
    worst_orth = std::max(worst_orth, orth_error(qr.q));
    worst_r = std::max(worst_r, oracle::max_abs_diff(qr.r, r_ref));
  }
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = worst_cond < 1e6 && worst_recon < 1e-10 && worst_orth < 1e-9 && worst_r < 1e-9 && secs < 30.0;
  o.detail = "max cond " + fmt("%.2e", worst_cond) + ", recon " + fmt("%.2e", worst_recon) + ", orth " +
             fmt("%.2e", worst_orth) + ", |R - R_mgs| " + fmt("%.2e", worst_r) + ", " + fmt("%.2f", secs) + " s";
  return o;
}

Outcome svd_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst_recon = 0, worst_orth = 0, worst_sigma = 0;
  bool ordered = true;
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    Rng rng(1000 + seed);
    const std::size_t n = 1 + rng.below(20);
    Matrix r;
    if (seed % 2 || n == 1) {
      r = oracle::random_upper_triangular(n, rng);
    } else {
      r = qr_centralized(oracle::random_conditioned(n + 5, n, std::pow(10.0, 1.0 + 4.0 * rng.uniform()), rng)).r;
    }
    const auto s = svd_square(r);
    Matrix us = s.u;
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t i = 0; i < n; ++i) us(i, k) *= s.sigma[k];
    worst_recon = std::max(worst_recon, frobenius_norm(sub(matmul(us, transpose(s.v)), r)) / frobenius_norm(r));
    worst_orth = std::max({worst_orth, orth_error(s.u), orth_error(s.v)});
    const auto ref = oracle::singular_values_via_gram(r);
    for (std::size_t k = 0; k < n; ++k) {
      ordered = ordered && s.sigma[k] >= 0.0 && (k == 0 || s.sigma[k - 1] >= s.sigma[k]);
      worst_sigma = std::max(worst_sigma, std::abs(s.sigma[k] - ref[k]) / ref[0]);
    }
  }
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = ordered && worst_recon < 1e-10 && worst_orth < 1e-9 && worst_sigma < 1e-8 && secs < 30.0;
  o.detail = std::string(ordered ? "sigma sorted, non-negative" : "sigma ORDER VIOLATED") + ", recon " +
             fmt("%.2e", worst_recon) + ", orth " + fmt("%.2e", worst_orth) + ", sigma vs eig(R'R) " +
             fmt("%.2e", worst_sigma) + " of sigma_max, " + fmt("%.2f", secs) + " s";
  return o;
}

Outcome least_squares() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst_ne = 0, worst_svd = 0, worst_planted = 0;
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    Rng rng(2000 + seed);
    const std::size_t n = 2 + rng.below(19);
    const std::size_t m = n + 2 + rng.below(150);
    const Matrix x = oracle::random_full_rank(m, n, rng, 1e4);
    const Vector b = oracle::random_vector(m, rng);
    const auto p = oracle::random_partition(n, rng);
    const auto res = calibrate_distributed(x, p, b);
    worst_ne = std::max(worst_ne, rel_error(res.coeffs.weights, oracle::normal_equations(x, b)));
    worst_svd = std::max(worst_svd, rel_error(res.coeffs.weights, oracle::svd_solve(x, b)));

    const Vector c = oracle::random_vector(n, rng);
    const auto planted = calibrate_distributed(x, p, matvec(x, c));
    worst_planted = std::max(worst_planted, oracle::max_abs_diff(planted.coeffs.weights, c));
  }
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = worst_ne < 1e-9 && worst_svd < 1e-9 && worst_planted <= 1e-8 && secs < 60.0;
  o.detail = "vs normal equations " + fmt("%.2e", worst_ne) + ", vs SVD solve " + fmt("%.2e", worst_svd) +
             ", planted " + fmt("%.2e", worst_planted) + ", " + fmt("%.2f", secs) + " s";
  return o;
}

Outcome partition_invariance() {
  double worst = 0;
  bool single_exact = true;
  Rng rng(3000);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng.below(20);
    const Vector row = oracle::random_vector(n, rng);
    const Vector w = oracle::random_vector(n, rng);
    const double local = dot(row, w);
    for (double v : predict_distributed(oracle::random_partition(n, rng), row, w))
      worst = std::max(worst, std::abs(v - local));
    single_exact = single_exact && predict_distributed(ColumnPartition::single(n), row, w).front() == local;
  }
  Outcome o;
  o.pass = worst <= 1e-12 && single_exact;
  o.detail = "max |distributed - local| " + fmt("%.2e", worst) +
             (single_exact ? ", single node bit-identical" : ", single node DIFFERS");
  return o;
}

Outcome fault_atomicity() {
  using namespace sim;
  Rng rng(4000);
  const Matrix x = oracle::random_full_rank(40, 10, rng, 1e3);
  const Vector b = oracle::random_vector(40, rng);
  const auto partition = ColumnPartition::even(10, 5);

  MessageMatcher q_drop;
  q_drop.kind = MessageKind::QColumn;
  q_drop.round = 2;
  q_drop.column = 5;
  q_drop.to = 0;
  MessageMatcher r_drop;
  r_drop.kind = MessageKind::RTransfer;
  r_drop.round = 2;
  r_drop.from = 3;
  const std::vector<std::pair<Fault, FailureReason>> cases{
      {ZeroFirstColumn{2}, FailureReason::ZeroFirstColumn},
      {ReorderColumns{2}, FailureReason::QOutOfOrder},
      {DropMessage{q_drop}, FailureReason::QMissing},
      {DropMessage{r_drop}, FailureReason::RMissing},
      {ZeroCoefficients{2}, FailureReason::ZeroCoefficients},
  };
  Outcome o;
  std::string summary;
  for (const auto& [fault, want] : cases) {
    auto run_case = [&](std::string& text) {
      NetworkConfig cfg;
      cfg.node_count = 5;
      cfg.seed = 17;
      Network net(cfg, FaultPlan{{fault}});
      bool ok = true;
      auto round = [&] {
        const auto id = net.start_calibration(x, b, partition);
        net.run_until_idle();
        return id ? std::optional<RoundRecord>(net.log().rounds.at(*id - 1)) : std::nullopt;
      };
      const auto first = round();
      ok = ok && first && first->succeeded();
      std::vector<Vector> before;
      for (NodeId i = 0; i < 5; ++i) {
        ok = ok && net.coefficients(i).has_value();
        if (net.coefficients(i)) before.push_back(net.coefficients(i)->weights);
      }
      const auto faulted = round();
      ok = ok && faulted && faulted->outcome == CalibrationPhase::Failed && faulted->reason == want;
      for (NodeId i = 0; i < 5 && ok; ++i) ok = net.coefficients(i)->weights == before[i];
      const auto next = round();
      ok = ok && next && next->succeeded();
      text = to_text(net.log());
      return ok;
    };
    std::string a, b2;
    const bool ok = run_case(a) && run_case(b2) && a == b2;
    o.pass = o.pass && ok;
    summary += std::string(summary.empty() ? "" : ", ") + std::string(to_string(want)) + (ok ? " ok" : " FAILED");
  }
  o.detail = summary;
  return o;
}

Outcome communication_scaling() {
  std::vector<double> xs, ys;
  bool ok = true;
  for (std::size_t n : {2u, 4u, 8u, 16u}) {
    Rng rng(5000 + n);
    const Matrix x = oracle::random_full_rank(3 * n + 5, n, rng, 1e3);
    const Vector b = oracle::random_vector(3 * n + 5, rng);
    sim::NetworkConfig cfg;
    cfg.node_count = n;
    sim::Network net(cfg);
    const auto id = net.start_calibration(x, b, ColumnPartition::even(n, n));
    net.run_until_idle();
    ok = ok && id && net.log().rounds.at(*id - 1).succeeded();
    if (!id) return {false, "round not started"};
    xs.push_back(static_cast<double>(n));
    ys.push_back(static_cast<double>(net.log().rounds.at(*id - 1).controller_messages()));
  }
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
  const double r2 = 1.0 - ss_res / ss_tot;
  Outcome o;
  o.pass = ok && r2 > 0.99;
  o.detail = "controller messages " + fmt("%.0f", ys[0]) + "/" + fmt("%.0f", ys[1]) + "/" + fmt("%.0f", ys[2]) + "/" +
             fmt("%.0f", ys[3]) + " for n=2/4/8/16, slope " + fmt("%.2f", slope) + ", R^2 " + fmt("%.6f", r2);
  return o;
}

Outcome op_accounting() {
  // MLR prediction with five feature terms, through the predictor.
  FeatureSpec spec;
  spec.self_lags = 5;
  spec.use_error = false;
  spec.train_window = 20;
  DailyData data(0, 30);
  Rng rng(6000);
  std::vector<double> v(30);
  for (auto& x : v) x = rng.uniform(10.0, 40.0);
  data.set({0, kSolarSensor}, v);
  Predictor predictor(spec, RecalPolicy::periodic(7));
  const bool boot = predictor.bootstrap(data, 25, centralized_calibrator());
  std::uint64_t mlr_ops = 0;
  if (boot) {
    ops::Scope scope;
    predictor.predict_local(data, 26);
    mlr_ops = scope.count();
  }

  EwmaState state;
  ewma_update(state, 10.0);
  std::uint64_t ewma_ops = 0;
  {
    ops::Scope scope;
    ewma_update(state, 20.0);
    ewma_ops = scope.count();
  }
  std::uint64_t persistence_ops = 0;
  {
    ops::Scope scope;
    persistence_predict(20.0);
    persistence_ops = scope.count();
  }
  const Matrix x = oracle::random_full_rank(5, 5, rng);
  const auto cal = calibrate_distributed(x, ColumnPartition::even(5, 5), oracle::random_vector(5, rng));
  Outcome o;
  o.pass = boot && mlr_ops == 5 && ewma_ops == 3 && persistence_ops == 0 && cal.flops >= 8400 / 4 &&
           cal.flops <= 8400 * 4;
  o.detail = "MLR(5 terms) " + std::to_string(mlr_ops) + ", EWMA " + std::to_string(ewma_ops) + ", Persistence " +
             std::to_string(persistence_ops) + ", 5x5 calibration " + std::to_string(cal.flops) +
             " (band 2100..33600)";
  return o;
}

Outcome model_ordering() {
  const auto t0 = std::chrono::steady_clock::now();
  double mlr = 0, pers = 0, ewma = 0;
  bool neighbors_used = true;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    cli::ExperimentConfig cfg;
    cfg.apply_seed(seed);
    const auto r = cli::run_experiment(cfg);
    for (const auto& rep : r.reports) {
      if (rep.model == "mlr") mlr += rep.rmse / 20.0;
      if (rep.model == "persistence") pers += rep.rmse / 20.0;
      if (rep.model == "ewma") ewma += rep.rmse / 20.0;
    }
    neighbors_used = neighbors_used && !r.history.empty() && r.history.back().weights.size() > cfg.features.self_lags + 1;
  }
  const SyntheticConfig d;
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = neighbors_used && d.days == 120 && d.nodes == 4 && d.coupling >= 0.7 && mlr < ewma && mlr < pers &&
           secs < 120.0;
  o.detail = "mean RMSE over 20 seeds: MLR " + fmt("%.4f", mlr) + ", EWMA " + fmt("%.4f", ewma) + ", Persistence " +
             fmt("%.4f", pers) + " (" + std::to_string(d.days) + " days, " + std::to_string(d.nodes) +
             " nodes, coupling " + fmt("%.2f", d.coupling) + "), " + fmt("%.2f", secs) + " s";
  return o;
}

Outcome metrics_examples() {
  const std::vector<double> pred{1, -1, 1, -1}, obs{0, 0, 0, 0};
  const auto r = evaluate(pred, obs);
  const std::string rmse = fmt("%.0f", r.rmse), mean = fmt("%.0f", std::abs(r.mean_residual));
  const std::string ci = fmt("%.3f", r.ci95), t3 = fmt("%.3f", t_critical_975(3));
  const std::string ewma = percent(improvement(0.91, 1.51)), pers = percent(improvement(0.91, 2.52));
  Outcome o;
  o.pass = rmse == "1" && r.max_abs_error == 1.0 && mean == "0" && ci == "1.837" && t3 == "3.182" &&
           ewma == "39.7%" && pers == "63.9%";
  o.detail = "rmse " + rmse + ", mean " + mean + ", ci95 " + ci + " (t=" + t3 + "), 0.91 vs 1.51 -> " + ewma +
             ", 0.91 vs 2.52 -> " + pers;
  return o;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

Outcome determinism() {
  cli::ExperimentConfig cfg;
  cfg.apply_seed(7);
  cfg.network.drop_probability = 0.03;
  cfg.faults.faults.push_back(sim::ReorderColumns{2});
  cfg.faults.faults.push_back(sim::NodeOffline{2, 3000, 3400});
  const fs::path base = fs::temp_directory_path() / "solarmlr_acceptance";
  fs::remove_all(base);
  std::vector<fs::path> dirs{base / "a", base / "b"};
  for (const auto& d : dirs) cli::write_artifacts(cfg, cli::run_experiment(cfg), d);
  Outcome o;
  std::size_t bytes = 0;
  for (const char* f : {"predictions.csv", "reports.json", "simulation.log", "plot.csv"}) {
    const std::string a = slurp(dirs[0] / f), b = slurp(dirs[1] / f);
    bytes += a.size();
    if (a.empty() || a != b) {
      o.pass = false;
      o.detail += std::string(f) + " differs; ";
    }
  }
  fs::remove_all(base);
  if (o.pass) o.detail = "4 artifacts, " + std::to_string(bytes) + " bytes, identical across reruns";
  return o;
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"QR oracle equivalence", qr_oracle},
      {"SVD correctness", svd_oracle},
      {"End-to-end least squares", least_squares},
      {"Prediction partition invariance", partition_invariance},
      {"Fault atomicity and liveness", fault_atomicity},
      {"Communication scaling", communication_scaling},
      {"Op accounting", op_accounting},
      {"Model ordering on synthetic data", model_ordering},
      {"Metrics unit suite", metrics_examples},
      {"Determinism", determinism},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    std::printf("%s  %2zu  %-34s %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria failed\n", failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
