// solarmlr: experiment runner.
//
//   solarmlr run <config.json> [--seed N] [--out-dir DIR]
//   solarmlr run --sweep a.json b.json ...     (each into DIR/<config stem>)
//   solarmlr compare <reports.json>...
//   solarmlr gen-data <synthetic.json> [--seed N] [--out-dir DIR]
//
// Exit status: 0 ok, 1 runtime error, 2 config or data validation error.

#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "solarmlr/experiment.hpp"

namespace fs = std::filesystem;
using namespace solarmlr;

namespace {

struct RunOutcome {
  int code = cli::kExitOk;
  std::string message;
};

RunOutcome run_one(const std::string& config_path, std::optional<std::uint64_t> seed,
                   std::optional<std::string> out_dir, bool verbose) {
  try {
    cli::ExperimentConfig cfg = cli::parse_experiment_config(cli::read_json_file(config_path));
    if (seed) cfg.apply_seed(*seed);
    if (out_dir) cfg.output_dir = *out_dir;
    const auto result = cli::run_experiment(cfg);
    const auto artifacts = cli::write_artifacts(cfg, result, cfg.output_dir);
    std::string msg;
    if (verbose) msg = render_table(result.reports);
    msg += "wrote " + artifacts.predictions.string() + ", " + artifacts.reports.string() + ", " +
           artifacts.simulation_log.string() + ", " + artifacts.plot.string() + "\n";
    return {cli::kExitOk, msg};
  } catch (const Error& e) {
    return {cli::exit_code_for(e), config_path + ": " + e.what() + "\n"};
  } catch (const std::exception& e) {
    return {cli::kExitRuntime, config_path + ": " + e.what() + "\n"};
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Distributed MLR solar forecasting experiments"};
  app.require_subcommand(1);

  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  app.add_option("--seed", seed, "Seed for synthetic data and the simulated network");
  app.add_option("--out-dir", out_dir, "Output directory (overrides the config)");

  std::vector<std::string> run_configs;
  bool sweep = false;
  auto* run = app.add_subcommand("run", "Run an experiment config");
  run->add_option("config", run_configs, "Experiment config (JSON)")->required();
  run->add_flag("--sweep", sweep, "Run several configs in parallel, each into <out-dir>/<config stem>");
  run->add_option("--seed", seed, "Seed for synthetic data and the simulated network");
  run->add_option("--out-dir", out_dir, "Output directory (overrides the config)");

  std::vector<std::string> report_files;
  auto* cmp = app.add_subcommand("compare", "Compare model reports on the same evaluation span");
  cmp->add_option("reports", report_files, "reports.json files")->required();

  std::string synth_path;
  auto* gen = app.add_subcommand("gen-data", "Write a synthetic data set as CSV");
  gen->add_option("config", synth_path, "Synthetic generator config (JSON)")->required();
  gen->add_option("--seed", seed, "Generator seed");
  gen->add_option("--out-dir", out_dir, "Output directory (default: current directory)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? cli::kExitOk : cli::kExitValidation;
  }

  if (run->parsed()) {
    if (!sweep) {
      if (run_configs.size() != 1) {
        std::cerr << "run takes one config; use --sweep for several\n";
        return cli::kExitValidation;
      }
      const auto outcome = run_one(run_configs.front(), seed, out_dir, true);
      (outcome.code == cli::kExitOk ? std::cout : std::cerr) << outcome.message;
      return outcome.code;
    }
    const fs::path base = out_dir.value_or("out");
    std::vector<std::future<RunOutcome>> jobs;
    for (const auto& path : run_configs) {
      const std::string dir = (base / fs::path(path).stem()).string();
      jobs.push_back(std::async(std::launch::async, run_one, path, seed, dir, false));
    }
    int worst = cli::kExitOk;
    for (auto& job : jobs) {
      const auto outcome = job.get();
      (outcome.code == cli::kExitOk ? std::cout : std::cerr) << outcome.message;
      worst = std::max(worst, outcome.code);
    }
    return worst;
  }

  try {
    if (cmp->parsed()) {
      std::vector<cli::ComparedReport> reports;
      for (const auto& f : report_files) {
        auto more = cli::read_reports(f);
        reports.insert(reports.end(), more.begin(), more.end());
      }
      std::cout << cli::render(cli::compare(reports));
      return cli::kExitOk;
    }
    if (gen->parsed()) {
      SyntheticConfig cfg = cli::parse_synthetic_config(cli::read_json_file(synth_path));
      if (seed) cfg.seed = *seed;
      const fs::path dir = out_dir.value_or(".");
      fs::create_directories(dir);
      const fs::path file = dir / "data.csv";
      write_csv(file.string(), expand_to_samples(generate_synthetic(cfg), cfg.samples_per_day));
      std::cout << "wrote " << file.string() << "\n";
      return cli::kExitOk;
    }
  } catch (const Error& e) {
    std::cerr << e.what() << "\n";
    return cli::exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return cli::kExitRuntime;
  }
  return cli::kExitOk;
}
