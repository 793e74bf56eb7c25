// steinpf: run filtering experiments from a YAML config.
//
//   steinpf run <config> [--paper] [--seed S] [--out DIR] [--model NAME] [--runs M] [--jobs J]
//   steinpf validate <config>
//
// Exit codes: 0 success, 2 config error, 3 a backend failed in some run,
// 1 anything else (I/O).

#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "steinpf/config.hpp"
#include "steinpf/experiment.hpp"

namespace {

constexpr int kConfigError = 2;
constexpr int kBackendFailure = 3;

struct RunOptions {
  std::string config;
  bool paper = false;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> model;
  std::optional<int> runs;
  std::optional<int> jobs;
};

steinpf::ExperimentConfig apply_overrides(steinpf::ExperimentConfig c, const RunOptions& o) {
  if (o.model) {
    const auto kind = steinpf::parse_model_name(*o.model);
    if (kind != c.model) {
      const double dt = c.dt();
      c.model = kind;
      c.linear = {};
      c.benes = {};
      c.linear.dt = dt;
      c.benes.dt = dt;
      if (kind == steinpf::ModelKind::benes && c.snapshot_times.empty()) {
        c.snapshot_times = steinpf::default_config(kind).snapshot_times;
      }
    }
  }
  if (o.paper) steinpf::apply_paper_preset(c);
  if (o.seed) c.base_seed = *o.seed;
  if (o.out) c.out_dir = *o.out;
  if (o.runs) c.runs = *o.runs;
  if (o.jobs) c.jobs = *o.jobs;
  c.validate();
  return c;
}

int do_run(const RunOptions& opts) {
  steinpf::ExperimentConfig config;
  try {
    config = apply_overrides(steinpf::load_config(opts.config), opts);
  } catch (const steinpf::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  }

  const auto result = steinpf::run_experiment(config);
  const auto files = steinpf::write_outputs(result);
  std::cout << "wrote " << files.size() << " files to " << config.out_dir.string() << '\n';

  if (const int failures = result.failures(); failures > 0) {
    for (const auto& run : result.runs) {
      for (const auto& s : run.series) {
        if (s.failed) std::cerr << "run " << run.run << ", " << s.series << ": " << s.error << '\n';
      }
    }
    std::cerr << failures << " backend run(s) failed\n";
    return kBackendFailure;
  }
  return 0;
}

int do_validate(const std::string& path) {
  try {
    const auto c = steinpf::load_config(path);
    std::cout << path << ": ok (" << steinpf::model_name(c.model) << ", " << c.filters.size()
              << " filters, " << c.steps() << " steps, " << c.runs << " runs)\n";
    return 0;
  } catch (const steinpf::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stein particle filter experiments"};
  app.require_subcommand(1);

  RunOptions run_opts;
  auto* run = app.add_subcommand("run", "run an experiment and write CSV outputs");
  run->add_option("config", run_opts.config, "experiment YAML file")->required();
  run->add_flag("--paper", run_opts.paper, "full paper settings (n = 500, M = 50)");
  run->add_option("--seed", run_opts.seed, "base seed");
  run->add_option("--out", run_opts.out, "output directory");
  run->add_option("--model", run_opts.model, "linear-gaussian or benes");
  run->add_option("--runs", run_opts.runs, "number of Monte Carlo runs");
  run->add_option("--jobs", run_opts.jobs, "worker threads");

  std::string validate_path;
  auto* validate = app.add_subcommand("validate", "check a config file without running it");
  validate->add_option("config", validate_path, "experiment YAML file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigError;
  }

  try {
    if (*run) return do_run(run_opts);
    return do_validate(validate_path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
