#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "steinpf/config.hpp"
#include "steinpf/metrics.hpp"
#include "steinpf/model.hpp"

namespace steinpf {

/// One backend's output within one run.
struct SeriesRun {
  std::string series;
  RunRecord record;
  /// Final-step particles (newest block for the window filter) and weights,
  /// kept at each snapshot step for density estimates.
  std::vector<std::vector<double>> snapshot_particles;
  std::vector<std::vector<double>> snapshot_weights;
  std::vector<double> snapshot_l1;  // L1 distance of the KDE to the exact density
  bool failed = false;
  std::string error;
};

struct RunResult {
  int run = 0;
  std::uint64_t seed = 0;
  Simulation truth;
  std::vector<double> time;  // k dt, k = 1..steps
  std::vector<Vector> reference_mean;
  std::vector<Matrix> reference_covariance;
  /// Exact posterior density on the grid at each snapshot.
  std::vector<std::vector<double>> snapshot_exact;
  std::vector<SeriesRun> series;  // in config filter order
};

struct ExperimentResult {
  ExperimentConfig config;
  std::vector<RunResult> runs;  // in run order
  std::vector<double> grid;
  std::vector<int> snapshot_steps;

  int failures() const;
  std::vector<std::string> series_names() const;
};

/// Simulate and filter one run. Depends only on the config and
/// base_seed + run.
RunResult run_single(const ExperimentConfig& config, int run);

/// All runs, spread over config.jobs worker threads.
ExperimentResult run_experiment(const ExperimentConfig& config);

enum class Figure { mse_mean, mse_cov, density };

/// Long-format CSV: time,series,value for the mse figures, x,series,density
/// for the density figure (run 0, `snapshot` indexes snapshot_steps, plus an
/// `exact` series). `series` restricts the output; a name absent from the
/// result throws std::invalid_argument. Runs where a backend failed are left
/// out of that backend's average.
void emit_figure_data(const ExperimentResult& result, Figure figure, std::ostream& out,
                      const std::vector<std::string>& series = {}, int snapshot = 0);

/// summary.csv rows: backend,metric,value,stderr (time-averaged mse, snapshot
/// L1 distances, failure counts). Wall time goes to timing.csv instead so the
/// summary stays byte-reproducible.
void write_summary(const ExperimentResult& result, std::ostream& out);
void write_timing(const ExperimentResult& result, std::ostream& out);
/// time,series,value with the truth, the reference mean and every backend's mean.
void write_run_means(const ExperimentResult& result, const RunResult& run, std::ostream& out);

/// Writes every CSV under config.out_dir and returns the file paths.
std::vector<std::filesystem::path> write_outputs(const ExperimentResult& result);

/// Shortest round-trip decimal form of x.
std::string format_double(double x);

}  // namespace steinpf
