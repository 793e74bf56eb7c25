#include "steinpf/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cstdio>
#include <cmath>
#include <exception>
#include <fstream>
#include <limits>
#include <mutex>
#include <numbers>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "steinpf/filter.hpp"
#include "steinpf/reference.hpp"
#include "steinpf/rng.hpp"

namespace steinpf {

std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

namespace {

FilterState make_state(const FilterSpec& f) {
  switch (f.backend) {
    case BackendKind::sir:
      return FilterState::sir(f.n, f.ess_threshold);
    case BackendKind::stein_seq:
      return FilterState::stein_sequential(f.n, f.init);
    case BackendKind::stein_window:
      return FilterState::stein_window(f.n, f.window, f.anchor);
  }
  throw std::logic_error("unknown backend");
}

double normal_pdf(double x, double mean, double var) {
  const double r = x - mean;
  return std::exp(-0.5 * r * r / var) / std::sqrt(2.0 * std::numbers::pi * var);
}

std::vector<int> snapshot_steps(const ExperimentConfig& config) {
  std::vector<int> steps;
  for (double t : config.snapshot_times) steps.push_back(config.step_at(t));
  return steps;
}

std::vector<double> grid_points(const ExperimentConfig& config) {
  return linspace(config.grid.lo, config.grid.hi, config.grid.points);
}

// Posterior of the continuous-time filter at t = k dt, k = 1..steps, with the
// observation z_k standing for the increment (y_{k dt} - y_{(k-1) dt}) / dt.
void fill_reference(const ExperimentConfig& config, RunResult& out,
                    const std::vector<double>& grid, const std::vector<int>& snaps) {
  const int steps = config.steps();
  const double dt = config.dt();
  out.time.resize(steps);
  out.reference_mean.assign(steps, Vector(1));
  out.reference_covariance.assign(steps, Matrix(1, 1));
  out.snapshot_exact.assign(snaps.size(), {});

  auto store_density = [&](int k, auto&& density) {
    for (std::size_t s = 0; s < snaps.size(); ++s) {
      if (snaps[s] != k + 1) continue;
      auto& d = out.snapshot_exact[s];
      d.clear();
      for (double x : grid) d.push_back(density(x));
    }
  };

  if (config.model == ModelKind::linear_gaussian) {
    const auto& p = config.linear;
    const KalmanBucyParams kb{p.drift_coeff, p.sigma, p.obs_gain, p.obs_sigma};
    KalmanState s{p.prior_mean, p.prior_var, 0.0};
    const int sub = config.reference_substeps;
    const double h = dt / sub;
    for (int k = 0; k < steps; ++k) {
      const double z = out.truth.observations(k, 0);
      for (int j = 0; j < sub; ++j) s = kalman_step(s, z * h, h, kb);
      out.time[k] = (k + 1) * dt;
      out.reference_mean[k](0) = s.mean;
      out.reference_covariance[k](0, 0) = s.variance;
      store_density(k, [&](double x) { return normal_pdf(x, s.mean, s.variance); });
    }
    return;
  }

  const auto& p = config.benes;
  const BenesParams bp{p.mu, p.sigma_b, p.h1, p.h2, p.x0};
  std::vector<double> increments;
  increments.reserve(steps);
  for (int k = 0; k < steps; ++k) {
    increments.push_back(out.truth.observations(k, 0) * dt);
    const BenesPosterior post = benes_posterior(increments, (k + 1) * dt, bp);
    out.time[k] = (k + 1) * dt;
    out.reference_mean[k](0) = post.mean();
    out.reference_covariance[k](0, 0) = post.variance();
    store_density(k, [&](double x) { return mixture_density(post, x); });
  }
}

void take_snapshot(const FilterState& state, SeriesRun& out) {
  std::vector<double> xs;
  std::vector<double> ws;
  if (const auto* sir = std::get_if<SirBackend>(&state.backend)) {
    for (int i = 0; i < sir->ensemble.size(); ++i) {
      xs.push_back(sir->ensemble.particles(i, 0));
      ws.push_back(sir->ensemble.weights(i));
    }
  } else if (const auto* seq = std::get_if<SteinSequentialBackend>(&state.backend)) {
    for (int i = 0; i < seq->ensemble.size(); ++i) xs.push_back(seq->ensemble.particles()(i, 0));
  } else {
    const auto& win = std::get<SteinWindowBackend>(state.backend);
    const Matrix newest = win.trajectories.block(win.trajectories.window() - 1);
    for (Eigen::Index i = 0; i < newest.rows(); ++i) xs.push_back(newest(i, 0));
  }
  out.snapshot_particles.push_back(std::move(xs));
  out.snapshot_weights.push_back(std::move(ws));
}

std::vector<double> snapshot_kde(const SeriesRun& s, std::size_t k, const std::vector<double>& grid,
                                 double bandwidth) {
  if (s.snapshot_weights[k].empty()) return kde(s.snapshot_particles[k], grid, bandwidth);
  return kde(s.snapshot_particles[k], s.snapshot_weights[k], grid, bandwidth);
}

void run_series(const ExperimentConfig& config, const StateSpaceModel& model,
                const FilterSpec& spec, const RunResult& run, const std::vector<int>& snaps,
                const std::vector<double>& grid, SeriesRun& out) {
  out.series = spec.series;
  const std::uint64_t tag = stream_tag(spec.series);
  FilterState state = make_state(spec);
  RunRecord& rec = out.record;
  const int steps = config.steps();
  try {
    for (int k = 0; k < steps; ++k) {
      Rng rng = Rng::substream(run.seed, tag, static_cast<std::uint64_t>(k));
      const Vector z = run.truth.observations.row(k).transpose();
      const auto t0 = std::chrono::steady_clock::now();
      state = filter_step(std::move(state), model, z, spec.svgd, rng);
      const std::chrono::duration<double> wall = std::chrono::steady_clock::now() - t0;
      const Moments m = state.posterior_moments();
      rec.time.push_back(run.time[k]);
      rec.mean.push_back(m.mean);
      rec.covariance.push_back(m.covariance);
      rec.reference_mean.push_back(run.reference_mean[k]);
      rec.reference_covariance.push_back(run.reference_covariance[k]);
      rec.wall_seconds.push_back(wall.count());
      if (const auto* sir = std::get_if<SirBackend>(&state.backend)) {
        rec.ess.push_back(effective_sample_size(sir->ensemble.weights));
      } else {
        rec.ess.push_back(std::numeric_limits<double>::quiet_NaN());
      }
      for (int s : snaps) {
        if (s == k + 1) take_snapshot(state, out);
      }
    }
  } catch (const std::exception& e) {
    out.failed = true;
    out.error = e.what();
    return;
  }
  for (std::size_t s = 0; s < snaps.size(); ++s) {
    const auto density = snapshot_kde(out, s, grid, config.kde_bandwidth);
    out.snapshot_l1.push_back(l1_density_distance(density, run.snapshot_exact[s], grid));
  }
}

const SeriesRun* find_series(const RunResult& run, const std::string& name) {
  for (const auto& s : run.series) {
    if (s.series == name) return &s;
  }
  return nullptr;
}

std::vector<std::string> requested(const ExperimentResult& result,
                                   const std::vector<std::string>& series) {
  const auto all = result.series_names();
  if (series.empty()) return all;
  for (const auto& s : series) {
    if (std::find(all.begin(), all.end(), s) == all.end()) {
      throw std::invalid_argument("series '" + s + "' is not in the experiment result");
    }
  }
  return series;
}

std::vector<RunRecord> successful_records(const ExperimentResult& result, const std::string& name) {
  std::vector<RunRecord> records;
  for (const auto& run : result.runs) {
    const SeriesRun* s = find_series(run, name);
    if (s != nullptr && !s->failed) records.push_back(s->record);
  }
  return records;
}

struct MeanStderr {
  double mean = std::numeric_limits<double>::quiet_NaN();
  double stderr_ = std::numeric_limits<double>::quiet_NaN();
};

MeanStderr mean_stderr(const std::vector<double>& v) {
  MeanStderr out;
  if (v.empty()) return out;
  double sum = 0.0;
  for (double x : v) sum += x;
  out.mean = sum / static_cast<double>(v.size());
  if (v.size() < 2) {
    out.stderr_ = 0.0;
    return out;
  }
  double ss = 0.0;
  for (double x : v) ss += (x - out.mean) * (x - out.mean);
  out.stderr_ = std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
  return out;
}

double time_average(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? std::numeric_limits<double>::quiet_NaN() : s / static_cast<double>(v.size());
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("error writing " + path.string());
}

}  // namespace

int ExperimentResult::failures() const {
  int n = 0;
  for (const auto& run : runs) {
    for (const auto& s : run.series) n += s.failed ? 1 : 0;
  }
  return n;
}

std::vector<std::string> ExperimentResult::series_names() const {
  std::vector<std::string> names;
  for (const auto& f : config.filters) names.push_back(f.series);
  return names;
}

RunResult run_single(const ExperimentConfig& config, int run) {
  const StateSpaceModel model = build_model(config);
  const auto snaps = snapshot_steps(config);
  const auto grid = grid_points(config);

  RunResult out;
  out.run = run;
  out.seed = config.base_seed + static_cast<std::uint64_t>(run);
  Rng truth_rng = Rng::substream(out.seed, stream_tag("truth"), 0);
  out.truth = simulate(model, config.steps(), truth_rng);
  fill_reference(config, out, grid, snaps);

  out.series.resize(config.filters.size());
  for (std::size_t i = 0; i < config.filters.size(); ++i) {
    run_series(config, model, config.filters[i], out, snaps, grid, out.series[i]);
  }
  return out;
}

ExperimentResult run_experiment(const ExperimentConfig& config) {
  config.validate();
  if (config.snapshot_times.size() > 0 && build_model(config).state_dim() != 1) {
    throw std::invalid_argument("density snapshots need a scalar state");
  }
  ExperimentResult result;
  result.config = config;
  result.grid = grid_points(config);
  result.snapshot_steps = snapshot_steps(config);
  result.runs.resize(config.runs);

  std::atomic<int> next{0};
  std::mutex error_mutex;
  std::exception_ptr error;
  auto worker = [&] {
    for (int m = next++; m < config.runs; m = next++) {
      try {
        result.runs[m] = run_single(config, m);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  const int jobs = std::min(config.jobs, config.runs);
  if (jobs <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);
  return result;
}

void emit_figure_data(const ExperimentResult& result, Figure figure, std::ostream& out,
                      const std::vector<std::string>& series, int snapshot) {
  const auto names = requested(result, series);
  if (figure == Figure::density) {
    if (snapshot < 0 || snapshot >= static_cast<int>(result.snapshot_steps.size())) {
      throw std::invalid_argument("snapshot index out of range");
    }
    if (result.runs.empty()) throw std::invalid_argument("experiment has no runs");
    const RunResult& run = result.runs.front();
    const auto& grid = result.grid;
    out << "x,series,density\n";
    for (const auto& name : names) {
      const SeriesRun* s = find_series(run, name);
      if (s == nullptr || s->failed) continue;
      const auto d = snapshot_kde(*s, static_cast<std::size_t>(snapshot), grid,
                                  result.config.kde_bandwidth);
      for (std::size_t i = 0; i < grid.size(); ++i) {
        out << format_double(grid[i]) << ',' << name << ',' << format_double(d[i]) << '\n';
      }
    }
    const auto& exact = run.snapshot_exact[snapshot];
    for (std::size_t i = 0; i < grid.size(); ++i) {
      out << format_double(grid[i]) << ",exact," << format_double(exact[i]) << '\n';
    }
    return;
  }

  out << "time,series,value\n";
  const int steps = result.config.steps();
  const double dt = result.config.dt();
  for (const auto& name : names) {
    const auto records = successful_records(result, name);
    std::vector<double> curve(steps, std::numeric_limits<double>::quiet_NaN());
    if (!records.empty()) {
      const MseCurves c = mse_curves(records);
      curve = figure == Figure::mse_mean ? c.mean : c.covariance;
    }
    for (int k = 0; k < steps; ++k) {
      out << format_double((k + 1) * dt) << ',' << name << ',' << format_double(curve[k]) << '\n';
    }
  }
}

void write_summary(const ExperimentResult& result, std::ostream& out) {
  out << "backend,metric,value,stderr\n";
  for (const auto& name : result.series_names()) {
    std::vector<double> mse_mu;
    std::vector<double> mse_cov;
    std::vector<std::vector<double>> l1(result.snapshot_steps.size());
    int failed = 0;
    for (const auto& run : result.runs) {
      const SeriesRun* s = find_series(run, name);
      if (s == nullptr) continue;
      if (s->failed) {
        ++failed;
        continue;
      }
      const RunRecord* rec = &s->record;
      const MseCurves c = mse_curves(std::span<const RunRecord>(rec, 1));
      mse_mu.push_back(time_average(c.mean));
      mse_cov.push_back(time_average(c.covariance));
      for (std::size_t k = 0; k < l1.size(); ++k) l1[k].push_back(s->snapshot_l1[k]);
    }
    auto row = [&](const std::string& metric, MeanStderr v) {
      out << name << ',' << metric << ',' << format_double(v.mean) << ','
          << format_double(v.stderr_) << '\n';
    };
    row("mse_mean", mean_stderr(mse_mu));
    row("mse_cov", mean_stderr(mse_cov));
    for (std::size_t k = 0; k < l1.size(); ++k) {
      row("l1_t" + format_double(result.config.snapshot_times[k]), mean_stderr(l1[k]));
    }
    row("failures", {static_cast<double>(failed), 0.0});
  }
}

void write_timing(const ExperimentResult& result, std::ostream& out) {
  out << "backend,metric,value,stderr\n";
  for (const auto& name : result.series_names()) {
    std::vector<double> per_run;
    for (const auto& run : result.runs) {
      const SeriesRun* s = find_series(run, name);
      if (s != nullptr && !s->failed) per_run.push_back(time_average(s->record.wall_seconds));
    }
    const MeanStderr v = mean_stderr(per_run);
    out << name << ",wall_seconds_per_step," << format_double(v.mean) << ','
        << format_double(v.stderr_) << '\n';
  }
}

void write_run_means(const ExperimentResult& result, const RunResult& run, std::ostream& out) {
  out << "time,series,value\n";
  const int d = static_cast<int>(run.truth.states.cols());
  auto label = [d](const std::string& name, int c) {
    return d == 1 ? name : name + "[" + std::to_string(c) + "]";
  };
  const int steps = static_cast<int>(run.time.size());
  for (int c = 0; c < d; ++c) {
    for (int k = 0; k < steps; ++k) {
      out << format_double(run.time[k]) << ',' << label("truth", c) << ','
          << format_double(run.truth.states(k, c)) << '\n';
    }
    for (int k = 0; k < steps; ++k) {
      out << format_double(run.time[k]) << ',' << label("exact", c) << ','
          << format_double(run.reference_mean[k](c)) << '\n';
    }
    for (const auto& name : result.series_names()) {
      const SeriesRun* s = find_series(run, name);
      if (s == nullptr) continue;
      for (std::size_t k = 0; k < s->record.steps(); ++k) {
        out << format_double(s->record.time[k]) << ',' << label(name, c) << ','
            << format_double(s->record.mean[k](c)) << '\n';
      }
    }
  }
}

std::vector<std::filesystem::path> write_outputs(const ExperimentResult& result) {
  namespace fs = std::filesystem;
  const fs::path dir = result.config.out_dir;
  fs::create_directories(dir / "runs");
  std::vector<fs::path> written;
  auto emit = [&](const fs::path& path, auto&& fill) {
    std::ostringstream ss;
    fill(ss);
    write_file(path, ss.str());
    written.push_back(path);
  };

  emit(dir / "mse_mean.csv", [&](std::ostream& o) { emit_figure_data(result, Figure::mse_mean, o); });
  emit(dir / "mse_cov.csv", [&](std::ostream& o) { emit_figure_data(result, Figure::mse_cov, o); });
  for (std::size_t s = 0; s < result.snapshot_steps.size(); ++s) {
    const std::string name = "density_t" + format_double(result.config.snapshot_times[s]) + ".csv";
    emit(dir / name, [&](std::ostream& o) {
      emit_figure_data(result, Figure::density, o, {}, static_cast<int>(s));
    });
  }
  emit(dir / "summary.csv", [&](std::ostream& o) { write_summary(result, o); });
  emit(dir / "timing.csv", [&](std::ostream& o) { write_timing(result, o); });
  for (const auto& run : result.runs) {
    char name[32];
    std::snprintf(name, sizeof name, "run_%04d_means.csv", run.run);
    emit(dir / "runs" / name, [&](std::ostream& o) { write_run_means(result, run, o); });
  }
  return written;
}

}  // namespace steinpf
