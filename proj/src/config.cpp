#include "steinpf/config.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <initializer_list>
#include <set>
#include <sstream>

namespace steinpf {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw ConfigError(msg); }

void check_keys(const YAML::Node& node, const std::string& where,
                std::initializer_list<const char*> allowed) {
  if (!node.IsMap()) fail(where + " must be a mapping");
  for (const auto& kv : node) {
    const auto key = kv.first.as<std::string>();
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
      fail("unknown key '" + key + "' in " + where);
    }
  }
}

template <typename T>
void read(const YAML::Node& node, const char* key, T& out, const std::string& where) {
  const YAML::Node v = node[key];
  if (!v) return;
  if (!v.IsScalar()) fail(where + "." + key + " must be a scalar");
  try {
    out = v.as<T>();
  } catch (const YAML::Exception&) {
    fail(where + "." + key + ": cannot read '" + v.Scalar() + "'");
  }
}

void read_linear(const YAML::Node& p, LinearGaussianParams& out) {
  check_keys(p, "model.params",
             {"drift", "sigma", "gain", "obs_sigma", "prior_mean", "prior_var"});
  read(p, "drift", out.drift_coeff, "model.params");
  read(p, "sigma", out.sigma, "model.params");
  read(p, "gain", out.obs_gain, "model.params");
  read(p, "obs_sigma", out.obs_sigma, "model.params");
  read(p, "prior_mean", out.prior_mean, "model.params");
  read(p, "prior_var", out.prior_var, "model.params");
}

void read_benes(const YAML::Node& p, BenesModelParams& out) {
  check_keys(p, "model.params", {"mu", "sigma_b", "h1", "h2", "x0", "initial_var"});
  read(p, "mu", out.mu, "model.params");
  read(p, "sigma_b", out.sigma_b, "model.params");
  read(p, "h1", out.h1, "model.params");
  read(p, "h2", out.h2, "model.params");
  read(p, "x0", out.x0, "model.params");
  read(p, "initial_var", out.initial_var, "model.params");
}

BackendKind parse_backend(const std::string& s) {
  if (s == "sir") return BackendKind::sir;
  if (s == "stein-seq") return BackendKind::stein_seq;
  if (s == "stein-window") return BackendKind::stein_window;
  fail("unknown backend '" + s + "' (expected sir, stein-seq or stein-window)");
}

void read_svgd(const YAML::Node& s, SvgdConfig& out, const std::string& where) {
  check_keys(s, where, {"iterations", "initial_iterations", "step_size", "schedule", "bandwidth",
                        "adagrad_alpha", "adagrad_fudge"});
  read(s, "iterations", out.iterations, where);
  if (s["initial_iterations"]) {
    int l0 = 0;
    read(s, "initial_iterations", l0, where);
    out.initial_iterations = l0;
  }
  read(s, "step_size", out.step_size, where);
  read(s, "adagrad_alpha", out.adagrad_alpha, where);
  read(s, "adagrad_fudge", out.adagrad_fudge, where);
  std::string schedule;
  read(s, "schedule", schedule, where);
  if (schedule == "constant") {
    out.schedule = StepSchedule::constant;
  } else if (schedule == "adagrad") {
    out.schedule = StepSchedule::adagrad;
  } else if (!schedule.empty()) {
    fail(where + ".schedule must be constant or adagrad");
  }
  if (const YAML::Node bw = s["bandwidth"]) {
    if (!bw.IsScalar()) fail(where + ".bandwidth must be 'median' or a positive number");
    if (bw.Scalar() == "median") {
      out.kernel = KernelConfig::median();
    } else {
      double h = 0.0;
      read(s, "bandwidth", h, where);
      out.kernel = KernelConfig::fixed(h);
    }
  }
}

FilterSpec read_filter(const YAML::Node& f, std::size_t index) {
  const std::string where = "filters[" + std::to_string(index) + "]";
  check_keys(f, where, {"backend", "n", "window", "ess_threshold", "anchor", "init", "svgd", "name"});
  FilterSpec spec = default_filters()[1];
  spec.series.clear();
  std::string backend;
  read(f, "backend", backend, where);
  if (backend.empty()) fail(where + ".backend is required");
  spec.backend = parse_backend(backend);
  spec.window = spec.backend == BackendKind::stein_window ? 3 : 1;
  read(f, "n", spec.n, where);
  read(f, "window", spec.window, where);
  read(f, "ess_threshold", spec.ess_threshold, where);
  read(f, "name", spec.series, where);
  std::string anchor;
  read(f, "anchor", anchor, where);
  if (anchor == "filtered") {
    spec.anchor = AnchorSource::filtered;
  } else if (anchor == "previous-window") {
    spec.anchor = AnchorSource::previous_window;
  } else if (!anchor.empty()) {
    fail(where + ".anchor must be filtered or previous-window");
  }
  std::string init;
  read(f, "init", init, where);
  if (init == "dynamics") {
    spec.init = SteinInit::dynamics;
  } else if (init == "previous") {
    spec.init = SteinInit::previous;
  } else if (!init.empty()) {
    fail(where + ".init must be dynamics or previous");
  }
  if (const YAML::Node s = f["svgd"]) read_svgd(s, spec.svgd, where + ".svgd");
  if (spec.backend == BackendKind::sir && f["window"] && spec.window != 1) {
    fail(where + ": sir has no window");
  }
  if (spec.backend == BackendKind::stein_seq && f["window"] && spec.window != 1) {
    fail(where + ": stein-seq has window 1; use stein-window");
  }
  return spec;
}

std::string default_series(const FilterSpec& f) {
  if (f.backend == BackendKind::sir) return "sir";
  return "stein_T" + std::to_string(f.window);
}

}  // namespace

int ExperimentConfig::steps() const { return static_cast<int>(std::lround(horizon / dt())); }

int ExperimentConfig::step_at(double t) const {
  return static_cast<int>(std::lround(t / dt()));
}

void ExperimentConfig::validate() const {
  const double h = dt();
  if (!(h > 0.0) || !std::isfinite(h)) fail("model.dt must be positive");
  if (!(horizon > 0.0) || !std::isfinite(horizon)) fail("horizon must be positive");
  const double ratio = horizon / h;
  if (std::abs(ratio - std::round(ratio)) > 1e-9 * std::max(1.0, ratio) || std::round(ratio) < 1) {
    fail("horizon must be a positive multiple of dt");
  }
  if (runs < 1) fail("runs must be >= 1");
  if (jobs < 1) fail("jobs must be >= 1");
  if (reference_substeps < 1) fail("reference.substeps must be >= 1");
  if (filters.empty()) fail("at least one filter is required");

  std::set<std::string> names;
  for (std::size_t i = 0; i < filters.size(); ++i) {
    const FilterSpec& f = filters[i];
    const std::string where = "filters[" + std::to_string(i) + "]";
    if (f.n < 2) fail(where + ".n must be >= 2");
    if (f.window < 1) fail(where + ".window must be >= 1");
    if (!(f.ess_threshold >= 0.0 && f.ess_threshold <= 1.0)) {
      fail(where + ".ess_threshold must lie in [0, 1]");
    }
    try {
      f.svgd.validate();
    } catch (const std::invalid_argument& e) {
      fail(where + ".svgd: " + e.what());
    }
    const std::string series = f.series.empty() ? default_series(f) : f.series;
    if (!names.insert(series).second) fail("duplicate filter series '" + series + "'");
  }

  if (model == ModelKind::linear_gaussian) {
    if (!(linear.sigma > 0.0) || !(linear.obs_sigma > 0.0) || !(linear.prior_var > 0.0)) {
      fail("linear-gaussian sigma, obs_sigma and prior_var must be positive");
    }
  } else {
    if (!(benes.sigma_b > 0.0) || !(benes.h1 > 0.0) || !(benes.initial_var > 0.0)) {
      fail("benes sigma_b, h1 and initial_var must be positive");
    }
  }

  for (double t : snapshot_times) {
    if (!(t > 0.0) || t > horizon + 1e-12) fail("snapshot times must lie in (0, horizon]");
    if (std::abs(t / h - std::round(t / h)) > 1e-9 * std::max(1.0, t / h)) {
      fail("snapshot times must be multiples of dt");
    }
  }
  if (!(grid.hi > grid.lo)) fail("outputs.grid needs hi > lo");
  if (grid.points < 2) fail("outputs.grid needs at least 2 points");
  if (!(kde_bandwidth > 0.0)) fail("outputs.kde_bandwidth must be positive");
}

std::vector<FilterSpec> default_filters() {
  SvgdConfig svgd;
  svgd.iterations = 100;
  svgd.initial_iterations = 300;
  svgd.step_size = 0.01;
  svgd.schedule = StepSchedule::adagrad;
  svgd.kernel = KernelConfig::median();

  FilterSpec sir;
  sir.backend = BackendKind::sir;
  sir.svgd = svgd;
  sir.series = "sir";
  FilterSpec seq = sir;
  seq.backend = BackendKind::stein_seq;
  seq.series = "stein_T1";
  FilterSpec window = sir;
  window.backend = BackendKind::stein_window;
  window.window = 3;
  window.series = "stein_T3";
  return {sir, seq, window};
}

ExperimentConfig default_config(ModelKind model) {
  ExperimentConfig c;
  c.model = model;
  c.filters = default_filters();
  if (model == ModelKind::benes) c.snapshot_times = {0.2, 0.6, 1.0};
  return c;
}

ExperimentConfig parse_config(const std::string& text) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    fail(std::string("malformed YAML: ") + e.what());
  }
  if (!root || root.IsNull()) fail("empty configuration");
  check_keys(root, "config",
             {"model", "horizon", "runs", "base_seed", "jobs", "filters", "outputs", "reference"});

  const YAML::Node m = root["model"];
  if (!m) fail("model section is required");
  check_keys(m, "model", {"name", "dt", "params"});
  std::string name;
  read(m, "name", name, "model");
  if (name.empty()) fail("model.name is required");
  ExperimentConfig c = default_config(parse_model_name(name));
  double dt = c.dt();
  read(m, "dt", dt, "model");
  c.linear.dt = dt;
  c.benes.dt = dt;
  if (const YAML::Node p = m["params"]) {
    if (c.model == ModelKind::linear_gaussian) {
      read_linear(p, c.linear);
    } else {
      read_benes(p, c.benes);
    }
  }

  read(root, "horizon", c.horizon, "config");
  read(root, "runs", c.runs, "config");
  read(root, "base_seed", c.base_seed, "config");
  read(root, "jobs", c.jobs, "config");

  if (const YAML::Node f = root["filters"]) {
    if (!f.IsSequence()) fail("filters must be a list");
    c.filters.clear();
    for (std::size_t i = 0; i < f.size(); ++i) c.filters.push_back(read_filter(f[i], i));
  }
  for (auto& f : c.filters) {
    if (f.series.empty()) f.series = default_series(f);
  }

  if (const YAML::Node o = root["outputs"]) {
    check_keys(o, "outputs", {"directory", "snapshots", "grid", "kde_bandwidth"});
    std::string dir;
    read(o, "directory", dir, "outputs");
    if (!dir.empty()) c.out_dir = dir;
    read(o, "kde_bandwidth", c.kde_bandwidth, "outputs");
    if (const YAML::Node s = o["snapshots"]) {
      if (!s.IsSequence()) fail("outputs.snapshots must be a list of times");
      c.snapshot_times.clear();
      for (const auto& t : s) {
        try {
          c.snapshot_times.push_back(t.as<double>());
        } catch (const YAML::Exception&) {
          fail("outputs.snapshots: cannot read '" + t.Scalar() + "'");
        }
      }
    }
    if (const YAML::Node g = o["grid"]) {
      check_keys(g, "outputs.grid", {"lo", "hi", "points"});
      read(g, "lo", c.grid.lo, "outputs.grid");
      read(g, "hi", c.grid.hi, "outputs.grid");
      read(g, "points", c.grid.points, "outputs.grid");
    }
  }
  if (const YAML::Node r = root["reference"]) {
    check_keys(r, "reference", {"substeps"});
    read(r, "substeps", c.reference_substeps, "reference");
  }

  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail("cannot open config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

void apply_paper_preset(ExperimentConfig& config) {
  config.runs = 50;
  for (auto& f : config.filters) {
    f.n = 500;
    f.svgd.iterations = 100;
    f.svgd.step_size = 0.01;
  }
  config.linear.dt = 0.02;
  config.benes.dt = 0.02;
  config.horizon = 1.0;
}

ModelKind parse_model_name(const std::string& name) {
  if (name == "linear-gaussian") return ModelKind::linear_gaussian;
  if (name == "benes") return ModelKind::benes;
  fail("unknown model '" + name + "' (expected linear-gaussian or benes)");
}

std::string model_name(ModelKind kind) {
  return kind == ModelKind::linear_gaussian ? "linear-gaussian" : "benes";
}

std::string backend_name(BackendKind kind) {
  switch (kind) {
    case BackendKind::sir:
      return "sir";
    case BackendKind::stein_seq:
      return "stein-seq";
    case BackendKind::stein_window:
      return "stein-window";
  }
  return "?";
}

StateSpaceModel build_model(const ExperimentConfig& config) {
  if (config.model == ModelKind::linear_gaussian) {
    return discretize(linear_gaussian_spec(config.linear));
  }
  return discretize(benes_spec(config.benes));
}

}  // namespace steinpf
