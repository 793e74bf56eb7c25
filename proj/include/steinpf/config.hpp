#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "steinpf/filter.hpp"
#include "steinpf/model.hpp"
#include "steinpf/svgd.hpp"

namespace steinpf {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class ModelKind { linear_gaussian, benes };
enum class BackendKind { sir, stein_seq, stein_window };

struct FilterSpec {
  BackendKind backend = BackendKind::sir;
  int n = 200;
  int window = 1;              // stein-window only
  double ess_threshold = 0.5;  // sir only
  AnchorSource anchor = AnchorSource::filtered;
  SteinInit init = SteinInit::dynamics;
  SvgdConfig svgd{};
  std::string series;  // output series name; defaults to sir / stein_T<window>
};

struct GridSpec {
  double lo = -3.0;
  double hi = 3.0;
  int points = 601;
};

struct ExperimentConfig {
  ModelKind model = ModelKind::linear_gaussian;
  LinearGaussianParams linear{};
  BenesModelParams benes{};
  double horizon = 1.0;
  std::vector<FilterSpec> filters;
  int runs = 10;
  std::uint64_t base_seed = 1;
  int jobs = 1;
  std::filesystem::path out_dir = "out";
  std::vector<double> snapshot_times;
  GridSpec grid{};
  double kde_bandwidth = 0.1;
  /// Euler substeps per filter step when integrating the Kalman-Bucy reference.
  int reference_substeps = 20;

  double dt() const { return model == ModelKind::linear_gaussian ? linear.dt : benes.dt; }
  /// horizon / dt, rounded. validate() checks it is an integer.
  int steps() const;
  /// Step index (1-based) closest to time t.
  int step_at(double t) const;

  /// Throws ConfigError on the first violated constraint.
  void validate() const;
};

/// Defaults: sir, stein_T1 and stein_T3, each with n = 200, L = 100,
/// eps = 0.01, AdaGrad steps, median bandwidth and 300 first-step iterations.
std::vector<FilterSpec> default_filters();
ExperimentConfig default_config(ModelKind model = ModelKind::linear_gaussian);

/// Parse and validate a YAML experiment file. Unknown keys are errors.
ExperimentConfig load_config(const std::filesystem::path& path);
ExperimentConfig parse_config(const std::string& yaml_text);

/// n = 500 particles and M = 50 runs for every filter.
void apply_paper_preset(ExperimentConfig& config);

ModelKind parse_model_name(const std::string& name);
std::string model_name(ModelKind kind);
std::string backend_name(BackendKind kind);

/// Discrete-time model for the configured continuous-time spec.
StateSpaceModel build_model(const ExperimentConfig& config);

}  // namespace steinpf
