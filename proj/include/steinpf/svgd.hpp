#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>

#include "steinpf/model.hpp"
#include "steinpf/rng.hpp"

namespace steinpf {

/// Unnormalized log-density q over R^dim. Only the gradient is needed by
/// SVGD; log_density is optional and used for diagnostics and tests.
struct LogDensityTarget {
  int dim = 0;
  std::function<Vector(const Vector&)> grad_log_density;
  std::function<double(const Vector&)> log_density;
};

enum class BandwidthPolicy { fixed, median };

/// Gaussian kernel k(x, x') = exp(-|x - x'|^2 / h).
struct KernelConfig {
  BandwidthPolicy policy = BandwidthPolicy::median;
  double bandwidth = 1.0;  // used when policy == fixed

  static KernelConfig fixed(double h) { return {BandwidthPolicy::fixed, h}; }
  static KernelConfig median() { return {BandwidthPolicy::median, 1.0}; }
};

/// constant: eps_l = eps.
/// adagrad: per-coordinate step eps / (fudge + sqrt(G_l)) with the running
/// average G_l = alpha G_{l-1} + (1 - alpha) phi_l^2, G_0 = phi_0^2.
enum class StepSchedule { constant, adagrad };

struct SvgdConfig {
  int iterations = 100;
  /// Iteration count for the first filter step, whose particles start from
  /// the prior rather than from a propagated posterior. Unset: iterations.
  std::optional<int> initial_iterations;
  double step_size = 0.01;
  StepSchedule schedule = StepSchedule::constant;
  double adagrad_fudge = 1e-6;
  double adagrad_alpha = 0.9;
  KernelConfig kernel{};

  /// Throws std::invalid_argument on L < 0, eps <= 0 or h <= 0.
  void validate() const;
};

/// n equally weighted particles, one per row.
class ParticleEnsemble {
 public:
  ParticleEnsemble() = default;
  explicit ParticleEnsemble(Matrix particles) : particles_(std::move(particles)) {}

  int size() const { return static_cast<int>(particles_.rows()); }
  int dim() const { return static_cast<int>(particles_.cols()); }
  bool empty() const { return particles_.rows() == 0; }

  const Matrix& particles() const { return particles_; }
  Matrix& particles() { return particles_; }
  Vector particle(int i) const { return particles_.row(i).transpose(); }

  bool operator==(const ParticleEnsemble&) const = default;

 private:
  Matrix particles_;
};

struct ResolvedBandwidth {
  double h = 1.0;
  bool fallback = false;  // median heuristic degenerated to h = 1
};

/// Median heuristic h = med^2 / log(n + 1), med the median pairwise distance.
/// Falls back to h = 1 (and warns) when med = 0 or n < 2.
ResolvedBandwidth resolve_bandwidth(const ParticleEnsemble& ensemble, const KernelConfig& config);

struct KernelEvaluation {
  Matrix values;     // n x n, values(j, i) = k(x_j, x_i)
  Matrix gradients;  // (n*n) x dim, row j*n + i = grad_{x_j} k(x_j, x_i)
  double bandwidth = 1.0;
  bool bandwidth_fallback = false;

  Vector gradient(int j, int i) const {
    return gradients.row(static_cast<Eigen::Index>(j) * values.rows() + i).transpose();
  }
};

KernelEvaluation kernel_matrix(const ParticleEnsemble& ensemble, const KernelConfig& config);

class NonFiniteGradient : public std::runtime_error {
 public:
  NonFiniteGradient(int particle, const std::string& what)
      : std::runtime_error(what), particle_(particle) {}
  int particle() const { return particle_; }

 private:
  int particle_;
};

class SvgdDivergence : public std::runtime_error {
 public:
  SvgdDivergence(int iteration, const std::string& what)
      : std::runtime_error(what), iteration_(iteration) {}
  int iteration() const { return iteration_; }

 private:
  int iteration_;
};

/// Row i is phi(x_i) = (1/n) sum_j [k(x_j, x_i) grad log q(x_j) + grad_{x_j} k(x_j, x_i)].
Matrix update_direction(const ParticleEnsemble& ensemble, const LogDensityTarget& target,
                        const KernelConfig& config);

/// Particle norm above which run() reports divergence.
inline constexpr double kDivergenceNorm = 1e8;

/// L iterations of x_i <- x_i + eps_l phi(x_i). The random stream is unused:
/// SVGD is deterministic given its initial ensemble.
ParticleEnsemble run(ParticleEnsemble initial, const LogDensityTarget& target,
                     const SvgdConfig& config, Rng& rng);

}  // namespace steinpf
