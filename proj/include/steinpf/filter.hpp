#pragma once

#include <deque>
#include <span>
#include <variant>
#include <vector>

#include "steinpf/metrics.hpp"
#include "steinpf/model.hpp"
#include "steinpf/rng.hpp"
#include "steinpf/svgd.hpp"

namespace steinpf {

/// Particles with normalized importance weights (SIR only).
struct WeightedEnsemble {
  Matrix particles;
  Vector weights;

  int size() const { return static_cast<int>(particles.rows()); }
};

/// n trajectories of `window` consecutive states, stored as n x (window * d)
/// with blocks ordered oldest to newest.
class TrajectoryEnsemble {
 public:
  TrajectoryEnsemble() = default;
  TrajectoryEnsemble(Matrix particles, int state_dim);

  int size() const { return static_cast<int>(particles_.rows()); }
  int state_dim() const { return state_dim_; }
  int window() const { return state_dim_ == 0 ? 0 : static_cast<int>(particles_.cols()) / state_dim_; }
  const Matrix& particles() const { return particles_; }

  /// n x d block k, 0 = oldest.
  Matrix block(int k) const;
  ParticleEnsemble newest() const { return ParticleEnsemble(block(window() - 1)); }

 private:
  Matrix particles_;
  int state_dim_ = 0;
};

/// Which particles stand in for p(x_t | Z_t) in the steady-phase window target.
enum class AnchorSource {
  filtered,         // the filter output produced at that time step
  previous_window,  // the oldest block of the previous window (already smoothed)
};

/// Starting ensemble for each SVGD run after the first step.
enum class SteinInit {
  dynamics,  // x_i ~ p(. | x_i^t)
  previous,  // x_i = x_i^t
};

struct SirBackend {
  WeightedEnsemble ensemble;
  double ess_threshold = 0.5;
  int degeneracy_events = 0;
  bool resampled = false;  // resampling happened on the last step
};

struct SteinSequentialBackend {
  ParticleEnsemble ensemble;
  SteinInit init = SteinInit::dynamics;
};

struct SteinWindowBackend {
  TrajectoryEnsemble trajectories;
  int max_window = 1;
  AnchorSource anchor = AnchorSource::filtered;
  std::vector<Vector> observations;  // one per stored block, oldest first
  std::deque<Matrix> filtered;       // last max_window filter outputs, oldest first
};

using FilterBackend = std::variant<SirBackend, SteinSequentialBackend, SteinWindowBackend>;

/// Filter state between observations. time_index counts assimilated
/// observations; a freshly constructed state (time_index 0) initializes from
/// p(x_1) on its first step.
struct FilterState {
  FilterBackend backend;
  int time_index = 0;
  int particle_count = 0;

  static FilterState sir(int n, double ess_threshold = 0.5);
  static FilterState stein_sequential(int n, SteinInit init = SteinInit::dynamics);
  static FilterState stein_window(int n, int max_window,
                                  AnchorSource anchor = AnchorSource::filtered);

  /// n equally weighted samples of the current posterior. SIR resamples a
  /// copy; its stored weights are untouched.
  ParticleEnsemble posterior_ensemble(Rng& rng) const;
  /// Weighted moments for SIR, empirical moments for the Stein backends.
  Moments posterior_moments() const;
};

// ---------------------------------------------------------------------------
// SIR

/// One uniform offset u ~ U[0, 1/n) and strides of 1/n through the
/// cumulative weights. Output weights are exactly 1/n.
WeightedEnsemble resample_systematic(const WeightedEnsemble& ensemble, Rng& rng);
/// Same scheme with the offset given explicitly; offset must lie in [0, 1/n).
WeightedEnsemble resample_systematic(const WeightedEnsemble& ensemble, double offset);

/// Propagate through the dynamics (or sample p(x_1) on the first step),
/// reweight by p(z | x), and resample when ESS < ess_threshold * n.
FilterState sir_step(FilterState state, const StateSpaceModel& model, const Vector& z, Rng& rng);

// ---------------------------------------------------------------------------
// Posterior targets

/// Gaussian mixture (1/n) sum_i N(x; f(x_i), Q) over propagated particles.
/// The gradient uses max-shifted softmax responsibilities.
class TransitionMixture {
 public:
  TransitionMixture(const ParticleEnsemble& previous, const StateSpaceModel& model);

  int dim() const { return dim_; }
  double log_density(const Vector& x) const;
  Vector grad_log_density(const Vector& x) const;

 private:
  /// Fills the responsibilities and returns the log-sum-exp of the
  /// unnormalized component log-densities.
  double responsibilities(const Vector& x, std::vector<double>& s) const;

  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> means_;
  Matrix precision_;
  double log_norm_ = 0.0;
  int dim_ = 0;
};

/// log p(z_1 | x) + log p(x).
LogDensityTarget initial_target(const StateSpaceModel& model, const Vector& z);

/// log[(1/n) sum_i p(x | x_i)] + log p(z | x).
LogDensityTarget sequential_target(const ParticleEnsemble& previous, const StateSpaceModel& model,
                                   const Vector& z);

enum class WindowPhase { warmup, steady };

/// Trajectory target over w = observations.size() consecutive states.
/// warmup: log p(x_1) + sum_k log p(z_k | x_k) + sum_{k>=2} log p(x_k | x_{k-1}).
/// steady: the p(x_1) term is replaced by the transition mixture anchored at
/// `anchor`; the constant posterior weight 1/n of each anchor particle is dropped.
LogDensityTarget window_target(WindowPhase phase, const ParticleEnsemble* anchor,
                               const StateSpaceModel& model, std::span<const Vector> observations);

// ---------------------------------------------------------------------------
// Stein filters

/// Sample n particles from p(x_1) and run SVGD against p(z_1 | x) p(x).
FilterState stein_initial_step(const StateSpaceModel& model, const Vector& z, int n,
                               const SvgdConfig& svgd, Rng& rng);

/// One sequential Stein step. A state with time_index 0 takes the initial step.
FilterState stein_sequential_step(FilterState state, const StateSpaceModel& model,
                                  const Vector& z, const SvgdConfig& svgd, Rng& rng);

/// One sliding-window Stein step over at most max_window state blocks.
FilterState stein_window_step(FilterState state, const StateSpaceModel& model, const Vector& z,
                              const SvgdConfig& svgd, Rng& rng);

/// Dispatch on the backend held by the state. The SVGD configuration is
/// ignored by SIR.
FilterState filter_step(FilterState state, const StateSpaceModel& model, const Vector& z,
                        const SvgdConfig& svgd, Rng& rng);

}  // namespace steinpf
