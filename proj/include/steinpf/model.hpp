#pragma once

#include <Eigen/Dense>

#include <functional>

#include "steinpf/rng.hpp"

namespace steinpf {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using VectorMap = std::function<Vector(const Vector&)>;
using JacobianMap = std::function<Matrix(const Vector&)>;

/// Zero-mean Gaussian N(0, cov) with cached Cholesky factor and precision.
class GaussianNoise {
 public:
  /// Throws std::invalid_argument unless cov is square, symmetric and
  /// positive definite.
  explicit GaussianNoise(Matrix cov);

  int dim() const { return static_cast<int>(cov_.rows()); }
  const Matrix& covariance() const { return cov_; }
  const Matrix& precision() const { return precision_; }
  const Matrix& cholesky_factor() const { return chol_; }

  /// Normalized log-density of the residual.
  double log_density(const Vector& residual) const;
  /// -precision * residual.
  Vector grad_log_density(const Vector& residual) const;
  Vector sample(Rng& rng) const;

 private:
  Matrix cov_;
  Matrix chol_;
  Matrix precision_;
  double log_norm_ = 0.0;
};

struct InitialDistribution {
  Vector mean;
  GaussianNoise noise;
};

/// x' = f(x) + w,  w ~ N(0, Q).
struct GaussianTransitionModel {
  VectorMap drift;
  JacobianMap drift_jacobian;
  GaussianNoise noise;
};

/// z = h(x) + v,  v ~ N(0, R).
struct GaussianObservationModel {
  VectorMap obs_map;
  JacobianMap obs_jacobian;
  GaussianNoise noise;
};

/// Discrete-time system with Gaussian initial law, Gaussian transitions and
/// Gaussian observations. Gradients are with respect to the state argument.
class StateSpaceModel {
 public:
  StateSpaceModel(InitialDistribution initial, GaussianTransitionModel transition,
                  GaussianObservationModel observation);

  int state_dim() const { return state_dim_; }
  int obs_dim() const { return obs_dim_; }

  const InitialDistribution& initial() const { return initial_; }
  const GaussianTransitionModel& transition() const { return transition_; }
  const GaussianObservationModel& observation() const { return observation_; }

  Vector drift(const Vector& x) const { return transition_.drift(x); }

  double log_initial(const Vector& x) const;
  Vector grad_log_initial(const Vector& x) const;

  double log_transition(const Vector& x_next, const Vector& x_prev) const;
  /// Gradient with respect to x_next.
  Vector grad_log_transition(const Vector& x_next, const Vector& x_prev) const;
  /// Gradient with respect to x_prev: J_f(x_prev)^T Q^{-1} (x_next - f(x_prev)).
  Vector grad_log_transition_prev(const Vector& x_next, const Vector& x_prev) const;

  double log_likelihood(const Vector& z, const Vector& x) const;
  /// J_h(x)^T R^{-1} (z - h(x)).
  Vector grad_log_likelihood(const Vector& z, const Vector& x) const;

  Vector sample_initial(Rng& rng) const;
  Vector sample_transition(const Vector& x, Rng& rng) const;
  Vector sample_observation(const Vector& x, Rng& rng) const;

 private:
  void check_state(const Vector& x) const;

  InitialDistribution initial_;
  GaussianTransitionModel transition_;
  GaussianObservationModel observation_;
  int state_dim_;
  int obs_dim_;
};

/// Continuous-time model
///   dx = a(x) dt + sigma dW,   dy = h_c(x) dt + sigma_V dV
/// together with the Euler step dt and the initial Gaussian law.
struct ContinuousModelSpec {
  VectorMap sde_drift;
  JacobianMap sde_drift_jacobian;
  Matrix sde_diffusion;
  VectorMap obs_drift;
  JacobianMap obs_drift_jacobian;
  Matrix obs_diffusion;
  double dt = 0.0;
  Vector initial_mean;
  Matrix initial_cov;
};

/// Euler discretization with z_t = (y_{t+dt} - y_t) / dt:
///   f(x) = x + a(x) dt,  Q = sigma sigma^T dt,  R = sigma_V sigma_V^T / dt.
StateSpaceModel discretize(const ContinuousModelSpec& spec);

struct LinearGaussianParams {
  double drift_coeff = -0.5;
  double sigma = 1.0;
  double obs_gain = 3.0;
  double obs_sigma = 0.5;
  double prior_mean = 1.0;
  double prior_var = 1.0;
  double dt = 0.02;
};

struct BenesModelParams {
  double mu = 0.1;
  double sigma_b = 0.3;
  double h1 = 5.0;
  double h2 = 0.0;
  double x0 = 0.0;
  /// Variance of the widened point mass at x0 used as the filters' prior.
  double initial_var = 1e-4;
  double dt = 0.02;
};

/// dx = drift_coeff x dt + sigma dW,  dy = obs_gain x dt + obs_sigma dV.
ContinuousModelSpec linear_gaussian_spec(const LinearGaussianParams& p = {});

/// dx = mu sigma_b tanh(mu x / sigma_b) dt + sigma_b dW,
/// dy = (h1 x + h1 h2) dt + dV.
ContinuousModelSpec benes_spec(const BenesModelParams& p = {});

struct Simulation {
  Matrix states;        // steps x d, row t is x_{t+1}
  Matrix observations;  // steps x l, row t is z_{t+1}
};

/// x_1 ~ p(x_1); z_t ~ p(z_t | x_t); x_{t+1} ~ p(x_{t+1} | x_t).
Simulation simulate(const StateSpaceModel& model, int steps, Rng& rng);

}  // namespace steinpf
