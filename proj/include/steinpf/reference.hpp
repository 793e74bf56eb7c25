#pragma once

#include <span>

namespace steinpf {

/// Scalar linear model dx = drift x dt + sigma dW, dy = gain x dt + obs_sigma dV.
/// The defaults are the linear example: -1/2, 1, 3, 1/2.
struct KalmanBucyParams {
  double drift = -0.5;
  double sigma = 1.0;
  double gain = 3.0;
  double obs_sigma = 0.5;
};

struct KalmanState {
  double mean = 0.0;
  double variance = 1.0;
  double time = 0.0;
};

/// One explicit Euler step of the Kalman-Bucy mean SDE and Riccati ODE:
///   mean += drift*mean*dt + K (dy - gain*mean*dt),  K = variance*gain/obs_sigma^2
///   variance += (2*drift*variance + sigma^2 - (gain*variance/obs_sigma)^2) dt
/// Throws std::domain_error if the variance leaves (0, inf).
KalmanState kalman_step(const KalmanState& state, double dy, double dt,
                        const KalmanBucyParams& params = {});

/// Positive root of the stationary Riccati equation.
double riccati_fixed_point(const KalmanBucyParams& params = {});

struct BenesParams {
  double mu = 0.1;
  double sigma_b = 0.3;
  double h1 = 5.0;
  double h2 = 0.0;
  double x0 = 0.0;
};

/// c N(a - b, sigma_sq) + (1 - c) N(a + b, sigma_sq).
struct BenesPosterior {
  double a = 0.0;
  double b = 0.0;
  double sigma_sq = 1.0;
  double c = 0.5;
  double psi = 0.0;

  double mean() const { return a + b * (1.0 - 2.0 * c); }
  double variance() const;
};

/// Closed-form Benes posterior at time t from observation increments
/// dy_j over [j dt, (j+1) dt), dt = t / increments.size(). The stochastic
/// integral Psi_t is a left-point sum. Throws std::invalid_argument for t <= 0.
BenesPosterior benes_posterior(std::span<const double> increments, double t,
                               const BenesParams& params = {});

double mixture_density(const BenesPosterior& post, double x);

}  // namespace steinpf
