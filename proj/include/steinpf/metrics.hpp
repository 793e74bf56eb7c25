#pragma once

#include <span>
#include <vector>

#include "steinpf/model.hpp"
#include "steinpf/svgd.hpp"

namespace steinpf {

struct Moments {
  Vector mean;
  Matrix covariance;
};

/// Sample mean and unbiased (1/(n-1)) covariance. Throws for n < 2.
Moments empirical_moments(const ParticleEnsemble& ensemble);

/// Weighted mean and covariance sum_i w_i (x_i - m)(x_i - m)^T / (1 - sum_i w_i^2).
/// Reduces to empirical_moments for uniform weights.
Moments weighted_moments(const Matrix& particles, const Vector& weights);

/// 1 / sum_i w_i^2 for normalized, non-negative weights.
double effective_sample_size(const Vector& weights);

/// Per-step filter output for one run and one backend.
struct RunRecord {
  std::vector<double> time;
  std::vector<Vector> mean;
  std::vector<Matrix> covariance;
  std::vector<Vector> reference_mean;
  std::vector<Matrix> reference_covariance;
  std::vector<double> wall_seconds;
  std::vector<double> ess;  // NaN for equally weighted backends

  std::size_t steps() const { return time.size(); }
  /// Throws std::logic_error unless every array has steps() entries.
  void check_consistent() const;
};

struct MseCurves {
  std::vector<double> mean;
  std::vector<double> covariance;
};

/// mse_t = (1/M) sum_m |estimate_{t,m} - reference_{t,m}|^2, squared Frobenius
/// norm for the covariance. Each record carries its own reference.
MseCurves mse_curves(std::span<const RunRecord> records);

/// (1/n) sum_i N(x; x_i, bandwidth^2) on each grid point.
std::vector<double> kde(std::span<const double> samples, std::span<const double> grid,
                        double bandwidth);
/// Weighted variant: sum_i w_i N(x; x_i, bandwidth^2).
std::vector<double> kde(std::span<const double> samples, std::span<const double> weights,
                        std::span<const double> grid, double bandwidth);

/// Trapezoid integral of |a - b| over the grid.
double l1_density_distance(std::span<const double> a, std::span<const double> b,
                           std::span<const double> grid);

/// Trapezoid integral of f over the grid.
double trapezoid(std::span<const double> f, std::span<const double> grid);

/// n points evenly spaced on [lo, hi].
std::vector<double> linspace(double lo, double hi, int n);

}  // namespace steinpf
