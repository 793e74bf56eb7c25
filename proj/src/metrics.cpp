#include "steinpf/metrics.hpp"

#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "steinpf/diagnostics.hpp"

namespace steinpf {

Moments empirical_moments(const ParticleEnsemble& ensemble) {
  const int n = ensemble.size();
  if (n < 2) throw std::invalid_argument("empirical covariance needs at least two particles");
  const Matrix& x = ensemble.particles();
  Vector mean = x.colwise().sum().transpose() / static_cast<double>(n);
  const Matrix centered = x.rowwise() - mean.transpose();
  Matrix cov = centered.transpose() * centered / static_cast<double>(n - 1);
  return {std::move(mean), std::move(cov)};
}

Moments weighted_moments(const Matrix& particles, const Vector& weights) {
  if (particles.rows() != weights.size()) {
    throw std::invalid_argument("particle and weight counts differ");
  }
  if (particles.rows() < 2) throw std::invalid_argument("weighted covariance needs two particles");
  Vector mean = particles.transpose() * weights;
  const Matrix centered = particles.rowwise() - mean.transpose();
  const double denom = 1.0 - weights.squaredNorm();
  Matrix cov = centered.transpose() * weights.asDiagonal() * centered;
  if (denom > 0.0) {
    cov /= denom;
  } else {
    cov.setZero();  // point mass
  }
  return {std::move(mean), std::move(cov)};
}

double effective_sample_size(const Vector& weights) {
  if (weights.size() == 0) throw std::invalid_argument("empty weight vector");
  if ((weights.array() < 0.0).any() || !weights.allFinite()) {
    throw std::invalid_argument("weights must be finite and non-negative");
  }
  const double total = weights.sum();
  if (std::abs(total - 1.0) > 1e-9) {
    std::ostringstream os;
    os << "weights are not normalized (sum = " << total << ")";
    throw std::invalid_argument(os.str());
  }
  return 1.0 / weights.squaredNorm();
}

void RunRecord::check_consistent() const {
  const std::size_t k = time.size();
  if (mean.size() != k || covariance.size() != k || reference_mean.size() != k ||
      reference_covariance.size() != k || wall_seconds.size() != k || ess.size() != k) {
    throw std::logic_error("run record arrays have inconsistent lengths");
  }
}

MseCurves mse_curves(std::span<const RunRecord> records) {
  if (records.empty()) throw std::invalid_argument("mse_curves needs at least one record");
  const std::size_t steps = records.front().steps();
  for (const auto& r : records) {
    r.check_consistent();
    if (r.steps() != steps) throw std::invalid_argument("records have different step counts");
  }
  MseCurves out{std::vector<double>(steps, 0.0), std::vector<double>(steps, 0.0)};
  for (const auto& r : records) {
    for (std::size_t t = 0; t < steps; ++t) {
      out.mean[t] += (r.mean[t] - r.reference_mean[t]).squaredNorm();
      out.covariance[t] += (r.covariance[t] - r.reference_covariance[t]).squaredNorm();
    }
  }
  const auto m = static_cast<double>(records.size());
  for (std::size_t t = 0; t < steps; ++t) {
    out.mean[t] /= m;
    out.covariance[t] /= m;
  }
  return out;
}

std::vector<double> kde(std::span<const double> samples, std::span<const double> weights,
                        std::span<const double> grid, double bandwidth) {
  if (!(bandwidth > 0.0)) throw std::invalid_argument("KDE bandwidth must be positive");
  if (grid.empty()) throw std::invalid_argument("KDE grid is empty");
  if (samples.empty()) throw std::invalid_argument("KDE needs at least one sample");
  if (weights.size() != samples.size()) throw std::invalid_argument("KDE weight count mismatch");
  const double norm = 1.0 / (bandwidth * std::sqrt(2.0 * std::numbers::pi));
  std::vector<double> out(grid.size(), 0.0);
  for (std::size_t g = 0; g < grid.size(); ++g) {
    double acc = 0.0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const double u = (grid[g] - samples[i]) / bandwidth;
      acc += weights[i] * std::exp(-0.5 * u * u);
    }
    out[g] = norm * acc;
  }
  return out;
}

std::vector<double> kde(std::span<const double> samples, std::span<const double> grid,
                        double bandwidth) {
  const std::vector<double> w(samples.size(),
                              samples.empty() ? 0.0 : 1.0 / static_cast<double>(samples.size()));
  return kde(samples, w, grid, bandwidth);
}

double trapezoid(std::span<const double> f, std::span<const double> grid) {
  if (f.size() != grid.size()) throw std::invalid_argument("trapezoid size mismatch");
  double s = 0.0;
  for (std::size_t i = 1; i < grid.size(); ++i) {
    s += 0.5 * (f[i] + f[i - 1]) * (grid[i] - grid[i - 1]);
  }
  return s;
}

double l1_density_distance(std::span<const double> a, std::span<const double> b,
                           std::span<const double> grid) {
  if (a.size() != grid.size() || b.size() != grid.size()) {
    throw std::invalid_argument("densities must share the grid");
  }
  if (grid.size() < 10) warn("L1 distance on fewer than 10 grid points is unreliable");
  std::vector<double> diff(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) diff[i] = std::abs(a[i] - b[i]);
  return trapezoid(diff, grid);
}

std::vector<double> linspace(double lo, double hi, int n) {
  if (n < 2) throw std::invalid_argument("linspace needs at least two points");
  std::vector<double> out(static_cast<std::size_t>(n));
  const double step = (hi - lo) / (n - 1);
  for (int i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = lo + step * i;
  out.back() = hi;
  return out;
}

}  // namespace steinpf
