#include "steinpf/svgd.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <vector>

#include "steinpf/diagnostics.hpp"

namespace steinpf {

void SvgdConfig::validate() const {
  if (iterations < 0) throw std::invalid_argument("SVGD iterations must be >= 0");
  if (initial_iterations && *initial_iterations < 0) {
    throw std::invalid_argument("SVGD initial iterations must be >= 0");
  }
  if (!(step_size > 0.0) || !std::isfinite(step_size)) {
    throw std::invalid_argument("SVGD step size must be positive");
  }
  if (kernel.policy == BandwidthPolicy::fixed &&
      (!(kernel.bandwidth > 0.0) || !std::isfinite(kernel.bandwidth))) {
    throw std::invalid_argument("fixed kernel bandwidth must be positive");
  }
  if (!(adagrad_fudge > 0.0)) throw std::invalid_argument("AdaGrad fudge must be positive");
  if (!(adagrad_alpha >= 0.0 && adagrad_alpha < 1.0)) {
    throw std::invalid_argument("AdaGrad alpha must lie in [0, 1)");
  }
}

namespace {

double squared_distance(const Matrix& x, int a, int b) {
  double s = 0.0;
  for (Eigen::Index k = 0; k < x.cols(); ++k) {
    const double diff = x(a, k) - x(b, k);
    s += diff * diff;
  }
  return s;
}

}  // namespace

ResolvedBandwidth resolve_bandwidth(const ParticleEnsemble& ensemble,
                                    const KernelConfig& config) {
  if (config.policy == BandwidthPolicy::fixed) {
    if (!(config.bandwidth > 0.0)) throw std::invalid_argument("bandwidth must be positive");
    return {config.bandwidth, false};
  }
  const int n = ensemble.size();
  if (n < 2) return {1.0, true};

  const Matrix& x = ensemble.particles();
  std::vector<double> dist;
  dist.reserve(static_cast<std::size_t>(n) * (n - 1) / 2);
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) dist.push_back(std::sqrt(squared_distance(x, i, j)));
  }
  const std::size_t mid = dist.size() / 2;
  std::nth_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(mid), dist.end());
  double med = dist[mid];
  if (dist.size() % 2 == 0) {
    const double lower = *std::max_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(mid));
    med = 0.5 * (med + lower);
  }
  const double h = med * med / std::log(static_cast<double>(n) + 1.0);
  if (!(h > 0.0) || !std::isfinite(h)) {
    warn("median bandwidth heuristic degenerate (coincident particles); using h = 1");
    return {1.0, true};
  }
  return {h, false};
}

KernelEvaluation kernel_matrix(const ParticleEnsemble& ensemble, const KernelConfig& config) {
  const int n = ensemble.size();
  if (n == 0) throw std::invalid_argument("kernel_matrix needs at least one particle");
  const int d = ensemble.dim();
  const auto bw = resolve_bandwidth(ensemble, config);
  const Matrix& x = ensemble.particles();

  KernelEvaluation out;
  out.bandwidth = bw.h;
  out.bandwidth_fallback = bw.fallback;
  out.values.resize(n, n);
  out.gradients.resize(static_cast<Eigen::Index>(n) * n, d);
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < n; ++i) {
      const double k = std::exp(-squared_distance(x, j, i) / bw.h);
      out.values(j, i) = k;
      const auto row = static_cast<Eigen::Index>(j) * n + i;
      for (int c = 0; c < d; ++c) out.gradients(row, c) = -(2.0 / bw.h) * (x(j, c) - x(i, c)) * k;
    }
  }
  return out;
}

namespace {

Matrix target_gradients(const ParticleEnsemble& ensemble, const LogDensityTarget& target) {
  const int n = ensemble.size();
  Matrix g(n, ensemble.dim());
  for (int j = 0; j < n; ++j) {
    const Vector gj = target.grad_log_density(ensemble.particle(j));
    if (gj.size() != ensemble.dim()) {
      throw std::invalid_argument("target gradient has the wrong dimension");
    }
    if (!gj.allFinite()) {
      std::ostringstream os;
      os << "non-finite target gradient at particle " << j;
      throw NonFiniteGradient(j, os.str());
    }
    g.row(j) = gj.transpose();
  }
  return g;
}

Matrix direction_from(const ParticleEnsemble& ensemble, const Matrix& grads, double h) {
  const int n = ensemble.size();
  const int d = ensemble.dim();
  const Matrix& x = ensemble.particles();

  // The kernel is symmetric, so each pair is exponentiated once.
  Matrix k(n, n);
  for (int j = 0; j < n; ++j) {
    k(j, j) = 1.0;
    for (int i = j + 1; i < n; ++i) {
      const double v = std::exp(-squared_distance(x, j, i) / h);
      k(j, i) = v;
      k(i, j) = v;
    }
  }

  Matrix phi = Matrix::Zero(n, d);
  const double scale = 2.0 / h;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const double kji = k(j, i);
      for (int c = 0; c < d; ++c) {
        phi(i, c) += kji * grads(j, c) - scale * (x(j, c) - x(i, c)) * kji;
      }
    }
  }
  return phi / static_cast<double>(n);
}

}  // namespace

Matrix update_direction(const ParticleEnsemble& ensemble, const LogDensityTarget& target,
                        const KernelConfig& config) {
  if (ensemble.empty()) throw std::invalid_argument("update_direction needs particles");
  if (target.dim != ensemble.dim()) {
    std::ostringstream os;
    os << "target dimension " << target.dim << " does not match ensemble dimension "
       << ensemble.dim();
    throw std::invalid_argument(os.str());
  }
  const Matrix grads = target_gradients(ensemble, target);
  return direction_from(ensemble, grads, resolve_bandwidth(ensemble, config).h);
}

ParticleEnsemble run(ParticleEnsemble ensemble, const LogDensityTarget& target,
                     const SvgdConfig& config, [[maybe_unused]] Rng& rng) {
  config.validate();
  if (config.iterations == 0) return ensemble;
  if (target.dim != ensemble.dim()) {
    throw std::invalid_argument("target dimension does not match ensemble dimension");
  }

  Matrix history;
  if (config.schedule == StepSchedule::adagrad) {
    history = Matrix::Zero(ensemble.size(), ensemble.dim());
  }
  for (int iter = 0; iter < config.iterations; ++iter) {
    const Matrix phi = update_direction(ensemble, target, config.kernel);
    if (config.schedule == StepSchedule::constant) {
      ensemble.particles() += config.step_size * phi;
    } else {
      if (iter == 0) {
        history = phi.array().square();
      } else {
        history = config.adagrad_alpha * history.array() +
                  (1.0 - config.adagrad_alpha) * phi.array().square();
      }
      ensemble.particles().array() +=
          config.step_size * phi.array() / (config.adagrad_fudge + history.array().sqrt());
    }
    const Matrix& x = ensemble.particles();
    for (int i = 0; i < ensemble.size(); ++i) {
      const double norm = x.row(i).norm();
      if (!std::isfinite(norm) || norm > kDivergenceNorm) {
        std::ostringstream os;
        os << "SVGD diverged at iteration " << iter << " (particle " << i << ", norm " << norm
           << ")";
        throw SvgdDivergence(iter, os.str());
      }
    }
  }
  return ensemble;
}

}  // namespace steinpf
