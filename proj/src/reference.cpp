#include "steinpf/reference.hpp"

#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace steinpf {

KalmanState kalman_step(const KalmanState& s, double dy, double dt, const KalmanBucyParams& p) {
  if (!(dt > 0.0)) throw std::invalid_argument("Kalman step needs dt > 0");
  const double r = p.obs_sigma * p.obs_sigma;
  const double gain = s.variance * p.gain / r;
  KalmanState next;
  next.mean = s.mean + p.drift * s.mean * dt + gain * (dy - p.gain * s.mean * dt);
  next.variance = s.variance + (2.0 * p.drift * s.variance + p.sigma * p.sigma -
                                p.gain * p.gain * s.variance * s.variance / r) * dt;
  next.time = s.time + dt;
  if (!(next.variance > 0.0) || !std::isfinite(next.variance)) {
    std::ostringstream os;
    os << "Riccati step produced variance " << next.variance << " at t = " << next.time
       << "; dt = " << dt << " is too large";
    throw std::domain_error(os.str());
  }
  return next;
}

double riccati_fixed_point(const KalmanBucyParams& p) {
  // (g^2/r) S^2 - 2 drift S - sigma^2 = 0
  const double qa = p.gain * p.gain / (p.obs_sigma * p.obs_sigma);
  const double qb = -2.0 * p.drift;
  const double qc = -p.sigma * p.sigma;
  return (-qb + std::sqrt(qb * qb - 4.0 * qa * qc)) / (2.0 * qa);
}

double BenesPosterior::variance() const {
  const double m = mean();
  const double second = sigma_sq + c * (a - b) * (a - b) + (1.0 - c) * (a + b) * (a + b);
  return second - m * m;
}

BenesPosterior benes_posterior(std::span<const double> increments, double t,
                               const BenesParams& p) {
  if (!(t > 0.0)) throw std::invalid_argument("Benes posterior is undefined at t <= 0");
  if (!(p.sigma_b > 0.0) || !(p.h1 > 0.0)) {
    throw std::invalid_argument("Benes parameters need sigma_b > 0 and h1 > 0");
  }
  const double w = p.h1 * p.sigma_b;
  const auto k = increments.size();

  // sinh(w s) / sinh(w t) = exp(w (s - t)) (1 - exp(-2 w s)) / (1 - exp(-2 w t)),
  // written this way so long horizons do not overflow.
  double psi = 0.0;
  if (k > 0) {
    const double dt = t / static_cast<double>(k);
    const double denom = -std::expm1(-2.0 * w * t);
    for (std::size_t j = 0; j < k; ++j) {
      const double s = static_cast<double>(j) * dt;
      psi += std::exp(w * (s - t)) * (-std::expm1(-2.0 * w * s)) / denom * increments[j];
    }
  }

  const double th = std::tanh(w * t);
  BenesPosterior post;
  post.psi = psi;
  post.a = p.sigma_b * psi * th + (p.h2 + p.x0) / std::cosh(w * t) - p.h2;
  post.b = p.mu / p.h1 * th;
  post.sigma_sq = p.sigma_b / p.h1 * th;
  // Component weights of cosh(mu x / sigma_b) N(x; a, sigma_sq): the a + b
  // component carries exp(2 a b / sigma_sq) times the weight of a - b.
  post.c = 1.0 / (1.0 + std::exp(2.0 * post.a * post.b / post.sigma_sq));
  return post;
}

double mixture_density(const BenesPosterior& post, double x) {
  const double norm = 1.0 / std::sqrt(2.0 * std::numbers::pi * post.sigma_sq);
  const double lo = x - (post.a - post.b);
  const double hi = x - (post.a + post.b);
  return post.c * norm * std::exp(-0.5 * lo * lo / post.sigma_sq) +
         (1.0 - post.c) * norm * std::exp(-0.5 * hi * hi / post.sigma_sq);
}

}  // namespace steinpf
