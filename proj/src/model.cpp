#include "steinpf/model.hpp"

#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <utility>

namespace steinpf {

GaussianNoise::GaussianNoise(Matrix cov) : cov_(std::move(cov)) {
  if (cov_.rows() == 0 || cov_.rows() != cov_.cols()) {
    throw std::invalid_argument("covariance must be a non-empty square matrix");
  }
  if (!cov_.allFinite()) throw std::invalid_argument("covariance has non-finite entries");
  const double scale = std::max(1.0, cov_.cwiseAbs().maxCoeff());
  if ((cov_ - cov_.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
    throw std::invalid_argument("covariance is not symmetric");
  }
  Eigen::LLT<Matrix> llt(cov_);
  if (llt.info() != Eigen::Success) {
    throw std::invalid_argument("covariance is not positive definite");
  }
  chol_ = llt.matrixL();
  for (Eigen::Index i = 0; i < chol_.rows(); ++i) {
    if (!(chol_(i, i) > 0.0)) throw std::invalid_argument("covariance is not positive definite");
  }
  precision_ = llt.solve(Matrix::Identity(cov_.rows(), cov_.cols()));
  double log_det = 0.0;
  for (Eigen::Index i = 0; i < chol_.rows(); ++i) log_det += 2.0 * std::log(chol_(i, i));
  log_norm_ = -0.5 * (static_cast<double>(dim()) * std::log(2.0 * std::numbers::pi) + log_det);
}

double GaussianNoise::log_density(const Vector& residual) const {
  return log_norm_ - 0.5 * residual.dot(precision_ * residual);
}

Vector GaussianNoise::grad_log_density(const Vector& residual) const {
  return -(precision_ * residual);
}

Vector GaussianNoise::sample(Rng& rng) const {
  Vector e(dim());
  for (int i = 0; i < dim(); ++i) e(i) = rng.normal();
  return chol_ * e;
}

StateSpaceModel::StateSpaceModel(InitialDistribution initial,
                                 GaussianTransitionModel transition,
                                 GaussianObservationModel observation)
    : initial_(std::move(initial)),
      transition_(std::move(transition)),
      observation_(std::move(observation)),
      state_dim_(transition_.noise.dim()),
      obs_dim_(observation_.noise.dim()) {
  if (initial_.mean.size() != state_dim_ || initial_.noise.dim() != state_dim_) {
    throw std::invalid_argument("initial distribution dimension does not match the state");
  }
  if (!transition_.drift || !transition_.drift_jacobian || !observation_.obs_map ||
      !observation_.obs_jacobian) {
    throw std::invalid_argument("model maps must all be set");
  }
}

void StateSpaceModel::check_state(const Vector& x) const {
  if (x.size() != state_dim_) {
    std::ostringstream os;
    os << "state has dimension " << x.size() << ", model expects " << state_dim_;
    throw std::invalid_argument(os.str());
  }
}

double StateSpaceModel::log_initial(const Vector& x) const {
  check_state(x);
  return initial_.noise.log_density(x - initial_.mean);
}

Vector StateSpaceModel::grad_log_initial(const Vector& x) const {
  check_state(x);
  return initial_.noise.grad_log_density(x - initial_.mean);
}

double StateSpaceModel::log_transition(const Vector& x_next, const Vector& x_prev) const {
  check_state(x_next);
  check_state(x_prev);
  return transition_.noise.log_density(x_next - transition_.drift(x_prev));
}

Vector StateSpaceModel::grad_log_transition(const Vector& x_next, const Vector& x_prev) const {
  check_state(x_next);
  check_state(x_prev);
  return transition_.noise.grad_log_density(x_next - transition_.drift(x_prev));
}

Vector StateSpaceModel::grad_log_transition_prev(const Vector& x_next,
                                                 const Vector& x_prev) const {
  check_state(x_next);
  check_state(x_prev);
  const Vector r = x_next - transition_.drift(x_prev);
  return transition_.drift_jacobian(x_prev).transpose() * (transition_.noise.precision() * r);
}

double StateSpaceModel::log_likelihood(const Vector& z, const Vector& x) const {
  check_state(x);
  if (z.size() != obs_dim_) throw std::invalid_argument("observation dimension mismatch");
  return observation_.noise.log_density(z - observation_.obs_map(x));
}

Vector StateSpaceModel::grad_log_likelihood(const Vector& z, const Vector& x) const {
  check_state(x);
  if (z.size() != obs_dim_) throw std::invalid_argument("observation dimension mismatch");
  const Vector r = z - observation_.obs_map(x);
  return observation_.obs_jacobian(x).transpose() * (observation_.noise.precision() * r);
}

Vector StateSpaceModel::sample_initial(Rng& rng) const {
  return initial_.mean + initial_.noise.sample(rng);
}

Vector StateSpaceModel::sample_transition(const Vector& x, Rng& rng) const {
  check_state(x);
  return transition_.drift(x) + transition_.noise.sample(rng);
}

Vector StateSpaceModel::sample_observation(const Vector& x, Rng& rng) const {
  check_state(x);
  return observation_.obs_map(x) + observation_.noise.sample(rng);
}

namespace {

Matrix gram(const Matrix& m, const char* what) {
  if (m.rows() == 0 || m.rows() != m.cols()) {
    throw std::invalid_argument(std::string(what) + " must be a non-empty square matrix");
  }
  Eigen::FullPivLU<Matrix> lu(m);
  if (lu.rank() < m.rows()) {
    std::ostringstream os;
    os << what << " is singular (rank " << lu.rank() << " of " << m.rows() << ")";
    throw std::invalid_argument(os.str());
  }
  return m * m.transpose();
}

}  // namespace

StateSpaceModel discretize(const ContinuousModelSpec& spec) {
  if (!(spec.dt > 0.0) || !std::isfinite(spec.dt)) {
    throw std::invalid_argument("time step must be positive and finite");
  }
  if (!spec.sde_drift || !spec.sde_drift_jacobian || !spec.obs_drift ||
      !spec.obs_drift_jacobian) {
    throw std::invalid_argument("continuous model maps must all be set");
  }
  const double dt = spec.dt;
  const Matrix q = gram(spec.sde_diffusion, "state diffusion") * dt;
  const Matrix r = gram(spec.obs_diffusion, "observation diffusion") / dt;
  const auto d = spec.sde_diffusion.rows();

  GaussianTransitionModel transition{
      [a = spec.sde_drift, dt](const Vector& x) -> Vector { return x + a(x) * dt; },
      [ja = spec.sde_drift_jacobian, dt, d](const Vector& x) -> Matrix {
        return Matrix::Identity(d, d) + ja(x) * dt;
      },
      GaussianNoise(q)};
  GaussianObservationModel observation{spec.obs_drift, spec.obs_drift_jacobian, GaussianNoise(r)};
  InitialDistribution initial{spec.initial_mean, GaussianNoise(spec.initial_cov)};
  return StateSpaceModel(std::move(initial), std::move(transition), std::move(observation));
}

ContinuousModelSpec linear_gaussian_spec(const LinearGaussianParams& p) {
  ContinuousModelSpec s;
  s.sde_drift = [c = p.drift_coeff](const Vector& x) -> Vector { return c * x; };
  s.sde_drift_jacobian = [c = p.drift_coeff](const Vector&) -> Matrix {
    return Matrix::Constant(1, 1, c);
  };
  s.sde_diffusion = Matrix::Constant(1, 1, p.sigma);
  s.obs_drift = [g = p.obs_gain](const Vector& x) -> Vector { return g * x; };
  s.obs_drift_jacobian = [g = p.obs_gain](const Vector&) -> Matrix {
    return Matrix::Constant(1, 1, g);
  };
  s.obs_diffusion = Matrix::Constant(1, 1, p.obs_sigma);
  s.dt = p.dt;
  s.initial_mean = Vector::Constant(1, p.prior_mean);
  s.initial_cov = Matrix::Constant(1, 1, p.prior_var);
  return s;
}

ContinuousModelSpec benes_spec(const BenesModelParams& p) {
  if (!(p.sigma_b > 0.0)) throw std::invalid_argument("Benes sigma_b must be positive");
  ContinuousModelSpec s;
  const double mu = p.mu;
  const double sb = p.sigma_b;
  s.sde_drift = [mu, sb](const Vector& x) -> Vector {
    return (mu * sb) * (x * (mu / sb)).array().tanh().matrix();
  };
  s.sde_drift_jacobian = [mu, sb](const Vector& x) -> Matrix {
    const double c = std::cosh(mu / sb * x(0));
    return Matrix::Constant(1, 1, mu * mu / (c * c));
  };
  s.sde_diffusion = Matrix::Constant(1, 1, sb);
  s.obs_drift = [h1 = p.h1, h2 = p.h2](const Vector& x) -> Vector {
    return (h1 * x).array() + h1 * h2;
  };
  s.obs_drift_jacobian = [h1 = p.h1](const Vector&) -> Matrix {
    return Matrix::Constant(1, 1, h1);
  };
  s.obs_diffusion = Matrix::Constant(1, 1, 1.0);
  s.dt = p.dt;
  s.initial_mean = Vector::Constant(1, p.x0);
  s.initial_cov = Matrix::Constant(1, 1, p.initial_var);
  return s;
}

Simulation simulate(const StateSpaceModel& model, int steps, Rng& rng) {
  if (steps < 1) throw std::invalid_argument("simulate needs at least one step");
  Simulation sim{Matrix(steps, model.state_dim()), Matrix(steps, model.obs_dim())};
  Vector x = model.sample_initial(rng);
  for (int t = 0; t < steps; ++t) {
    sim.states.row(t) = x.transpose();
    sim.observations.row(t) = model.sample_observation(x, rng).transpose();
    if (t + 1 < steps) x = model.sample_transition(x, rng);
  }
  return sim;
}

}  // namespace steinpf
