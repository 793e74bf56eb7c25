#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <map>
#include <vector>

#include "steinpf/filter.hpp"
#include "steinpf/metrics.hpp"
#include "test_support.hpp"

using namespace steinpf;
using testing_support::numeric_gradient;
using testing_support::relative_error;

namespace {

Vector vec1(double v) { return Vector::Constant(1, v); }

// x' = x + N(0, q), z = gain * x + N(0, r), x_1 ~ N(m0, p0).
StateSpaceModel scalar_model(double q, double gain, double r, double m0 = 0.0, double p0 = 1.0) {
  return StateSpaceModel(
      InitialDistribution{vec1(m0), GaussianNoise(Matrix::Constant(1, 1, p0))},
      GaussianTransitionModel{[](const Vector& x) -> Vector { return x; },
                              [](const Vector&) -> Matrix { return Matrix::Identity(1, 1); },
                              GaussianNoise(Matrix::Constant(1, 1, q))},
      GaussianObservationModel{
          [gain](const Vector& x) -> Vector { return gain * x; },
          [gain](const Vector&) -> Matrix { return Matrix::Constant(1, 1, gain); },
          GaussianNoise(Matrix::Constant(1, 1, r))});
}

StateSpaceModel planar_model() {
  ContinuousModelSpec s;
  s.sde_drift = [](const Vector& x) -> Vector {
    Vector a(2);
    a << std::sin(x(1)), -0.5 * x(1) + 0.2 * x(0);
    return a;
  };
  s.sde_drift_jacobian = [](const Vector& x) -> Matrix {
    Matrix j(2, 2);
    j << 0.0, std::cos(x(1)), 0.2, -0.5;
    return j;
  };
  Matrix sigma(2, 2);
  sigma << 1.0, 0.0, 0.4, 0.9;
  s.sde_diffusion = sigma;
  s.obs_drift = [](const Vector& x) -> Vector { return Vector::Constant(1, x(0) + x(1) * x(1)); };
  s.obs_drift_jacobian = [](const Vector& x) -> Matrix {
    Matrix j(1, 2);
    j << 1.0, 2.0 * x(1);
    return j;
  };
  s.obs_diffusion = Matrix::Constant(1, 1, 0.5);
  s.dt = 0.05;
  s.initial_mean = Vector::Zero(2);
  s.initial_cov = Matrix::Identity(2, 2);
  return discretize(s);
}

// Exact one-step discrete Kalman update of the linear example.
struct Kf {
  double m, p;
  void predict() {
    m *= 0.99;
    p = 0.99 * 0.99 * p + 0.02;
  }
  void update(double z) {
    const double s = 9.0 * p + 12.5;
    const double k = 3.0 * p / s;
    m += k * (z - 3.0 * m);
    p -= k * 3.0 * p;
  }
};

SvgdConfig experiment_svgd() {
  SvgdConfig c;
  c.iterations = 100;
  c.initial_iterations = 300;
  c.step_size = 0.01;
  c.schedule = StepSchedule::adagrad;
  return c;
}

void check_target_gradient(const LogDensityTarget& t, Rng& rng, double scale, int points = 50) {
  for (int i = 0; i < points; ++i) {
    const Vector x = testing_support::random_vector(t.dim, rng, scale);
    const Vector g = t.grad_log_density(x);
    const Vector fd = numeric_gradient(t.log_density, x);
    EXPECT_LT(relative_error(g, fd), 1e-5) << "at point " << i;
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// SIR

TEST(Sir, ConstantLikelihoodLeavesWeights) {
  const auto m = scalar_model(0.1, 0.0, 1.0);
  FilterState s = FilterState::sir(5);
  auto& sir = std::get<SirBackend>(s.backend);
  sir.ensemble.particles = Matrix::Zero(5, 1);
  sir.ensemble.weights.resize(5);
  sir.ensemble.weights << 0.3, 0.25, 0.2, 0.15, 0.1;
  s.time_index = 3;
  const Vector before = sir.ensemble.weights;
  Rng rng(1);
  s = sir_step(std::move(s), m, vec1(0.7), rng);
  EXPECT_LT((std::get<SirBackend>(s.backend).ensemble.weights - before).norm(), 1e-15);
}

TEST(Sir, TwoParticleHandUpdate) {
  // transition noise small enough that particles stay put; likelihood ratio 3
  const auto m = scalar_model(1e-30, 1.0, 1.0);
  FilterState s = FilterState::sir(2);
  auto& sir = std::get<SirBackend>(s.backend);
  sir.ensemble.particles.resize(2, 1);
  sir.ensemble.particles << 0.0, std::sqrt(2.0 * std::log(3.0));
  sir.ensemble.weights = Vector::Constant(2, 0.5);
  s.time_index = 1;
  Rng rng(2);
  s = sir_step(std::move(s), m, vec1(0.0), rng);
  const auto& w = std::get<SirBackend>(s.backend).ensemble.weights;
  EXPECT_NEAR(w(0), 0.75, 1e-12);
  EXPECT_NEAR(w(1), 0.25, 1e-12);
  EXPECT_FALSE(std::get<SirBackend>(s.backend).resampled);
}

TEST(Sir, InvariantsOverLinearRun) {
  const auto m = discretize(linear_gaussian_spec());
  Rng sim_rng(3);
  const auto sim = simulate(m, 50, sim_rng);
  FilterState s = FilterState::sir(300);
  Rng rng(4);
  int resamples = 0;
  for (int t = 0; t < 50; ++t) {
    s = sir_step(std::move(s), m, sim.observations.row(t).transpose(), rng);
    const auto& sir = std::get<SirBackend>(s.backend);
    EXPECT_NEAR(sir.ensemble.weights.sum(), 1.0, 1e-12);
    EXPECT_GE(sir.ensemble.weights.minCoeff(), 0.0);
    const double ess = effective_sample_size(sir.ensemble.weights);
    EXPECT_LE(ess, 300.0 + 1e-9);
    EXPECT_GE(ess, 1.0 - 1e-9);
    if (sir.resampled) {
      ++resamples;
      for (int i = 0; i < 300; ++i) EXPECT_EQ(sir.ensemble.weights(i), 1.0 / 300.0);
    }
    EXPECT_EQ(s.time_index, t + 1);
  }
  EXPECT_GT(resamples, 0);
}

TEST(Sir, UnderflowResetsToUniformWithWarning) {
  StateSpaceModel m(
      InitialDistribution{vec1(0.0), GaussianNoise(Matrix::Identity(1, 1))},
      GaussianTransitionModel{[](const Vector& x) -> Vector { return x; },
                              [](const Vector&) -> Matrix { return Matrix::Identity(1, 1); },
                              GaussianNoise(Matrix::Identity(1, 1))},
      GaussianObservationModel{[](const Vector&) -> Vector { return vec1(1e200); },
                               [](const Vector&) -> Matrix { return Matrix::Zero(1, 1); },
                               GaussianNoise(Matrix::Identity(1, 1))});
  testing_support::WarningCounter warnings;
  FilterState s = FilterState::sir(10);
  Rng rng(5);
  s = sir_step(std::move(s), m, vec1(0.0), rng);
  const auto& sir = std::get<SirBackend>(s.backend);
  EXPECT_EQ(sir.degeneracy_events, 1);
  EXPECT_EQ(warnings.count(), 1);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(sir.ensemble.weights(i), 0.1);
}

TEST(Sir, PosteriorEnsembleLeavesWeightsAlone) {
  const auto m = discretize(linear_gaussian_spec());
  FilterState s = FilterState::sir(50, 0.0);  // never resample
  Rng rng(6);
  s = sir_step(std::move(s), m, vec1(4.0), rng);
  const Vector w = std::get<SirBackend>(s.backend).ensemble.weights;
  const auto view = s.posterior_ensemble(rng);
  EXPECT_EQ(view.size(), 50);
  EXPECT_EQ(std::get<SirBackend>(s.backend).ensemble.weights, w);
}

TEST(Resample, UniformWeightsAlignedOffsetPreserveParticles) {
  Rng rng(7);
  WeightedEnsemble e{testing_support::random_matrix(8, 2, rng), Vector::Constant(8, 1.0 / 8)};
  for (double offset : {0.0, 0.5 / 8}) {
    const auto out = resample_systematic(e, offset);
    EXPECT_EQ(out.particles, e.particles);
  }
}

TEST(Resample, PointMassCopiesFirstParticle) {
  Rng rng(8);
  WeightedEnsemble e{testing_support::random_matrix(6, 1, rng), Vector::Zero(6)};
  e.weights(0) = 1.0;
  const auto out = resample_systematic(e, rng);
  for (int i = 0; i < 6; ++i) EXPECT_EQ(out.particles(i, 0), e.particles(0, 0));
}

TEST(Resample, OutputWeightsExactlyUniform) {
  Rng rng(9);
  WeightedEnsemble e{testing_support::random_matrix(7, 1, rng), Vector(7)};
  e.weights << 0.05, 0.3, 0.1, 0.2, 0.15, 0.12, 0.08;
  const auto out = resample_systematic(e, rng);
  for (int i = 0; i < 7; ++i) EXPECT_EQ(out.weights(i), 1.0 / 7.0);
}

TEST(Resample, OffsetOutsideRangeRejected) {
  WeightedEnsemble e{Matrix::Zero(4, 1), Vector::Constant(4, 0.25)};
  EXPECT_THROW(resample_systematic(e, 0.25), std::invalid_argument);
  EXPECT_THROW(resample_systematic(e, -1e-9), std::invalid_argument);
}

TEST(Resample, CopyCountsAreUnbiased) {
  const int n = 10, trials = 10000;
  WeightedEnsemble e{Matrix(n, 1), Vector(n)};
  for (int i = 0; i < n; ++i) e.particles(i, 0) = i;
  e.weights << 0.02, 0.03, 0.05, 0.07, 0.08, 0.1, 0.12, 0.15, 0.18, 0.2;
  Rng rng(10);
  std::vector<double> total(n, 0.0);
  for (int t = 0; t < trials; ++t) {
    const auto out = resample_systematic(e, rng);
    for (int k = 0; k < n; ++k) total[static_cast<int>(out.particles(k, 0))] += 1.0;
  }
  for (int i = 0; i < n; ++i) {
    const double expected = n * e.weights(i);
    const double mean = total[i] / trials;
    // binomial(n, w) standard error is a conservative bound for systematic draws
    const double se = std::sqrt(n * e.weights(i) * (1 - e.weights(i)) / trials);
    EXPECT_NEAR(mean, expected, 4.0 * se) << "particle " << i;
  }
}

// ---------------------------------------------------------------------------
// Targets

TEST(Targets, SingleComponentMixtureIsTransitionPlusLikelihood) {
  const auto m = discretize(benes_spec());
  Matrix prev(1, 1);
  prev << 0.4;
  const auto t = sequential_target(ParticleEnsemble(prev), m, vec1(1.3));
  Rng rng(11);
  for (int i = 0; i < 20; ++i) {
    const Vector x = testing_support::random_vector(1, rng);
    const Vector expected = m.grad_log_transition(x, vec1(0.4)) + m.grad_log_likelihood(vec1(1.3), x);
    EXPECT_NEAR(t.grad_log_density(x)(0), expected(0), 1e-12 * std::max(1.0, std::abs(expected(0))));
  }
}

TEST(Targets, MixtureVanishesAtSymmetricMidpoint) {
  const auto m = scalar_model(0.1, 1.0, 1.0);
  Matrix prev(2, 1);
  prev << -0.5, 0.5;
  const TransitionMixture mix(ParticleEnsemble(prev), m);
  EXPECT_NEAR(mix.grad_log_density(vec1(0.0))(0), 0.0, 1e-15);
  // observation at the midpoint too: whole target is flat there
  const auto t = sequential_target(ParticleEnsemble(prev), m, vec1(0.0));
  EXPECT_NEAR(t.grad_log_density(vec1(0.0))(0), 0.0, 1e-15);
}

TEST(Targets, MixtureStableFarFromComponents) {
  const auto m = discretize(linear_gaussian_spec());
  Matrix prev(3, 1);
  prev << 0.0, 0.1, 0.2;
  const TransitionMixture mix(ParticleEnsemble(prev), m);
  // exp(-quad/2) underflows for every component at x = 100
  const Vector g = mix.grad_log_density(vec1(100.0));
  EXPECT_TRUE(g.allFinite());
  EXPECT_TRUE(std::isfinite(mix.log_density(vec1(100.0))));
  EXPECT_NEAR(g(0), -(100.0 - 0.99 * 0.2) / 0.02, 1e-6 * 5000);
}

TEST(Targets, SequentialMatchesFiniteDifferences) {
  Rng rng(12);
  for (const auto& m : {discretize(linear_gaussian_spec()), discretize(benes_spec()), planar_model()}) {
    const auto prev = ParticleEnsemble(testing_support::random_matrix(30, m.state_dim(), rng, 0.3));
    const auto z = testing_support::random_vector(m.obs_dim(), rng);
    check_target_gradient(sequential_target(prev, m, z), rng, 0.4);
    check_target_gradient(initial_target(m, z), rng, 1.0);
  }
}

TEST(Targets, WindowMatchesFiniteDifferences) {
  Rng rng(13);
  for (const auto& m : {discretize(linear_gaussian_spec()), discretize(benes_spec()), planar_model()}) {
    const int d = m.state_dim();
    std::vector<Vector> obs;
    for (int k = 0; k < 3; ++k) obs.push_back(testing_support::random_vector(m.obs_dim(), rng));
    const auto anchor = ParticleEnsemble(testing_support::random_matrix(20, d, rng, 0.3));
    for (int w = 1; w <= 3; ++w) {
      std::span<const Vector> o(obs.data(), static_cast<std::size_t>(w));
      check_target_gradient(window_target(WindowPhase::warmup, nullptr, m, o), rng, 0.3);
      check_target_gradient(window_target(WindowPhase::steady, &anchor, m, o), rng, 0.3);
    }
  }
}

TEST(Targets, SmallSteadyWindowFiniteDifferences) {
  // T = 2, d = 1, n = 2
  Rng rng(14);
  const auto m = discretize(linear_gaussian_spec());
  const auto anchor = ParticleEnsemble(testing_support::random_matrix(2, 1, rng));
  const std::vector<Vector> obs{vec1(rng.normal()), vec1(rng.normal())};
  const auto t = window_target(WindowPhase::steady, &anchor, m, obs);
  EXPECT_EQ(t.dim, 2);
  check_target_gradient(t, rng, 0.5);
}

TEST(Targets, OneBlockSteadyWindowIsSequentialTarget) {
  Rng rng(15);
  const auto m = discretize(benes_spec());
  const auto prev = ParticleEnsemble(testing_support::random_matrix(25, 1, rng));
  const Vector z = vec1(0.8);
  const std::vector<Vector> obs{z};
  const auto w = window_target(WindowPhase::steady, &prev, m, obs);
  const auto s = sequential_target(prev, m, z);
  for (int i = 0; i < 30; ++i) {
    const Vector x = testing_support::random_vector(1, rng);
    EXPECT_EQ(w.grad_log_density(x), s.grad_log_density(x));
    EXPECT_EQ(w.log_density(x), s.log_density(x));
  }
}

TEST(Targets, WarmupChainStationaryAtPriorMode) {
  const auto m = scalar_model(0.2, 0.0, 1.0, 0.7, 0.5);  // flat likelihood
  const std::vector<Vector> obs{vec1(0.0), vec1(0.0)};
  const auto t = window_target(WindowPhase::warmup, nullptr, m, obs);
  Vector x(2);
  x << 0.7, m.drift(vec1(0.7))(0);
  EXPECT_NEAR(t.grad_log_density(x)(0), 0.0, 1e-14);
  EXPECT_NEAR(t.grad_log_density(x)(1), 0.0, 1e-14);
}

TEST(Targets, WindowArgumentErrors) {
  const auto m = discretize(linear_gaussian_spec());
  const ParticleEnsemble anchor(Matrix::Zero(3, 1));
  const std::vector<Vector> obs{vec1(0.0), vec1(1.0)};
  EXPECT_THROW(window_target(WindowPhase::steady, nullptr, m, obs), std::invalid_argument);
  EXPECT_THROW(window_target(WindowPhase::warmup, &anchor, m, obs), std::invalid_argument);
  EXPECT_THROW(window_target(WindowPhase::warmup, nullptr, m, {}), std::invalid_argument);
  const auto t = window_target(WindowPhase::warmup, nullptr, m, obs);
  EXPECT_THROW(t.grad_log_density(Vector::Zero(3)), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Stein filters

TEST(SteinSequential, ZeroIterationsIsPurePrediction) {
  const auto m = discretize(linear_gaussian_spec());
  Rng rng(16);
  const Matrix prev = testing_support::random_matrix(40, 1, rng);
  FilterState s = FilterState::stein_sequential(40);
  std::get<SteinSequentialBackend>(s.backend).ensemble = ParticleEnsemble(prev);
  s.time_index = 5;
  SvgdConfig cfg;
  cfg.iterations = 0;
  Rng a(17), b(17);
  s = stein_sequential_step(std::move(s), m, vec1(2.0), cfg, a);
  const auto& out = std::get<SteinSequentialBackend>(s.backend).ensemble;
  for (int i = 0; i < 40; ++i) {
    EXPECT_EQ(out.particles()(i, 0), m.sample_transition(prev.row(i).transpose(), b)(0));
  }
  EXPECT_EQ(s.time_index, 6);
  EXPECT_EQ(out.size(), 40);
}

TEST(SteinSequential, OneStepFromExactPriorMatchesKalman) {
  const auto m = discretize(linear_gaussian_spec());
  Kf kf{0.4, 0.3};
  Rng rng(18);
  const int n = 500;
  Matrix prev(n, 1);
  for (int i = 0; i < n; ++i) prev(i, 0) = kf.m + std::sqrt(kf.p) * rng.normal();
  FilterState s = FilterState::stein_sequential(n);
  std::get<SteinSequentialBackend>(s.backend).ensemble = ParticleEnsemble(prev);
  s.time_index = 1;
  const double z = 2.5;
  for (const auto schedule : {StepSchedule::constant, StepSchedule::adagrad}) {
    SvgdConfig cfg;
    cfg.iterations = 100;
    cfg.step_size = 0.01;
    cfg.schedule = schedule;
    Rng step_rng(19);
    const auto out = stein_sequential_step(s, m, vec1(z), cfg, step_rng);
    Kf exact = kf;
    exact.predict();
    exact.update(z);
    const double est = out.posterior_moments().mean(0);
    EXPECT_NEAR(est, exact.m, 3.0 * std::sqrt(exact.p) / std::sqrt(n) + 0.05);
  }
}

TEST(SteinInitial, FlatLikelihoodKeepsPrior) {
  const auto m = scalar_model(0.1, 0.0, 1.0, 2.0, 0.5);
  Rng rng(20);
  const auto s = stein_initial_step(m, vec1(0.0), 400, experiment_svgd(), rng);
  const Moments mo = s.posterior_moments();
  EXPECT_NEAR(mo.mean(0), 2.0, 4.0 * std::sqrt(0.5 / 400));
  EXPECT_NEAR(mo.covariance(0, 0), 0.5, 0.1);
}

TEST(SteinInitial, ConjugateGaussianMean) {
  const auto m = discretize(linear_gaussian_spec());
  const double z = 3.0;
  const double mean = (1.0 / 1.0 + 3.0 * z / 12.5) / (1.0 / 1.0 + 9.0 / 12.5);
  Rng rng(21);
  const auto s = stein_initial_step(m, vec1(z), 200, experiment_svgd(), rng);
  EXPECT_NEAR(s.posterior_moments().mean(0), mean, 0.05);
  // an informative observation the prior does not favour
  const double z2 = 6.0;
  const double mean2 = (1.0 + 3.0 * z2 / 12.5) / (1.0 + 9.0 / 12.5);
  const double var2 = 1.0 / (1.0 + 9.0 / 12.5);
  Rng rng2(22);
  const auto s2 = stein_initial_step(m, vec1(z2), 200, experiment_svgd(), rng2);
  EXPECT_NEAR(s2.posterior_moments().mean(0), mean2, 0.05);
  EXPECT_NEAR(s2.posterior_moments().covariance(0, 0), var2, 0.1);
}

TEST(SteinInitial, SingleParticleFindsMode) {
  const auto m = discretize(benes_spec());
  // Target N(0, 1e-4) prior times likelihood; scalar Newton iteration as the oracle.
  const Vector z = vec1(20.0);
  double x = 0.0;
  for (int it = 0; it < 50; ++it) {
    const double g = m.grad_log_initial(vec1(x))(0) + m.grad_log_likelihood(z, vec1(x))(0);
    const double hess = -1.0 / 1e-4 - 25.0 / 50.0;
    x -= g / hess;
  }
  SvgdConfig cfg;
  cfg.iterations = 5000;
  cfg.step_size = 1e-5;
  Rng rng(23);
  const auto s = stein_initial_step(m, z, 1, cfg, rng);
  EXPECT_NEAR(std::get<SteinSequentialBackend>(s.backend).ensemble.particles()(0, 0), x, 1e-8);
}

TEST(SteinInitial, InitialIterationsOverrideOnlyTheFirstStep) {
  const auto m = discretize(linear_gaussian_spec());
  SvgdConfig base;
  base.iterations = 5;
  SvgdConfig extended = base;
  extended.initial_iterations = 40;
  SvgdConfig explicit_first = base;
  explicit_first.iterations = 40;
  Rng a(24), b(24), c(24), d(24);
  const auto s1 = stein_initial_step(m, vec1(6.0), 30, extended, a);
  const auto s2 = stein_initial_step(m, vec1(6.0), 30, explicit_first, b);
  EXPECT_EQ(std::get<SteinSequentialBackend>(s1.backend).ensemble,
            std::get<SteinSequentialBackend>(s2.backend).ensemble);
  // later steps run `iterations`
  const auto n1 = stein_sequential_step(s1, m, vec1(1.0), extended, c);
  const auto n2 = stein_sequential_step(s1, m, vec1(1.0), base, d);
  EXPECT_EQ(std::get<SteinSequentialBackend>(n1.backend).ensemble,
            std::get<SteinSequentialBackend>(n2.backend).ensemble);
}

TEST(SteinWindow, OneBlockWindowReproducesSequentialFilter) {
  for (const auto& m : {discretize(linear_gaussian_spec()), discretize(benes_spec())}) {
    Rng sim_rng(25);
    const auto sim = simulate(m, 25, sim_rng);
    SvgdConfig cfg = experiment_svgd();
    cfg.iterations = 20;
    cfg.initial_iterations = 40;
    FilterState seq = FilterState::stein_sequential(30);
    FilterState win = FilterState::stein_window(30, 1);
    for (int t = 0; t < 25; ++t) {
      Rng a = Rng::substream(9, 1, t), b = Rng::substream(9, 1, t);
      const Vector z = sim.observations.row(t).transpose();
      seq = stein_sequential_step(std::move(seq), m, z, cfg, a);
      win = stein_window_step(std::move(win), m, z, cfg, b);
      ASSERT_EQ(std::get<SteinSequentialBackend>(seq.backend).ensemble.particles(),
                std::get<SteinWindowBackend>(win.backend).trajectories.newest().particles())
          << "step " << t;
    }
  }
}

TEST(SteinWindow, WindowGrowsToMaximum) {
  const auto m = discretize(linear_gaussian_spec());
  SvgdConfig cfg;
  cfg.iterations = 2;
  FilterState s = FilterState::stein_window(10, 3);
  Rng rng(26);
  for (int t = 1; t <= 6; ++t) {
    s = stein_window_step(std::move(s), m, vec1(0.5 * t), cfg, rng);
    const auto& w = std::get<SteinWindowBackend>(s.backend);
    EXPECT_EQ(w.trajectories.window(), std::min(t, 3));
    EXPECT_EQ(w.trajectories.state_dim(), 1);
    EXPECT_EQ(w.trajectories.size(), 10);
    EXPECT_EQ(static_cast<int>(w.observations.size()), std::min(t, 3));
    EXPECT_LE(static_cast<int>(w.filtered.size()), 3);
    EXPECT_EQ(s.time_index, t);
  }
}

TEST(SteinWindow, WrongBackendRejected) {
  const auto m = discretize(linear_gaussian_spec());
  Rng rng(27);
  EXPECT_THROW(stein_window_step(FilterState::sir(5), m, vec1(0.0), SvgdConfig{}, rng),
               std::invalid_argument);
  EXPECT_THROW(stein_sequential_step(FilterState::sir(5), m, vec1(0.0), SvgdConfig{}, rng),
               std::invalid_argument);
  EXPECT_THROW(sir_step(FilterState::stein_sequential(5), m, vec1(0.0), rng),
               std::invalid_argument);
}

TEST(SteinWindow, DivergenceCarriesStepNumber) {
  const auto m = discretize(linear_gaussian_spec());
  SvgdConfig cfg;
  cfg.iterations = 50;
  cfg.step_size = 1e6;
  FilterState s = FilterState::stein_sequential(5);
  Rng rng(28);
  try {
    s = stein_sequential_step(std::move(s), m, vec1(1e3), cfg, rng);
    FAIL() << "expected divergence";
  } catch (const SvgdDivergence& e) {
    EXPECT_NE(std::string(e.what()).find("filter step 1"), std::string::npos);
  }
}

TEST(Backends, StatesStayEquallyWeightedAndSized) {
  const auto m = discretize(benes_spec());
  Rng sim_rng(29);
  const auto sim = simulate(m, 8, sim_rng);
  SvgdConfig cfg = experiment_svgd();
  cfg.iterations = 5;
  cfg.initial_iterations = 5;
  for (FilterState s : {FilterState::stein_sequential(12), FilterState::stein_window(12, 3)}) {
    Rng rng(30);
    for (int t = 0; t < 8; ++t) {
      s = filter_step(std::move(s), m, sim.observations.row(t).transpose(), cfg, rng);
      Rng view_rng(0);
      EXPECT_EQ(s.posterior_ensemble(view_rng).size(), 12);
      EXPECT_TRUE(s.posterior_ensemble(view_rng).particles().allFinite());
    }
  }
}

// Slow: every backend tracks the exact posterior mean of the linear model.
TEST(BackendsSlow, LinearMeansWithinStandardErrorsOfKalman) {
  const auto m = discretize(linear_gaussian_spec());
  const int runs = 10, steps = 10, n = 500;
  const SvgdConfig cfg = experiment_svgd();
  std::map<std::string, std::vector<std::vector<double>>> diff;
  for (int r = 0; r < runs; ++r) {
    Rng sim_rng(500 + r);
    const auto sim = simulate(m, steps, sim_rng);
    const std::pair<std::string, FilterState> backends[] = {
        {"sir", FilterState::sir(n)},
        {"stein_T1", FilterState::stein_sequential(n)},
        {"stein_T3", FilterState::stein_window(n, 3)}};
    for (auto [name, s] : backends) {
      Rng rng(600 + r);
      Kf kf{1.0, 1.0};
      auto& d = diff[name];
      d.resize(steps);
      for (int t = 0; t < steps; ++t) {
        const double z = sim.observations(t, 0);
        if (t > 0) kf.predict();
        kf.update(z);
        s = filter_step(std::move(s), m, vec1(z), cfg, rng);
        d[t].push_back(s.posterior_moments().mean(0) - kf.m);
      }
    }
  }
  for (const auto& [name, d] : diff) {
    for (int t = 0; t < steps; ++t) {
      double mean = 0.0, ss = 0.0;
      for (double v : d[t]) mean += v / runs;
      for (double v : d[t]) ss += (v - mean) * (v - mean);
      const double se = std::sqrt(ss / (runs - 1) / runs);
      // floor: residual SVGD bias well below the posterior std (about 0.38)
      EXPECT_LE(std::abs(mean), 4.0 * se + 0.01) << name << " step " << t;
    }
  }
}
