#include "steinpf/filter.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <sstream>
#include <stdexcept>

#include "steinpf/diagnostics.hpp"

namespace steinpf {

TrajectoryEnsemble::TrajectoryEnsemble(Matrix particles, int state_dim)
    : particles_(std::move(particles)), state_dim_(state_dim) {
  if (state_dim_ <= 0 || particles_.cols() % state_dim_ != 0) {
    throw std::invalid_argument("trajectory width is not a multiple of the state dimension");
  }
}

Matrix TrajectoryEnsemble::block(int k) const {
  if (k < 0 || k >= window()) throw std::out_of_range("trajectory block index out of range");
  return particles_.middleCols(static_cast<Eigen::Index>(k) * state_dim_, state_dim_);
}

FilterState FilterState::sir(int n, double ess_threshold) {
  if (n < 1) throw std::invalid_argument("particle count must be positive");
  if (!(ess_threshold >= 0.0 && ess_threshold <= 1.0)) {
    throw std::invalid_argument("ESS threshold must lie in [0, 1]");
  }
  return {SirBackend{{}, ess_threshold, 0, false}, 0, n};
}

FilterState FilterState::stein_sequential(int n, SteinInit init) {
  if (n < 1) throw std::invalid_argument("particle count must be positive");
  return {SteinSequentialBackend{{}, init}, 0, n};
}

FilterState FilterState::stein_window(int n, int max_window, AnchorSource anchor) {
  if (n < 1) throw std::invalid_argument("particle count must be positive");
  if (max_window < 1) throw std::invalid_argument("window length must be at least 1");
  return {SteinWindowBackend{{}, max_window, anchor, {}, {}}, 0, n};
}

ParticleEnsemble FilterState::posterior_ensemble(Rng& rng) const {
  if (time_index == 0) throw std::logic_error("filter has not assimilated any observation");
  if (const auto* sir = std::get_if<SirBackend>(&backend)) {
    return ParticleEnsemble(resample_systematic(sir->ensemble, rng).particles);
  }
  if (const auto* seq = std::get_if<SteinSequentialBackend>(&backend)) return seq->ensemble;
  return std::get<SteinWindowBackend>(backend).trajectories.newest();
}

Moments FilterState::posterior_moments() const {
  if (time_index == 0) throw std::logic_error("filter has not assimilated any observation");
  if (const auto* sir = std::get_if<SirBackend>(&backend)) {
    return weighted_moments(sir->ensemble.particles, sir->ensemble.weights);
  }
  if (const auto* seq = std::get_if<SteinSequentialBackend>(&backend)) {
    return empirical_moments(seq->ensemble);
  }
  return empirical_moments(std::get<SteinWindowBackend>(backend).trajectories.newest());
}

// ---------------------------------------------------------------------------
// SIR

WeightedEnsemble resample_systematic(const WeightedEnsemble& ensemble, double offset) {
  const int n = ensemble.size();
  if (n == 0) throw std::invalid_argument("cannot resample an empty ensemble");
  const double stride = 1.0 / static_cast<double>(n);
  if (!(offset >= 0.0 && offset < stride)) {
    throw std::invalid_argument("systematic offset must lie in [0, 1/n)");
  }
  WeightedEnsemble out{Matrix(n, ensemble.particles.cols()), Vector::Constant(n, stride)};
  double cumulative = ensemble.weights(0);
  int src = 0;
  for (int k = 0; k < n; ++k) {
    const double u = offset + k * stride;
    while (u >= cumulative && src < n - 1) {
      ++src;
      cumulative += ensemble.weights(src);
    }
    out.particles.row(k) = ensemble.particles.row(src);
  }
  return out;
}

WeightedEnsemble resample_systematic(const WeightedEnsemble& ensemble, Rng& rng) {
  const int n = ensemble.size();
  if (n == 0) throw std::invalid_argument("cannot resample an empty ensemble");
  double offset = rng.uniform() / static_cast<double>(n);
  offset = std::min(offset, std::nextafter(1.0 / static_cast<double>(n), 0.0));
  return resample_systematic(ensemble, offset);
}

FilterState sir_step(FilterState state, const StateSpaceModel& model, const Vector& z, Rng& rng) {
  auto* sir = std::get_if<SirBackend>(&state.backend);
  if (sir == nullptr) throw std::invalid_argument("sir_step requires an SIR filter state");
  const int n = state.particle_count;
  WeightedEnsemble& ens = sir->ensemble;

  if (state.time_index == 0) {
    ens.particles.resize(n, model.state_dim());
    for (int i = 0; i < n; ++i) ens.particles.row(i) = model.sample_initial(rng).transpose();
    ens.weights = Vector::Constant(n, 1.0 / n);
  } else {
    for (int i = 0; i < n; ++i) {
      const Vector x = ens.particles.row(i).transpose();
      ens.particles.row(i) = model.sample_transition(x, rng).transpose();
    }
  }

  Vector logw(n);
  for (int i = 0; i < n; ++i) {
    logw(i) = std::log(ens.weights(i)) + model.log_likelihood(z, ens.particles.row(i).transpose());
  }
  const double top = logw.maxCoeff();
  if (!std::isfinite(top)) {
    ++sir->degeneracy_events;
    std::ostringstream os;
    os << "SIR weights degenerate at step " << state.time_index + 1 << "; reset to uniform";
    warn(os.str());
    ens.weights = Vector::Constant(n, 1.0 / n);
  } else {
    ens.weights = (logw.array() - top).exp();
    ens.weights /= ens.weights.sum();
  }

  sir->resampled = false;
  if (effective_sample_size(ens.weights) < sir->ess_threshold * n) {
    ens = resample_systematic(ens, rng);
    sir->resampled = true;
  }
  ++state.time_index;
  return state;
}

// ---------------------------------------------------------------------------
// Targets

TransitionMixture::TransitionMixture(const ParticleEnsemble& previous,
                                     const StateSpaceModel& model)
    : means_(previous.size(), model.state_dim()),
      precision_(model.transition().noise.precision()),
      dim_(model.state_dim()) {
  if (previous.empty()) throw std::invalid_argument("mixture needs at least one particle");
  if (previous.dim() != dim_) throw std::invalid_argument("particle dimension mismatch");
  for (int i = 0; i < previous.size(); ++i) {
    means_.row(i) = model.drift(previous.particle(i)).transpose();
  }
  // Normalizer of N(0, Q) together with the 1/n mixture weight.
  log_norm_ = model.transition().noise.log_density(Vector::Zero(dim_)) -
              std::log(static_cast<double>(previous.size()));
}

double TransitionMixture::responsibilities(const Vector& x, std::vector<double>& s) const {
  const auto n = static_cast<std::size_t>(means_.rows());
  const int d = dim_;
  s.resize(n);
  std::vector<double> r(static_cast<std::size_t>(d));
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    const double* m = means_.data() + i * static_cast<std::size_t>(d);
    for (int a = 0; a < d; ++a) r[static_cast<std::size_t>(a)] = x(a) - m[a];
    double quad = 0.0;
    for (int a = 0; a < d; ++a) {
      double row = 0.0;
      for (int b = 0; b < d; ++b) row += precision_(a, b) * r[static_cast<std::size_t>(b)];
      quad += r[static_cast<std::size_t>(a)] * row;
    }
    s[i] = -0.5 * quad;
    top = std::max(top, s[i]);
  }
  double total = 0.0;
  for (auto& v : s) {
    v = std::exp(v - top);
    total += v;
  }
  for (auto& v : s) v /= total;
  return top + std::log(total);
}

double TransitionMixture::log_density(const Vector& x) const {
  std::vector<double> s;
  return log_norm_ + responsibilities(x, s);
}

Vector TransitionMixture::grad_log_density(const Vector& x) const {
  // sum_i s_i(x) * (-P (x - m_i)) = -P (x - sum_i s_i m_i)
  std::vector<double> s;
  responsibilities(x, s);
  Vector centre = Vector::Zero(dim_);
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double* m = means_.data() + i * static_cast<std::size_t>(dim_);
    for (int a = 0; a < dim_; ++a) centre(a) += s[i] * m[a];
  }
  return -(precision_ * (x - centre));
}

LogDensityTarget initial_target(const StateSpaceModel& model, const Vector& z) {
  LogDensityTarget t;
  t.dim = model.state_dim();
  t.grad_log_density = [&model, z](const Vector& x) -> Vector {
    Vector g = model.grad_log_initial(x);
    g += model.grad_log_likelihood(z, x);
    return g;
  };
  t.log_density = [&model, z](const Vector& x) {
    return model.log_initial(x) + model.log_likelihood(z, x);
  };
  return t;
}

LogDensityTarget sequential_target(const ParticleEnsemble& previous, const StateSpaceModel& model,
                                   const Vector& z) {
  auto mixture = std::make_shared<const TransitionMixture>(previous, model);
  LogDensityTarget t;
  t.dim = model.state_dim();
  t.grad_log_density = [mixture, &model, z](const Vector& x) -> Vector {
    Vector g = mixture->grad_log_density(x);
    g += model.grad_log_likelihood(z, x);
    return g;
  };
  t.log_density = [mixture, &model, z](const Vector& x) {
    return mixture->log_density(x) + model.log_likelihood(z, x);
  };
  return t;
}

LogDensityTarget window_target(WindowPhase phase, const ParticleEnsemble* anchor,
                               const StateSpaceModel& model,
                               std::span<const Vector> observations) {
  if (observations.empty()) throw std::invalid_argument("window target needs observations");
  if ((phase == WindowPhase::steady) != (anchor != nullptr)) {
    throw std::invalid_argument("steady windows need an anchor ensemble; warm-up windows take none");
  }
  for (const auto& z : observations) {
    if (z.size() != model.obs_dim()) throw std::invalid_argument("observation dimension mismatch");
  }
  std::shared_ptr<const TransitionMixture> mixture;
  if (anchor != nullptr) mixture = std::make_shared<const TransitionMixture>(*anchor, model);

  const int d = model.state_dim();
  const int w = static_cast<int>(observations.size());
  std::vector<Vector> obs(observations.begin(), observations.end());

  auto check = [w, d](const Vector& x) {
    if (x.size() != static_cast<Eigen::Index>(w) * d) {
      std::ostringstream os;
      os << "trajectory of length " << x.size() << " does not match window " << w << " x " << d;
      throw std::invalid_argument(os.str());
    }
  };

  LogDensityTarget t;
  t.dim = w * d;
  t.grad_log_density = [mixture, &model, obs, w, d, check](const Vector& x) -> Vector {
    check(x);
    Vector g(x.size());
    for (int k = 0; k < w; ++k) {
      const Vector xk = x.segment(static_cast<Eigen::Index>(k) * d, d);
      Vector gk = k > 0 ? Vector(model.grad_log_transition(xk, x.segment(static_cast<Eigen::Index>(k - 1) * d, d)))
                  : mixture ? mixture->grad_log_density(xk)
                            : model.grad_log_initial(xk);
      if (k > 0) {
        // Keep the likelihood added second in every block so a one-block
        // window matches the sequential target term for term.
        Vector lik = model.grad_log_likelihood(obs[static_cast<std::size_t>(k)], xk);
        gk = lik + gk;
      } else {
        gk += model.grad_log_likelihood(obs[0], xk);
      }
      if (k + 1 < w) {
        gk += model.grad_log_transition_prev(x.segment(static_cast<Eigen::Index>(k + 1) * d, d), xk);
      }
      g.segment(static_cast<Eigen::Index>(k) * d, d) = gk;
    }
    return g;
  };
  t.log_density = [mixture, &model, obs, w, d, check](const Vector& x) {
    check(x);
    const Vector x0 = x.head(d);
    double lp = mixture ? mixture->log_density(x0) : model.log_initial(x0);
    for (int k = 0; k < w; ++k) {
      const Vector xk = x.segment(static_cast<Eigen::Index>(k) * d, d);
      lp += model.log_likelihood(obs[static_cast<std::size_t>(k)], xk);
      if (k > 0) {
        lp += model.log_transition(xk, x.segment(static_cast<Eigen::Index>(k - 1) * d, d));
      }
    }
    return lp;
  };
  return t;
}

// ---------------------------------------------------------------------------
// Stein filters

namespace {

ParticleEnsemble run_svgd(ParticleEnsemble init, const LogDensityTarget& target,
                          const SvgdConfig& config, Rng& rng, int time_index) {
  SvgdConfig svgd = config;
  if (time_index == 0 && config.initial_iterations) svgd.iterations = *config.initial_iterations;
  try {
    return run(std::move(init), target, svgd, rng);
  } catch (const SvgdDivergence& e) {
    std::ostringstream os;
    os << "filter step " << time_index + 1 << ": " << e.what();
    throw SvgdDivergence(e.iteration(), os.str());
  }
}

Matrix sample_prior(const StateSpaceModel& model, int n, Rng& rng) {
  Matrix x(n, model.state_dim());
  for (int i = 0; i < n; ++i) x.row(i) = model.sample_initial(rng).transpose();
  return x;
}

Matrix propagate(const StateSpaceModel& model, const Matrix& from, Rng& rng) {
  Matrix x(from.rows(), from.cols());
  for (Eigen::Index i = 0; i < from.rows(); ++i) {
    x.row(i) = model.sample_transition(from.row(i).transpose(), rng).transpose();
  }
  return x;
}

}  // namespace

FilterState stein_initial_step(const StateSpaceModel& model, const Vector& z, int n,
                               const SvgdConfig& svgd, Rng& rng) {
  if (n < 1) throw std::invalid_argument("particle count must be positive");
  ParticleEnsemble init(sample_prior(model, n, rng));
  const LogDensityTarget target = initial_target(model, z);
  FilterState state = FilterState::stein_sequential(n);
  std::get<SteinSequentialBackend>(state.backend).ensemble =
      run_svgd(std::move(init), target, svgd, rng, 0);
  state.time_index = 1;
  return state;
}

FilterState stein_sequential_step(FilterState state, const StateSpaceModel& model,
                                  const Vector& z, const SvgdConfig& svgd, Rng& rng) {
  auto* seq = std::get_if<SteinSequentialBackend>(&state.backend);
  if (seq == nullptr) {
    throw std::invalid_argument("stein_sequential_step requires a sequential Stein state");
  }
  if (state.time_index == 0) {
    FilterState first = stein_initial_step(model, z, state.particle_count, svgd, rng);
    std::get<SteinSequentialBackend>(first.backend).init = seq->init;
    return first;
  }
  const LogDensityTarget target = sequential_target(seq->ensemble, model, z);
  ParticleEnsemble init = seq->init == SteinInit::dynamics
                              ? ParticleEnsemble(propagate(model, seq->ensemble.particles(), rng))
                              : seq->ensemble;
  seq->ensemble = run_svgd(std::move(init), target, svgd, rng, state.time_index);
  ++state.time_index;
  return state;
}

FilterState stein_window_step(FilterState state, const StateSpaceModel& model, const Vector& z,
                              const SvgdConfig& svgd, Rng& rng) {
  auto* win = std::get_if<SteinWindowBackend>(&state.backend);
  if (win == nullptr) throw std::invalid_argument("stein_window_step requires a window Stein state");
  const int d = model.state_dim();
  const int n = state.particle_count;

  if (state.time_index == 0) {
    ParticleEnsemble init(sample_prior(model, n, rng));
    const ParticleEnsemble out = run_svgd(std::move(init), initial_target(model, z), svgd, rng, 0);
    win->trajectories = TrajectoryEnsemble(out.particles(), d);
    win->observations = {z};
    win->filtered = {out.particles()};
    state.time_index = 1;
    return state;
  }

  const int stored = win->trajectories.window();
  const Matrix extension = propagate(model, win->trajectories.block(stored - 1), rng);
  Matrix joined(n, static_cast<Eigen::Index>(stored + 1) * d);
  joined << win->trajectories.particles(), extension;
  win->observations.push_back(z);

  ParticleEnsemble result;
  if (stored + 1 <= win->max_window) {
    const LogDensityTarget target =
        window_target(WindowPhase::warmup, nullptr, model, win->observations);
    result = run_svgd(ParticleEnsemble(std::move(joined)), target, svgd, rng, state.time_index);
  } else {
    const ParticleEnsemble anchor(win->anchor == AnchorSource::filtered
                                      ? win->filtered.front()
                                      : Matrix(joined.leftCols(d)));
    win->observations.erase(win->observations.begin());
    const LogDensityTarget target =
        window_target(WindowPhase::steady, &anchor, model, win->observations);
    ParticleEnsemble init(joined.rightCols(static_cast<Eigen::Index>(stored) * d));
    result = run_svgd(std::move(init), target, svgd, rng, state.time_index);
  }

  win->trajectories = TrajectoryEnsemble(std::move(result.particles()), d);
  win->filtered.push_back(win->trajectories.block(win->trajectories.window() - 1));
  while (static_cast<int>(win->filtered.size()) > win->max_window) win->filtered.pop_front();
  ++state.time_index;
  return state;
}

FilterState filter_step(FilterState state, const StateSpaceModel& model, const Vector& z,
                        const SvgdConfig& svgd, Rng& rng) {
  if (std::holds_alternative<SirBackend>(state.backend)) {
    return sir_step(std::move(state), model, z, rng);
  }
  if (std::holds_alternative<SteinSequentialBackend>(state.backend)) {
    return stein_sequential_step(std::move(state), model, z, svgd, rng);
  }
  return stein_window_step(std::move(state), model, z, svgd, rng);
}

}  // namespace steinpf
