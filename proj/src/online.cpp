#include "reflex/online.hpp"

#include "reflex/errors.hpp"
#include "reflex/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace reflex {

namespace {

const char* family_name(ConjugateFamily f) {
  switch (f) {
  case ConjugateFamily::BetaBernoulli:
    return "beta-bernoulli";
  case ConjugateFamily::GammaPoisson:
    return "gamma-poisson";
  case ConjugateFamily::GaussianKnownVariance:
    return "gaussian-known-variance";
  }
  return "unknown";
}

void check_observation(ConjugateFamily f, double x) {
  switch (f) {
  case ConjugateFamily::BetaBernoulli:
    if (x != 0.0 && x != 1.0)
      throw DomainError("beta-bernoulli: observation must be 0 or 1, got " + std::to_string(x));
    return;
  case ConjugateFamily::GammaPoisson:
    if (!(x >= 0.0) || std::floor(x) != x || std::isinf(x))
      throw DomainError("gamma-poisson: observation must be a non-negative integer, got " +
                        std::to_string(x));
    return;
  case ConjugateFamily::GaussianKnownVariance:
    if (!std::isfinite(x))
      throw DomainError("gaussian-known-variance: observation must be finite");
    return;
  }
}

// Factor with V diag(√λ⁺), so that L Lᵀ = Q for any PSD Q.
Matrix psd_factor(const Matrix& q) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrized(q));
  Vector lam = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * lam.asDiagonal();
}

void check_psd(const Matrix& m, const char* what) {
  if (m.rows() != m.cols())
    throw PreconditionError(std::string(what) + " must be square");
  if (!m.allFinite())
    throw PreconditionError(std::string(what) + " has non-finite entries");
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-10 * std::max(1.0, m.cwiseAbs().maxCoeff()))
    throw NotSpdError(std::string(what) + " is not symmetric");
  if (m.size() && Eigen::SelfAdjointEigenSolver<Matrix>(symmetrized(m)).eigenvalues().minCoeff() <
                      -1e-10 * std::max(1.0, m.cwiseAbs().maxCoeff()))
    throw NotSpdError(std::string(what) + " is not positive semi-definite");
}

void check_belief(const GaussianBelief& b, std::size_t d) {
  if (static_cast<std::size_t>(b.mean.size()) != d ||
      static_cast<std::size_t>(b.covariance.rows()) != d ||
      static_cast<std::size_t>(b.covariance.cols()) != d)
    throw PreconditionError("belief dimension does not match the model state dimension");
}

} // namespace

void NaturalParams::validate() const {
  if (chi.size() != 1)
    throw PreconditionError(std::string(family_name(family)) + ": chi must have one entry");
  if (!std::isfinite(chi[0]) || !std::isfinite(nu))
    throw PreconditionError(std::string(family_name(family)) + ": non-finite hyperparameters");
  switch (family) {
  case ConjugateFamily::BetaBernoulli:
    if (!(chi[0] > 0.0 && nu - chi[0] > 0.0))
      throw PreconditionError("beta-bernoulli: both Beta parameters must be positive");
    break;
  case ConjugateFamily::GammaPoisson:
    if (!(chi[0] > 0.0 && nu > 0.0))
      throw PreconditionError("gamma-poisson: shape and rate must be positive");
    break;
  case ConjugateFamily::GaussianKnownVariance:
    if (!(nu > 0.0 && noise_variance > 0.0))
      throw PreconditionError("gaussian-known-variance: variances must be positive");
    break;
  }
}

NaturalParams beta_bernoulli(double a, double b) {
  NaturalParams p{ConjugateFamily::BetaBernoulli, Vector::Constant(1, a), a + b, 1.0};
  p.validate();
  return p;
}

NaturalParams gamma_poisson(double shape, double rate) {
  NaturalParams p{ConjugateFamily::GammaPoisson, Vector::Constant(1, shape), rate, 1.0};
  p.validate();
  return p;
}

NaturalParams gaussian_known_variance(double prior_mean, double prior_variance,
                                      double noise_variance) {
  if (!(prior_variance > 0.0) || !(noise_variance > 0.0))
    throw PreconditionError("gaussian-known-variance: variances must be positive");
  const double nu = noise_variance / prior_variance;
  NaturalParams p{ConjugateFamily::GaussianKnownVariance, Vector::Constant(1, prior_mean * nu),
                  nu, noise_variance};
  p.validate();
  return p;
}

NaturalParams conjugate_update(const NaturalParams& params, double x) {
  check_observation(params.family, x);
  NaturalParams out = params;
  out.chi[0] += x;
  out.nu += 1.0;
  return out;
}

NaturalParams conjugate_update(const NaturalParams& params, std::span<const double> xs) {
  for (double x : xs)
    check_observation(params.family, x);
  NaturalParams out = params;
  for (double x : xs)
    out.chi[0] += x;
  out.nu += static_cast<double>(xs.size());
  return out;
}

BetaParams beta_parameters(const NaturalParams& p) {
  if (p.family != ConjugateFamily::BetaBernoulli)
    throw PreconditionError("beta_parameters: not a beta-bernoulli prior");
  return {p.chi[0], p.nu - p.chi[0]};
}

GammaParams gamma_parameters(const NaturalParams& p) {
  if (p.family != ConjugateFamily::GammaPoisson)
    throw PreconditionError("gamma_parameters: not a gamma-poisson prior");
  return {p.chi[0], p.nu};
}

NormalParams normal_parameters(const NaturalParams& p) {
  if (p.family != ConjugateFamily::GaussianKnownVariance)
    throw PreconditionError("normal_parameters: not a gaussian-known-variance prior");
  return {p.chi[0] / p.nu, p.noise_variance / p.nu};
}

double posterior_mean(const NaturalParams& p) {
  switch (p.family) {
  case ConjugateFamily::BetaBernoulli:
  case ConjugateFamily::GaussianKnownVariance:
  case ConjugateFamily::GammaPoisson:
    return p.chi[0] / p.nu;
  }
  return 0.0;
}

double sample_parameter(const NaturalParams& p, Stream& rng) {
  switch (p.family) {
  case ConjugateFamily::BetaBernoulli: {
    auto [a, b] = beta_parameters(p);
    return rng.beta(a, b);
  }
  case ConjugateFamily::GammaPoisson: {
    auto [shape, rate] = gamma_parameters(p);
    return rng.gamma(shape) / rate;
  }
  case ConjugateFamily::GaussianKnownVariance: {
    auto [m, v] = normal_parameters(p);
    return m + std::sqrt(v) * rng.normal();
  }
  }
  return 0.0;
}

// ---------------------------------------------------------------------------

void LinearGaussianModel::validate() const {
  const auto d = F.rows();
  const auto m = H.rows();
  if (d == 0 || F.cols() != d)
    throw PreconditionError("model: F must be square and non-empty");
  if (H.cols() != d || m == 0)
    throw PreconditionError("model: H must have as many columns as F");
  if (Q.rows() != d || R.rows() != m)
    throw PreconditionError("model: Q or R has the wrong dimension");
  check_psd(Q, "Q");
  check_psd(R, "R");
}

GaussianBelief kalman_predict(const GaussianBelief& belief, const LinearGaussianModel& model) {
  check_belief(belief, model.state_dim());
  GaussianBelief out;
  out.mean = model.F * belief.mean;
  out.covariance = symmetrized(model.F * belief.covariance * model.F.transpose() + model.Q);
  return out;
}

KalmanUpdate kalman_update(const GaussianBelief& belief, const LinearGaussianModel& model,
                           const Vector& y) {
  check_belief(belief, model.state_dim());
  if (static_cast<std::size_t>(y.size()) != model.obs_dim())
    throw PreconditionError("observation dimension does not match H");
  const Matrix& P = belief.covariance;
  const Matrix PHt = P * model.H.transpose();
  const Matrix S = symmetrized(model.H * PHt + model.R);
  Eigen::LLT<Matrix> llt(S);
  if (llt.info() != Eigen::Success || !S.allFinite())
    throw SingularInnovation("innovation covariance is singular");
  KalmanUpdate out;
  out.innovation = y - model.H * belief.mean;
  out.gain = llt.solve(PHt.transpose()).transpose();
  if (!out.gain.allFinite())
    throw SingularInnovation("innovation covariance is singular");
  const auto d = static_cast<Eigen::Index>(model.state_dim());
  const Matrix IKH = Matrix::Identity(d, d) - out.gain * model.H;
  out.belief.mean = belief.mean + out.gain * out.innovation;
  out.belief.covariance =
      symmetrized(IKH * P * IKH.transpose() + out.gain * model.R * out.gain.transpose());
  return out;
}

std::vector<GaussianBelief> kalman_filter(const GaussianBelief& prior,
                                          const LinearGaussianModel& model,
                                          const RowMatrix& observations) {
  model.validate();
  std::vector<GaussianBelief> out;
  out.reserve(static_cast<std::size_t>(observations.rows()));
  GaussianBelief b = prior;
  for (Eigen::Index t = 0; t < observations.rows(); ++t) {
    b = kalman_update(kalman_predict(b, model), model, observations.row(t).transpose()).belief;
    out.push_back(b);
  }
  return out;
}

// ---------------------------------------------------------------------------

double effective_sample_size(std::span<const double> weights) {
  double sq = 0.0;
  for (double w : weights)
    sq += w * w;
  if (!(sq > 0.0))
    throw PreconditionError("effective_sample_size: weights are all zero");
  return std::clamp(1.0 / sq, 1.0, static_cast<double>(weights.size()));
}

std::vector<std::size_t> systematic_resample(std::span<const double> weights, std::size_t n,
                                             double u) {
  if (weights.empty() || n == 0)
    throw PreconditionError("systematic_resample: empty input");
  if (!(u >= 0.0 && u < 1.0))
    throw PreconditionError("systematic_resample: u must lie in [0, 1)");
  std::vector<std::size_t> idx(n);
  double cum = weights[0];
  std::size_t j = 0;
  const double step = 1.0 / static_cast<double>(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double pos = (static_cast<double>(k) + u) * step;
    while (pos >= cum && j + 1 < weights.size())
      cum += weights[++j];
    // Skip zero-weight particles that the rounding in cum may have landed on.
    std::size_t pick = j;
    while (weights[pick] == 0.0 && pick > 0)
      --pick;
    idx[k] = pick;
  }
  return idx;
}

ParticleEnsemble gaussian_ensemble(const GaussianBelief& belief, std::size_t n,
                                   std::uint64_t seed) {
  if (n == 0)
    throw PreconditionError("gaussian_ensemble: need at least one particle");
  const auto d = belief.mean.size();
  const Matrix L = psd_factor(belief.covariance);
  ParticleEnsemble e;
  e.particles.resize(static_cast<Eigen::Index>(n), d);
  e.weights = Vector::Constant(static_cast<Eigen::Index>(n), 1.0 / static_cast<double>(n));
  Vector z(d);
  for (std::size_t i = 0; i < n; ++i) {
    Stream rng(seed, StreamTag::Particle, 0, static_cast<std::uint32_t>(i));
    for (Eigen::Index k = 0; k < d; ++k)
      z[k] = rng.normal();
    e.particles.row(static_cast<Eigen::Index>(i)) = (belief.mean + L * z).transpose();
  }
  return e;
}

namespace {

constexpr std::size_t kParticleBlock = 512;

void propagate_block(const ParticleEnsemble& in, const TransitionSampler& transition,
                     const LogLikelihood& likelihood, const Vector& obs, std::uint64_t seed,
                     std::uint64_t step, std::size_t lo, std::size_t hi, RowMatrix& out,
                     Vector& logw) {
  const auto d = in.particles.cols();
  Vector prev(d), next(d);
  for (std::size_t i = lo; i < hi; ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    prev = in.particles.row(r).transpose();
    Stream rng(seed, StreamTag::Particle, step, static_cast<std::uint32_t>(i));
    transition(prev, rng, next);
    out.row(r) = next.transpose();
    const double w = in.weights[r];
    double lw = -std::numeric_limits<double>::infinity();
    if (w > 0.0) {
      const double ll = likelihood(next, obs);
      if (std::isnan(ll))
        throw NumericalError("particle filter: likelihood returned NaN for particle " +
                             std::to_string(i));
      lw = std::log(w) + ll;
    }
    logw[r] = lw;
  }
}

PfStep finish_step(RowMatrix particles, const Vector& logw, double ess_threshold,
                   std::uint64_t seed, std::uint64_t step) {
  const double mx = logw.maxCoeff();
  if (!std::isfinite(mx)) {
    if (mx == std::numeric_limits<double>::infinity())
      throw NumericalError("particle filter: infinite log-weight");
    throw DegeneracyError("particle filter: every particle weight is zero at step " +
                          std::to_string(step));
  }
  Vector w = (logw.array() - mx).exp();
  w /= w.sum();
  PfStep out;
  out.ess = effective_sample_size(w);
  if (out.ess < ess_threshold) {
    const std::size_t n = static_cast<std::size_t>(w.size());
    Stream rng(seed, StreamTag::Resample, step);
    auto idx = systematic_resample(std::span<const double>(w.data(), n), n, rng.uniform());
    RowMatrix res(particles.rows(), particles.cols());
    for (std::size_t k = 0; k < n; ++k)
      res.row(static_cast<Eigen::Index>(k)) = particles.row(static_cast<Eigen::Index>(idx[k]));
    out.ensemble.particles = std::move(res);
    out.ensemble.weights = Vector::Constant(w.size(), 1.0 / static_cast<double>(n));
    out.resampled = true;
  } else {
    out.ensemble.particles = std::move(particles);
    out.ensemble.weights = std::move(w);
  }
  return out;
}

void check_ensemble(const ParticleEnsemble& e) {
  if (e.size() == 0 || e.weights.size() != e.particles.rows())
    throw PreconditionError("particle filter: ensemble is empty or malformed");
  if ((e.weights.array() < 0.0).any() || std::abs(e.weights.sum() - 1.0) > 1e-9)
    throw PreconditionError("particle filter: weights must be non-negative and sum to 1");
}

} // namespace

PfStep pf_step(const ParticleEnsemble& ensemble, const TransitionSampler& transition,
               const LogLikelihood& likelihood, const Vector& obs, double ess_threshold,
               std::uint64_t seed, std::uint64_t step, int workers) {
  check_ensemble(ensemble);
  const std::size_t n = ensemble.size();
  RowMatrix next(ensemble.particles.rows(), ensemble.particles.cols());
  Vector logw(ensemble.weights.size());
  const std::size_t blocks = (n + kParticleBlock - 1) / kParticleBlock;
  parallel_for(blocks, workers, [&](std::size_t b) {
    propagate_block(ensemble, transition, likelihood, obs, seed, step, b * kParticleBlock,
                    std::min(n, (b + 1) * kParticleBlock), next, logw);
  });
  return finish_step(std::move(next), logw, ess_threshold, seed, step);
}

PfStep pf_step_serial(const ParticleEnsemble& ensemble, const TransitionSampler& transition,
                      const LogLikelihood& likelihood, const Vector& obs, double ess_threshold,
                      std::uint64_t seed, std::uint64_t step) {
  check_ensemble(ensemble);
  RowMatrix next(ensemble.particles.rows(), ensemble.particles.cols());
  Vector logw(ensemble.weights.size());
  propagate_block(ensemble, transition, likelihood, obs, seed, step, 0, ensemble.size(), next,
                  logw);
  return finish_step(std::move(next), logw, ess_threshold, seed, step);
}

TransitionSampler linear_gaussian_transition(const LinearGaussianModel& model) {
  model.validate();
  Matrix F = model.F;
  Matrix L = psd_factor(model.Q);
  return [F, L](const Vector& prev, Stream& rng, Vector& out) {
    Vector z(L.cols());
    for (Eigen::Index k = 0; k < z.size(); ++k)
      z[k] = rng.normal();
    out.noalias() = F * prev;
    out.noalias() += L * z;
  };
}

LogLikelihood linear_gaussian_likelihood(const LinearGaussianModel& model) {
  model.validate();
  Matrix H = model.H;
  Matrix L = cholesky_lower(model.R, "R");
  const double log_norm = -static_cast<double>(H.rows()) * 0.5 * std::log(2.0 * std::numbers::pi) -
                          L.diagonal().array().log().sum();
  return [H, L, log_norm](const Vector& state, const Vector& obs) {
    Vector mu = H * state;
    return log_norm - 0.5 * lower_solve_norm_sq(L, obs, mu);
  };
}

GaussianBelief ensemble_moments(const ParticleEnsemble& e) {
  check_ensemble(e);
  GaussianBelief b;
  b.mean = e.particles.transpose() * e.weights;
  RowMatrix centred = e.particles.rowwise() - b.mean.transpose();
  b.covariance = symmetrized(centred.transpose() * e.weights.asDiagonal() * centred);
  return b;
}

Trajectory simulate_linear_gaussian(const LinearGaussianModel& model, const Vector& initial,
                                    std::size_t steps, std::uint64_t seed) {
  model.validate();
  if (static_cast<std::size_t>(initial.size()) != model.state_dim())
    throw PreconditionError("simulate: initial state has the wrong dimension");
  const Matrix LQ = psd_factor(model.Q);
  const Matrix LR = psd_factor(model.R);
  const auto d = static_cast<Eigen::Index>(model.state_dim());
  const auto m = static_cast<Eigen::Index>(model.obs_dim());
  Trajectory tr;
  tr.states.resize(static_cast<Eigen::Index>(steps), d);
  tr.observations.resize(static_cast<Eigen::Index>(steps), m);
  Stream rng(seed, StreamTag::Simulation);
  Vector x = initial, zq(d), zr(m);
  for (std::size_t t = 0; t < steps; ++t) {
    for (Eigen::Index k = 0; k < d; ++k)
      zq[k] = rng.normal();
    for (Eigen::Index k = 0; k < m; ++k)
      zr[k] = rng.normal();
    x = model.F * x + LQ * zq;
    tr.states.row(static_cast<Eigen::Index>(t)) = x.transpose();
    tr.observations.row(static_cast<Eigen::Index>(t)) = (model.H * x + LR * zr).transpose();
  }
  return tr;
}

} // namespace reflex
