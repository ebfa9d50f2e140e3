#pragma once

// Sequential posterior updaters: conjugate exponential-family recursion,
// the Kalman filter, and a bootstrap particle filter.

#include "reflex/linalg.hpp"
#include "reflex/rng.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace reflex {

// ---------------------------------------------------------------------------
// Conjugate families

enum class ConjugateFamily { BetaBernoulli, GammaPoisson, GaussianKnownVariance };

/// Hyperparameters (χ, ν) of a conjugate prior. Updating with x adds T(x)
/// to χ and 1 to ν; T(x) = x for all three families.
///
///   BetaBernoulli           Beta(a, b):      χ = a,       ν = a + b
///   GammaPoisson            Gamma(a, rate b): χ = a,      ν = b
///   GaussianKnownVariance   N(m, v), noise σ²: χ = m σ²/v, ν = σ²/v
struct NaturalParams {
  ConjugateFamily family = ConjugateFamily::BetaBernoulli;
  Vector chi = Vector::Zero(1);
  double nu = 0.0;
  double noise_variance = 1.0; // σ², Gaussian family only

  void validate() const;
  bool operator==(const NaturalParams&) const = default;
};

NaturalParams beta_bernoulli(double a, double b);
NaturalParams gamma_poisson(double shape, double rate);
NaturalParams gaussian_known_variance(double prior_mean, double prior_variance,
                                      double noise_variance);

/// Throws DomainError when x is outside the family's support.
NaturalParams conjugate_update(const NaturalParams& params, double x);
NaturalParams conjugate_update(const NaturalParams& params, std::span<const double> xs);

struct BetaParams {
  double a, b;
};
struct GammaParams {
  double shape, rate;
};
struct NormalParams {
  double mean, variance;
};

BetaParams beta_parameters(const NaturalParams& p);
GammaParams gamma_parameters(const NaturalParams& p);
NormalParams normal_parameters(const NaturalParams& p);

/// Posterior mean of the reward parameter (success probability, Poisson
/// rate or Gaussian mean).
double posterior_mean(const NaturalParams& p);

/// One draw of the reward parameter from the posterior.
double sample_parameter(const NaturalParams& p, Stream& rng);

// ---------------------------------------------------------------------------
// Kalman filter

struct GaussianBelief {
  Vector mean;
  Matrix covariance;
};

/// θ_t = F θ_{t-1} + w_t, w_t ~ N(0, Q);  x_t = H θ_t + v_t, v_t ~ N(0, R).
struct LinearGaussianModel {
  Matrix F, H, Q, R;

  std::size_t state_dim() const { return static_cast<std::size_t>(F.rows()); }
  std::size_t obs_dim() const { return static_cast<std::size_t>(H.rows()); }
  void validate() const;
};

GaussianBelief kalman_predict(const GaussianBelief& belief, const LinearGaussianModel& model);

struct KalmanUpdate {
  GaussianBelief belief;
  Vector innovation;
  Matrix gain;
};

/// Update with observation y. Joseph-form covariance; throws
/// SingularInnovation when HPHᵀ + R cannot be factorised.
KalmanUpdate kalman_update(const GaussianBelief& belief, const LinearGaussianModel& model,
                           const Vector& y);

/// Predict-then-update over the rows of `observations`; returns the filtered
/// beliefs, one per row.
std::vector<GaussianBelief> kalman_filter(const GaussianBelief& prior,
                                          const LinearGaussianModel& model,
                                          const RowMatrix& observations);

// ---------------------------------------------------------------------------
// Particle filter

struct ParticleEnsemble {
  RowMatrix particles; // N × d
  Vector weights;      // normalised

  std::size_t size() const { return static_cast<std::size_t>(particles.rows()); }
};

/// Writes a draw of θ_t given θ_{t-1} = prev into `out`.
using TransitionSampler = std::function<void(const Vector& prev, Stream& rng, Vector& out)>;
/// log p(x_t | θ_t).
using LogLikelihood = std::function<double(const Vector& state, const Vector& obs)>;

double effective_sample_size(std::span<const double> weights);
inline double effective_sample_size(const Vector& w) {
  return effective_sample_size(std::span<const double>(w.data(), static_cast<std::size_t>(w.size())));
}

/// Systematic resampling: ancestor indices for `n` offspring from one uniform.
std::vector<std::size_t> systematic_resample(std::span<const double> weights, std::size_t n,
                                             double u);

/// N equally weighted particles from a Gaussian belief.
ParticleEnsemble gaussian_ensemble(const GaussianBelief& belief, std::size_t n,
                                   std::uint64_t seed);

struct PfStep {
  ParticleEnsemble ensemble;
  double ess = 0.0; // before resampling
  bool resampled = false;
};

/// One bootstrap-filter step. Particle i at step t draws from
/// Stream(seed, Particle, t, i) and resampling from Stream(seed, Resample, t),
/// so the result does not depend on `workers`. Throws DegeneracyError when
/// every weight vanishes.
PfStep pf_step(const ParticleEnsemble& ensemble, const TransitionSampler& transition,
               const LogLikelihood& likelihood, const Vector& obs, double ess_threshold,
               std::uint64_t seed, std::uint64_t step, int workers);

/// Serial reference for pf_step.
PfStep pf_step_serial(const ParticleEnsemble& ensemble, const TransitionSampler& transition,
                      const LogLikelihood& likelihood, const Vector& obs, double ess_threshold,
                      std::uint64_t seed, std::uint64_t step);

TransitionSampler linear_gaussian_transition(const LinearGaussianModel& model);
LogLikelihood linear_gaussian_likelihood(const LinearGaussianModel& model);

/// Weighted mean and covariance of an ensemble.
GaussianBelief ensemble_moments(const ParticleEnsemble& ensemble);

/// Simulated trajectory of a linear-Gaussian model.
struct Trajectory {
  RowMatrix states;       // T × d
  RowMatrix observations; // T × m
};

Trajectory simulate_linear_gaussian(const LinearGaussianModel& model, const Vector& initial,
                                    std::size_t steps, std::uint64_t seed);

} // namespace reflex
