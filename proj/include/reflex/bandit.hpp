#pragma once

// Thompson sampling over simulated bandits, with pseudo-regret accounting.
// Bernoulli and Gaussian arms use conjugate posteriors; the logistic model
// draws its shared weight vector from the ellipsoidal iid sampler.

#include "reflex/engine.hpp"
#include "reflex/online.hpp"
#include "reflex/rng.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <variant>
#include <vector>

namespace reflex {

struct BernoulliArm {
  double mean;
};
struct GaussianArm {
  double mean;
  double variance = 1.0;
};
using ArmSpec = std::variant<BernoulliArm, GaussianArm>;

struct BanditEnvironment {
  std::vector<ArmSpec> arms;

  void validate() const;
  std::size_t size() const { return arms.size(); }
  double arm_mean(std::size_t a) const;
  double best_mean() const;
  double pull(std::size_t a, Stream& rng) const;
};

/// A posterior known exactly; every draw returns `value`.
struct PointMass {
  double value;
};
using ArmPosterior = std::variant<NaturalParams, PointMass>;

double sample_arm(const ArmPosterior& posterior, Stream& rng);

/// Index of the largest value; ties go to the lowest index.
std::size_t argmax_action(std::span<const double> values);

/// One posterior draw per arm, then the argmax.
std::size_t thompson_step(std::span<const ArmPosterior> posteriors, Stream& rng);

enum class Policy { Thompson, UniformRandom };

struct BanditPrior {
  double beta_a = 1.0;
  double beta_b = 1.0;
  double gaussian_mean = 0.0;
  double gaussian_variance = 1.0;
};

std::vector<ArmPosterior> initial_posteriors(const BanditEnvironment& env,
                                             const BanditPrior& prior = {});

struct BanditHistory {
  std::vector<std::size_t> actions;
  std::vector<double> rewards;
  std::vector<ArmPosterior> posteriors; // after the last update
};

struct RegretTrace {
  std::vector<double> cumulative; // R_0 = 0, ..., R_T

  double final() const { return cumulative.back(); }
};

struct BanditRun {
  BanditHistory history;
  RegretTrace regret;
};

/// T rounds. Round t draws rewards from Stream(seed, Reward, t) and policy
/// randomness from Stream(seed, Policy, t).
BanditRun run_bandit(const BanditEnvironment& env, Policy policy, std::size_t horizon,
                     std::uint64_t seed, const BanditPrior& prior = {});

/// Independent runs, one per seed, spread across workers.
std::vector<BanditRun> run_bandit_seeds(const BanditEnvironment& env, Policy policy,
                                        std::size_t horizon, std::span<const std::uint64_t> seeds,
                                        int workers, const BanditPrior& prior = {});

// ---------------------------------------------------------------------------
// Logistic arms sharing an unknown weight vector w*: pulling arm a pays
// Bernoulli(σ(x_aᵀ w*)).

struct LogisticBanditEnvironment {
  Matrix features; // K × d, row a is x_a
  Vector weight;   // w*

  void validate() const;
  std::size_t size() const { return static_cast<std::size_t>(features.rows()); }
  double arm_mean(std::size_t a) const;
  double best_mean() const;
  double pull(std::size_t a, Stream& rng) const;
};

struct BridgeConfig {
  SamplerConfig sampler = default_sampler();
  std::size_t refresh_every = 25; // observations between recalibrations
  Vector prior_mean;              // empty: zero
  double prior_variance = 1.0;

  static SamplerConfig default_sampler();
};

/// Posterior over w maintained as aggregated (arm, trials, successes)
/// counts, sampled through an ellipsoidal sampler that is rebuilt every
/// `refresh_every` observations. Draws in between come from the posterior
/// as of the last rebuild and are counted as stale.
class LogisticPosteriorBridge {
public:
  LogisticPosteriorBridge(Matrix features, BridgeConfig config, std::uint64_t seed);

  void observe(std::size_t arm, double reward);
  Vector draw(Stream& rng);

  LogisticPosteriorSpec posterior_spec() const;
  const SamplerState& state();

  std::size_t observations() const noexcept { return observations_; }
  std::size_t refreshes() const noexcept { return refreshes_; }
  std::size_t stale_draws() const noexcept { return stale_draws_; }
  std::uint64_t doubling_events() const noexcept;
  std::uint64_t refinements() const noexcept;

private:
  void refresh();

  Matrix features_;
  BridgeConfig config_;
  std::uint64_t seed_;
  std::vector<double> trials_, successes_;
  std::size_t observations_ = 0;
  std::size_t since_refresh_ = 0;
  std::size_t refreshes_ = 0;
  std::size_t stale_draws_ = 0;
  std::uint64_t past_doublings_ = 0;
  std::uint64_t past_refinements_ = 0;
  std::optional<SamplerState> state_;
};

/// One ellipsoidal-engine draw from the posterior held by `state`.
Vector exact_posterior_arm_sample(SamplerState& state, Stream& rng);

struct LogisticBanditRun {
  std::vector<std::size_t> actions;
  std::vector<double> rewards;
  RegretTrace regret;
  std::size_t refreshes = 0;
  std::size_t stale_draws = 0;
  std::uint64_t doubling_events = 0;
  std::uint64_t refinements = 0;
};

LogisticBanditRun run_logistic_bandit(const LogisticBanditEnvironment& env, Policy policy,
                                      std::size_t horizon, std::uint64_t seed,
                                      const BridgeConfig& config = {});

} // namespace reflex
