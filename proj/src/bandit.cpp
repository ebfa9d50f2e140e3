#include "reflex/bandit.hpp"

#include "reflex/errors.hpp"
#include "reflex/parallel.hpp"

#include <cmath>

namespace reflex {

namespace {

double sigmoid(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

std::size_t uniform_arm(std::size_t k, Stream& rng) {
  auto a = static_cast<std::size_t>(rng.uniform() * static_cast<double>(k));
  return std::min(a, k - 1);
}

} // namespace

void BanditEnvironment::validate() const {
  if (arms.empty())
    throw PreconditionError("bandit: need at least one arm");
  for (std::size_t a = 0; a < arms.size(); ++a) {
    if (auto* b = std::get_if<BernoulliArm>(&arms[a])) {
      if (!(b->mean >= 0.0 && b->mean <= 1.0))
        throw PreconditionError("bandit: Bernoulli mean of arm " + std::to_string(a) +
                                " must lie in [0, 1]");
    } else {
      const auto& g = std::get<GaussianArm>(arms[a]);
      if (!std::isfinite(g.mean) || !(g.variance > 0.0))
        throw PreconditionError("bandit: Gaussian arm " + std::to_string(a) +
                                " needs a finite mean and positive variance");
    }
  }
}

double BanditEnvironment::arm_mean(std::size_t a) const {
  return std::visit([](const auto& s) { return s.mean; }, arms.at(a));
}

double BanditEnvironment::best_mean() const {
  double best = arm_mean(0);
  for (std::size_t a = 1; a < arms.size(); ++a)
    best = std::max(best, arm_mean(a));
  return best;
}

double BanditEnvironment::pull(std::size_t a, Stream& rng) const {
  const ArmSpec& s = arms.at(a);
  if (auto* b = std::get_if<BernoulliArm>(&s))
    return rng.uniform() < b->mean ? 1.0 : 0.0;
  const auto& g = std::get<GaussianArm>(s);
  return g.mean + std::sqrt(g.variance) * rng.normal();
}

double sample_arm(const ArmPosterior& posterior, Stream& rng) {
  if (auto* pm = std::get_if<PointMass>(&posterior))
    return pm->value;
  return sample_parameter(std::get<NaturalParams>(posterior), rng);
}

std::size_t argmax_action(std::span<const double> values) {
  if (values.empty())
    throw PreconditionError("argmax_action: no arms");
  std::size_t best = 0;
  for (std::size_t a = 1; a < values.size(); ++a)
    if (values[a] > values[best])
      best = a;
  return best;
}

std::size_t thompson_step(std::span<const ArmPosterior> posteriors, Stream& rng) {
  if (posteriors.empty())
    throw PreconditionError("thompson_step: no arms");
  std::vector<double> draws(posteriors.size());
  for (std::size_t a = 0; a < posteriors.size(); ++a)
    draws[a] = sample_arm(posteriors[a], rng);
  return argmax_action(draws);
}

std::vector<ArmPosterior> initial_posteriors(const BanditEnvironment& env,
                                             const BanditPrior& prior) {
  std::vector<ArmPosterior> out;
  out.reserve(env.size());
  for (const auto& arm : env.arms) {
    if (std::holds_alternative<BernoulliArm>(arm))
      out.emplace_back(beta_bernoulli(prior.beta_a, prior.beta_b));
    else
      out.emplace_back(gaussian_known_variance(prior.gaussian_mean, prior.gaussian_variance,
                                               std::get<GaussianArm>(arm).variance));
  }
  return out;
}

BanditRun run_bandit(const BanditEnvironment& env, Policy policy, std::size_t horizon,
                     std::uint64_t seed, const BanditPrior& prior) {
  env.validate();
  if (horizon == 0)
    throw PreconditionError("bandit: horizon must be at least 1");
  BanditRun run;
  auto& h = run.history;
  h.posteriors = initial_posteriors(env, prior);
  h.actions.reserve(horizon);
  h.rewards.reserve(horizon);
  run.regret.cumulative.assign(horizon + 1, 0.0);
  const double best = env.best_mean();
  for (std::size_t t = 0; t < horizon; ++t) {
    Stream policy_rng(seed, StreamTag::Policy, t);
    const std::size_t a = policy == Policy::Thompson ? thompson_step(h.posteriors, policy_rng)
                                                     : uniform_arm(env.size(), policy_rng);
    Stream reward_rng(seed, StreamTag::Reward, t);
    const double r = env.pull(a, reward_rng);
    h.actions.push_back(a);
    h.rewards.push_back(r);
    auto& post = std::get<NaturalParams>(h.posteriors[a]);
    post = conjugate_update(post, r);
    run.regret.cumulative[t + 1] = run.regret.cumulative[t] + (best - env.arm_mean(a));
  }
  return run;
}

std::vector<BanditRun> run_bandit_seeds(const BanditEnvironment& env, Policy policy,
                                        std::size_t horizon, std::span<const std::uint64_t> seeds,
                                        int workers, const BanditPrior& prior) {
  std::vector<BanditRun> runs(seeds.size());
  parallel_for(seeds.size(), workers,
               [&](std::size_t i) { runs[i] = run_bandit(env, policy, horizon, seeds[i], prior); });
  return runs;
}

// ---------------------------------------------------------------------------

void LogisticBanditEnvironment::validate() const {
  if (features.rows() == 0 || features.cols() == 0)
    throw PreconditionError("logistic bandit: need at least one arm and one feature");
  if (weight.size() != features.cols())
    throw PreconditionError("logistic bandit: weight dimension does not match features");
  if (!features.allFinite() || !weight.allFinite())
    throw PreconditionError("logistic bandit: non-finite features or weight");
}

double LogisticBanditEnvironment::arm_mean(std::size_t a) const {
  return sigmoid(features.row(static_cast<Eigen::Index>(a)).dot(weight));
}

double LogisticBanditEnvironment::best_mean() const {
  double best = arm_mean(0);
  for (std::size_t a = 1; a < size(); ++a)
    best = std::max(best, arm_mean(a));
  return best;
}

double LogisticBanditEnvironment::pull(std::size_t a, Stream& rng) const {
  return rng.uniform() < arm_mean(a) ? 1.0 : 0.0;
}

SamplerConfig BridgeConfig::default_sampler() {
  SamplerConfig s;
  s.calibration.n_min = 2'000;
  s.calibration.n_max = 16'000;
  s.calibration.target_rel_se = 0.02;
  s.calibration.pilot_iters = 2'000;
  s.calibration.pilot_burnin = 500;
  s.refinements_per_draw = 8;
  return s;
}

LogisticPosteriorBridge::LogisticPosteriorBridge(Matrix features, BridgeConfig config,
                                                 std::uint64_t seed)
    : features_(std::move(features)), config_(std::move(config)), seed_(seed),
      trials_(static_cast<std::size_t>(features_.rows()), 0.0),
      successes_(static_cast<std::size_t>(features_.rows()), 0.0) {
  if (features_.rows() == 0 || features_.cols() == 0)
    throw PreconditionError("bridge: empty feature matrix");
  if (config_.prior_mean.size() == 0)
    config_.prior_mean = Vector::Zero(features_.cols());
  if (config_.prior_mean.size() != features_.cols())
    throw PreconditionError("bridge: prior mean dimension does not match features");
  if (config_.refresh_every == 0)
    throw PreconditionError("bridge: refresh interval must be positive");
  config_.sampler.validate();
}

void LogisticPosteriorBridge::observe(std::size_t arm, double reward) {
  if (arm >= trials_.size())
    throw PreconditionError("bridge: arm index out of range");
  if (reward != 0.0 && reward != 1.0)
    throw DomainError("bridge: logistic rewards must be 0 or 1");
  trials_[arm] += 1.0;
  successes_[arm] += reward;
  ++observations_;
  ++since_refresh_;
}

LogisticPosteriorSpec LogisticPosteriorBridge::posterior_spec() const {
  LogisticPosteriorSpec s;
  std::vector<Eigen::Index> rows;
  for (std::size_t a = 0; a < trials_.size(); ++a)
    if (trials_[a] > 0.0)
      rows.push_back(static_cast<Eigen::Index>(a));
  s.design.resize(static_cast<Eigen::Index>(rows.size()), features_.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    s.design.row(static_cast<Eigen::Index>(r)) = features_.row(rows[r]);
    s.responses.push_back(successes_[static_cast<std::size_t>(rows[r])]);
    s.trials.push_back(trials_[static_cast<std::size_t>(rows[r])]);
  }
  s.prior_mean = config_.prior_mean;
  s.prior_variance = config_.prior_variance;
  return s;
}

void LogisticPosteriorBridge::refresh() {
  SamplerConfig cfg = config_.sampler;
  cfg.calibration.seed = mix64(seed_ ^ mix64(refreshes_));
  if (state_) {
    cfg.calibration.pilot_start = state_->partition.center();
    past_doublings_ += state_->counters.doubling_events;
    past_refinements_ += state_->counters.refinements;
  }
  state_.emplace(build_sampler(make_builtin(posterior_spec()), cfg, 1));
  since_refresh_ = 0;
  ++refreshes_;
}

const SamplerState& LogisticPosteriorBridge::state() {
  if (!state_ || since_refresh_ >= config_.refresh_every)
    refresh();
  return *state_;
}

Vector LogisticPosteriorBridge::draw(Stream& rng) {
  state();
  if (since_refresh_ > 0)
    ++stale_draws_;
  return exact_posterior_arm_sample(*state_, rng);
}

std::uint64_t LogisticPosteriorBridge::doubling_events() const noexcept {
  return past_doublings_ + (state_ ? state_->counters.doubling_events : 0);
}

std::uint64_t LogisticPosteriorBridge::refinements() const noexcept {
  return past_refinements_ + (state_ ? state_->counters.refinements : 0);
}

Vector exact_posterior_arm_sample(SamplerState& state, Stream& rng) {
  return draw_iid(state, rng).x;
}

LogisticBanditRun run_logistic_bandit(const LogisticBanditEnvironment& env, Policy policy,
                                      std::size_t horizon, std::uint64_t seed,
                                      const BridgeConfig& config) {
  env.validate();
  if (horizon == 0)
    throw PreconditionError("bandit: horizon must be at least 1");
  LogisticBanditRun run;
  run.regret.cumulative.assign(horizon + 1, 0.0);
  const double best = env.best_mean();
  const std::size_t k = env.size();
  std::optional<LogisticPosteriorBridge> bridge;
  if (policy == Policy::Thompson)
    bridge.emplace(env.features, config, seed);
  std::vector<double> scores(k);
  for (std::size_t t = 0; t < horizon; ++t) {
    Stream policy_rng(seed, StreamTag::Policy, t);
    std::size_t a;
    if (bridge) {
      Vector w = bridge->draw(policy_rng);
      for (std::size_t j = 0; j < k; ++j)
        scores[j] = env.features.row(static_cast<Eigen::Index>(j)).dot(w);
      a = argmax_action(scores);
    } else {
      a = uniform_arm(k, policy_rng);
    }
    Stream reward_rng(seed, StreamTag::Reward, t);
    const double r = env.pull(a, reward_rng);
    run.actions.push_back(a);
    run.rewards.push_back(r);
    if (bridge)
      bridge->observe(a, r);
    run.regret.cumulative[t + 1] = run.regret.cumulative[t] + (best - env.arm_mean(a));
  }
  if (bridge) {
    run.refreshes = bridge->refreshes();
    run.stale_draws = bridge->stale_draws();
    run.doubling_events = bridge->doubling_events();
    run.refinements = bridge->refinements();
  }
  return run;
}

} // namespace reflex
