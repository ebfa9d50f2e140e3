#include "reflex/engine.hpp"

#include "reflex/errors.hpp"
#include "reflex/parallel.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

namespace reflex {

void SamplerConfig::validate() const {
  calibration.validate();
  if (!(partition.radius_step > 0.0))
    throw PreconditionError("sampler: radius step must be positive");
  if (max_regions == 0)
    throw PreconditionError("sampler: max_regions must be positive");
  if (refinement_multiplier == 0)
    throw PreconditionError("sampler: refinement multiplier must be positive");
}

SamplerState::SamplerState(TargetDistribution t, EllipsoidalPartition p, Calibration c,
                           SamplerConfig cfg)
    : target(std::move(t)), partition(std::move(p)), calibration(std::move(c)),
      config(std::move(cfg)) {
  if (calibration.regions.size() != partition.size())
    throw PreconditionError("sampler: calibration does not match partition");
  counters.draws_per_region.assign(partition.size(), 0);
  refresh_weights();
}

void SamplerState::refresh_weights() {
  std::vector<double> lw;
  lw.reserve(calibration.regions.size());
  for (const auto& r : calibration.regions)
    lw.push_back(r.log_weight);
  calibration.weights = normalize_log_weights(lw);
  cumulative.resize(calibration.weights.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < cumulative.size(); ++i) {
    acc += calibration.weights[i];
    cumulative[i] = acc;
  }
}

SamplerState build_sampler(const TargetDistribution& target, const SamplerConfig& config,
                           int workers) {
  config.validate();
  PilotResult pilot = run_pilot(target, config.calibration);
  EllipsoidalPartition partition =
      build_default_partition(pilot.mean, pilot.covariance, config.partition);
  return build_sampler(target, std::move(partition), config, workers);
}

SamplerState build_sampler(const TargetDistribution& target, EllipsoidalPartition partition,
                           const SamplerConfig& config, int workers) {
  config.validate();
  if (partition.size() > config.max_regions)
    throw PreconditionError("sampler: initial partition exceeds max_regions");
  Calibration calib = calibrate_all(target, partition, config.calibration, workers);
  return SamplerState(target, std::move(partition), std::move(calib), config);
}

std::size_t select_from_cumulative(std::span<const double> cumulative, double u) {
  if (!(u > 0.0 && u < 1.0))
    throw PreconditionError("select_component: u must lie in (0, 1)");
  if (cumulative.empty())
    throw PreconditionError("select_component: no components");
  auto it = std::lower_bound(cumulative.begin(), cumulative.end(), u);
  if (it == cumulative.end()) {
    // Rounding left the total just under u; take the last region with mass.
    --it;
    while (it != cumulative.begin() && *it == *(it - 1))
      --it;
  }
  return static_cast<std::size_t>(it - cumulative.begin());
}

std::size_t select_component(std::span<const double> weights, double u) {
  std::vector<double> cum(weights.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (!(weights[i] >= 0.0))
      throw PreconditionError("select_component: weights must be non-negative");
    acc += weights[i];
    cum[i] = acc;
  }
  return select_from_cumulative(cum, u);
}

void double_partition(SamplerState& state, int workers) {
  const std::size_t m = state.partition.size();
  const std::size_t grown = 2 * m;
  if (grown > state.config.max_regions)
    throw TailMassError("outermost region selected at the maximum partition size (" +
                            std::to_string(m) + " regions); outer-region weight " +
                            std::to_string(state.calibration.weights.back()),
                        state.calibration.weights.back());
  ExtendedCalibration ext =
      extend_partition(state.target, state.partition, state.calibration, grown,
                       state.config.partition.radius_step, state.config.calibration, workers);
  state.partition = std::move(ext.partition);
  state.calibration = std::move(ext.calibration);
  state.counters.draws_per_region.resize(state.partition.size(), 0);
  ++state.counters.doubling_events;
  state.refresh_weights();
}

void refine_region(SamplerState& state, std::size_t region, double log_a, double log_b) {
  RegionCalibration& old = state.calibration.regions.at(region);
  std::uint32_t generation = old.generation + 1;
  std::size_t mult = 1;
  for (std::uint32_t g = 0; g < generation; ++g)
    mult *= state.config.refinement_multiplier;
  RegionCalibration fresh = calibrate_region(state.target, state.partition, region,
                                             state.config.calibration, generation, mult);
  for (double l : {log_a, log_b}) {
    if (std::isfinite(l)) {
      fresh.log_s_hat = std::min(fresh.log_s_hat, l);
      fresh.log_S_hat = std::max(fresh.log_S_hat, l);
    }
  }
  fresh.log_s_hat = std::min(fresh.log_s_hat, old.log_s_hat);
  fresh.log_S_hat = std::max(fresh.log_S_hat, old.log_S_hat);
  update_minorisation(fresh, state.config.calibration);
  old = fresh;
  ++state.counters.refinements;
  state.refresh_weights();
}

namespace {

struct Attempt {
  enum class Kind { Done, Double, Refine } kind = Kind::Done;
  IidDraw draw;
  std::size_t region = 0;
  double log_a = 0.0;
  double log_b = 0.0;
  std::string message;
};

Attempt attempt_draw(const SamplerState& state, Stream& rng) {
  Attempt out;
  const std::size_t i = select_from_cumulative(state.cumulative, rng.uniform_open());
  if (i + 1 == state.partition.size()) {
    out.kind = Attempt::Kind::Double;
    return out;
  }
  try {
    PerfectSample ps =
        perfect_sample(state.target, state.partition, state.calibration.regions[i], rng);
    out.draw.x = std::move(ps.x);
    out.draw.region = i;
    out.draw.trace = ps.trace;
  } catch (const MinorisationViolation& v) {
    out.kind = Attempt::Kind::Refine;
    out.region = v.region();
    out.log_a = v.log_current();
    out.log_b = v.log_proposal();
    out.message = v.what();
  }
  return out;
}

void commit(SamplerState& state, const IidDraw& d) {
  auto& c = state.counters;
  ++c.draws_per_region[d.region];
  ++c.draws;
  c.coalescence_sum += static_cast<double>(d.trace.coalescence_time);
  c.coalescence_max = std::max(c.coalescence_max, d.trace.coalescence_time);
  c.residual_proposals += d.trace.residual_proposals;
}

// Applies the state change an attempt asked for. Returns false when the
// draw has exhausted its refinement allowance.
void apply_change(SamplerState& state, const Attempt& a, std::size_t& refinements, int workers) {
  if (a.kind == Attempt::Kind::Double) {
    double_partition(state, workers);
    return;
  }
  if (refinements >= state.config.refinements_per_draw)
    throw MinorisationViolation(a.message + " (after " + std::to_string(refinements) +
                                    " refinement(s))",
                                a.region, a.log_a, a.log_b);
  refine_region(state, a.region, a.log_a, a.log_b);
  ++refinements;
}

} // namespace

IidDraw draw_iid(SamplerState& state, Stream& rng, int workers) {
  std::size_t refinements = 0;
  for (;;) {
    Attempt a = attempt_draw(state, rng);
    if (a.kind == Attempt::Kind::Done) {
      commit(state, a.draw);
      return std::move(a.draw);
    }
    apply_change(state, a, refinements, workers);
  }
}

namespace {

struct BatchStart {
  std::uint64_t draws, doublings, refinements, proposals;
  double coalescence_sum;
  std::vector<std::uint64_t> per_region;
};

BatchStart snapshot(const SamplerState& s) {
  return {s.counters.draws, s.counters.doubling_events, s.counters.refinements,
          s.counters.residual_proposals, s.counters.coalescence_sum,
          s.counters.draws_per_region};
}

void finish(SampleBatch& out, const SamplerState& state, const BatchStart& start,
            std::uint64_t seed, std::uint64_t batch_max,
            std::chrono::steady_clock::time_point t0) {
  auto& d = out.diagnostics;
  const auto& c = state.counters;
  d.seed = seed;
  d.draws = out.regions.size();
  d.draws_per_region = c.draws_per_region;
  for (std::size_t i = 0; i < start.per_region.size(); ++i)
    d.draws_per_region[i] -= start.per_region[i];
  const std::uint64_t n = c.draws - start.draws;
  d.coalescence_mean = n ? (c.coalescence_sum - start.coalescence_sum) / static_cast<double>(n) : 0.0;
  d.coalescence_max = batch_max;
  d.doubling_events = c.doubling_events - start.doublings;
  d.refinements = c.refinements - start.refinements;
  TvReport tv = tv_error_report(state);
  d.epsilon_proxy = tv.epsilon_proxy;
  d.tv_bound = tv.tv_bound;
  d.recalibrate_advised = tv.recalibrate_advised;
  d.expected_coalescence = tv.expected_coalescence;
  d.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

} // namespace

SampleBatch draw_iid_batch_serial(SamplerState& state, std::size_t n, std::uint64_t seed) {
  if (n == 0)
    throw PreconditionError("draw_iid_batch: n must be at least 1");
  const auto t0 = std::chrono::steady_clock::now();
  const BatchStart start = snapshot(state);
  SampleBatch out;
  out.samples.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(state.target.dim()));
  out.regions.resize(n);
  std::uint64_t batch_max = 0;
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t refinements = 0;
    for (std::uint32_t attempt = 0;; ++attempt) {
      Stream rng(seed, StreamTag::Draw, k, attempt);
      Attempt a = attempt_draw(state, rng);
      if (a.kind == Attempt::Kind::Done) {
        commit(state, a.draw);
        out.samples.row(static_cast<Eigen::Index>(k)) = a.draw.x.transpose();
        out.regions[k] = a.draw.region;
        batch_max = std::max(batch_max, a.draw.trace.coalescence_time);
        break;
      }
      apply_change(state, a, refinements, 1);
    }
  }
  finish(out, state, start, seed, batch_max, t0);
  return out;
}

SampleBatch draw_iid_batch(SamplerState& state, std::size_t n, std::uint64_t seed, int workers) {
  if (n == 0)
    throw PreconditionError("draw_iid_batch: n must be at least 1");
  constexpr std::size_t kChunk = 2048;
  const auto t0 = std::chrono::steady_clock::now();
  const BatchStart start = snapshot(state);
  SampleBatch out;
  out.samples.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(state.target.dim()));
  out.regions.resize(n);
  std::vector<std::uint32_t> attempts(n, 0);
  std::vector<std::size_t> refinements(n, 0);
  std::vector<Attempt> results(kChunk);
  std::uint64_t batch_max = 0;

  std::size_t next = 0;
  while (next < n) {
    const std::size_t end = std::min(n, next + kChunk);
    // Speculative pass against the current (immutable) state snapshot.
    const SamplerState& snap = state;
    parallel_for(end - next, workers, [&](std::size_t j) {
      const std::size_t k = next + j;
      Stream rng(seed, StreamTag::Draw, k, attempts[k]);
      results[j] = attempt_draw(snap, rng);
    });
    // Commit in draw order up to the first draw that needs a state change.
    std::size_t k = next;
    for (; k < end; ++k) {
      Attempt& a = results[k - next];
      if (a.kind != Attempt::Kind::Done)
        break;
      commit(state, a.draw);
      out.samples.row(static_cast<Eigen::Index>(k)) = a.draw.x.transpose();
      out.regions[k] = a.draw.region;
      batch_max = std::max(batch_max, a.draw.trace.coalescence_time);
    }
    if (k < end) {
      apply_change(state, results[k - next], refinements[k], workers);
      ++attempts[k];
    }
    next = k;
  }
  finish(out, state, start, seed, batch_max, t0);
  return out;
}

TvReport tv_error_report(const SamplerState& state) {
  TvReport r;
  for (const auto& rc : state.calibration.regions) {
    if (rc.zero_weight())
      continue;
    r.max_rel_se = std::max(r.max_rel_se, rc.weight_rel_se);
    if (rc.p_hat > 0.0)
      r.expected_coalescence += state.calibration.weights[rc.region] / rc.p_hat;
  }
  r.epsilon_proxy = 3.0 * r.max_rel_se;
  r.tv_bound = 0.5 * r.epsilon_proxy;
  r.recalibrate_advised = r.max_rel_se > state.config.calibration.target_rel_se;
  return r;
}

} // namespace reflex
