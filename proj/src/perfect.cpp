#include "reflex/perfect.hpp"

#include "reflex/errors.hpp"

#include <cmath>
#include <limits>

namespace reflex {

namespace {

constexpr double kAcceptanceSlack = 1e-12;

ChainPoint propose(const TargetDistribution& target, const EllipsoidalPartition& partition,
                   std::size_t region, Stream& rng) {
  ChainPoint p;
  partition.sample_uniform_region(region, rng, p.x);
  p.log_density = target.log_density(p.x);
  if (std::isnan(p.log_density))
    throw NumericalError("target '" + target.label() + "' returned NaN inside region " +
                         std::to_string(region));
  return p;
}

// min(1, π̃(y)/π̃(x)); 0 when y is out of support.
double mh_ratio(double log_current, double log_proposal) {
  if (log_proposal == kOutOfSupport)
    return 0.0;
  double diff = log_proposal - log_current;
  return diff >= 0.0 ? 1.0 : std::exp(diff);
}

} // namespace

ChainPoint mh_uniform_step(const TargetDistribution& target,
                           const EllipsoidalPartition& partition, std::size_t region,
                           const ChainPoint& state, Stream& rng) {
  ChainPoint prop = propose(target, partition, region, rng);
  double a = mh_ratio(state.log_density, prop.log_density);
  if (a >= 1.0 || rng.uniform() < a)
    return prop;
  return state;
}

ChainPoint residual_step(const TargetDistribution& target, const EllipsoidalPartition& partition,
                         const RegionCalibration& calib, const ChainPoint& state, Stream& rng,
                         std::uint64_t* proposals) {
  const double p = calib.p_hat;
  for (;;) {
    ChainPoint prop = propose(target, partition, calib.region, rng);
    if (proposals)
      ++*proposals;
    const double a = mh_ratio(state.log_density, prop.log_density);
    // MH rejection: the stay-move atom belongs wholly to the residual.
    if (!(a >= 1.0 || rng.uniform() < a))
      return state;
    const double keep = 1.0 - p / a;
    if (keep < -kAcceptanceSlack)
      throw MinorisationViolation("residual acceptance probability " + std::to_string(keep) +
                                      " < 0 in region " + std::to_string(calib.region) +
                                      ": sampled density extremes are too narrow",
                                  calib.region, state.log_density, prop.log_density);
    if (keep > 0.0 && rng.uniform() < keep)
      return prop;
  }
}

std::uint64_t draw_coalescence_time(double p_hat, Stream& rng) {
  if (!(p_hat > 0.0 && p_hat < 1.0))
    throw PreconditionError("coalescence time needs p in (0, 1)");
  const double u = rng.uniform_open();
  const double k = std::floor(std::log(u) / std::log1p(-p_hat));
  if (!(k < 9.0e18))
    throw NumericalError("coalescence time overflow (p̂ = " + std::to_string(p_hat) + ")");
  return 1 + static_cast<std::uint64_t>(k);
}

PerfectSample perfect_sample(const TargetDistribution& target,
                             const EllipsoidalPartition& partition,
                             const RegionCalibration& calib, Stream& rng) {
  if (calib.zero_weight())
    throw PreconditionError("perfect_sample: region " + std::to_string(calib.region) +
                            " has zero weight");
  if (calib.degenerate())
    throw DegenerateRegion("region " + std::to_string(calib.region) +
                           " has zero minorisation constant (density vanishes inside it)");
  PerfectSample out;
  out.trace.coalescence_time = draw_coalescence_time(calib.p_hat, rng);
  ChainPoint state = propose(target, partition, calib.region, rng);
  // The regeneration draw must lie in the support for the chain to start.
  while (state.log_density == kOutOfSupport)
    state = propose(target, partition, calib.region, rng);
  for (std::uint64_t t = 1; t < out.trace.coalescence_time; ++t) {
    state = residual_step(target, partition, calib, state, rng, &out.trace.residual_proposals);
    ++out.trace.residual_transitions;
  }
  out.x = std::move(state.x);
  return out;
}

} // namespace reflex
