#pragma once

// Perfect sampling from one restricted component π_i on A_i.
//
// The Metropolis-Hastings kernel P with independence uniform proposal on A_i
// satisfies P ≥ p̂ Q with Q uniform on A_i. Writing P = p̂ Q + (1 - p̂) R,
// the stationary law is  π_i = Σ_{k≥0} p̂ (1-p̂)^k Q R^k,  so a draw is: a
// geometric coalescence time T on {1, 2, ...}, a uniform regeneration, then
// T - 1 residual transitions.

#include "reflex/calibration.hpp"
#include "reflex/ellipsoid.hpp"
#include "reflex/rng.hpp"
#include "reflex/target.hpp"

#include <cstdint>

namespace reflex {

struct ChainPoint {
  Vector x;
  double log_density = kOutOfSupport;
};

struct ComponentSampleTrace {
  std::uint64_t coalescence_time = 0;     // T
  std::uint64_t residual_transitions = 0; // always T - 1
  std::uint64_t residual_proposals = 0;   // MH proposals across all residual transitions
};

/// One independence-uniform MH step restricted to A_i.
ChainPoint mh_uniform_step(const TargetDistribution& target,
                           const EllipsoidalPartition& partition, std::size_t region,
                           const ChainPoint& state, Stream& rng);

/// One draw from the residual kernel R_i(state, ·) by rejection from P_i.
/// Throws MinorisationViolation when the acceptance probability drops below
/// zero, i.e. the observed density ratio undercuts p̂. `proposals`, when
/// given, is incremented by the number of MH proposals consumed.
ChainPoint residual_step(const TargetDistribution& target, const EllipsoidalPartition& partition,
                         const RegionCalibration& calib, const ChainPoint& state, Stream& rng,
                         std::uint64_t* proposals = nullptr);

/// Coalescence time T ~ Geometric(p) on {1, 2, ...} by inversion.
std::uint64_t draw_coalescence_time(double p_hat, Stream& rng);

struct PerfectSample {
  Vector x;
  ComponentSampleTrace trace;
};

PerfectSample perfect_sample(const TargetDistribution& target,
                             const EllipsoidalPartition& partition,
                             const RegionCalibration& calib, Stream& rng);

} // namespace reflex
