#pragma once

// IID sampling from a target through its ellipsoidal mixture representation.
//
// Draws select a region by the calibrated weights and return a perfect
// sample from the selected component. Selecting the outermost region doubles
// the partition; a minorisation violation refines the offending region.
// Both mutate the sampler state, and both restart the in-flight draw.

#include "reflex/calibration.hpp"
#include "reflex/ellipsoid.hpp"
#include "reflex/perfect.hpp"
#include "reflex/rng.hpp"
#include "reflex/target.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace reflex {

struct SamplerConfig {
  PartitionConfig partition;
  CalibrationConfig calibration;
  std::size_t max_regions = 1024;
  std::size_t refinements_per_draw = 1;
  std::size_t refinement_multiplier = 4;

  void validate() const;
};

struct SamplerCounters {
  std::vector<std::uint64_t> draws_per_region;
  std::uint64_t draws = 0;
  std::uint64_t doubling_events = 0;
  std::uint64_t refinements = 0;
  double coalescence_sum = 0.0;
  std::uint64_t coalescence_max = 0;
  std::uint64_t residual_proposals = 0;

  double coalescence_mean() const {
    return draws ? coalescence_sum / static_cast<double>(draws) : 0.0;
  }
};

struct SamplerState {
  SamplerState(TargetDistribution target, EllipsoidalPartition partition,
               Calibration calibration, SamplerConfig config);

  TargetDistribution target;
  EllipsoidalPartition partition;
  Calibration calibration;
  SamplerConfig config;
  SamplerCounters counters;
  std::vector<double> cumulative; // running sums of calibration.weights

  std::size_t regions() const noexcept { return partition.size(); }
  void refresh_weights();
};

/// Pilot run, default partition, calibration of every region.
SamplerState build_sampler(const TargetDistribution& target, const SamplerConfig& config,
                           int workers);

/// Calibrates a caller-supplied partition (no pilot).
SamplerState build_sampler(const TargetDistribution& target, EllipsoidalPartition partition,
                           const SamplerConfig& config, int workers);

/// Smallest i with cum_{i-1} < u ≤ cum_i over normalised weights.
std::size_t select_component(std::span<const double> weights, double u);

/// Same rule on precomputed cumulative sums.
std::size_t select_from_cumulative(std::span<const double> cumulative, double u);

/// Doubles the partition (M → 2M), calibrating only the new regions.
void double_partition(SamplerState& state, int workers);

/// Re-calibrates `region` with more samples and widens its density extremes
/// to cover the two observed log-densities.
void refine_region(SamplerState& state, std::size_t region, double log_a, double log_b);

struct IidDraw {
  Vector x;
  std::size_t region = 0;
  ComponentSampleTrace trace;
};

/// One iid draw; may double or refine the state. Random numbers come from `rng`.
IidDraw draw_iid(SamplerState& state, Stream& rng, int workers = 1);

struct BatchDiagnostics {
  std::uint64_t seed = 0;
  std::size_t draws = 0;
  std::vector<std::uint64_t> draws_per_region;
  double coalescence_mean = 0.0;
  std::uint64_t coalescence_max = 0;
  std::uint64_t doubling_events = 0;
  std::uint64_t refinements = 0;
  double epsilon_proxy = 0.0;
  double tv_bound = 0.0;
  bool recalibrate_advised = false;
  double expected_coalescence = 0.0;
  double wall_seconds = 0.0;
};

struct SampleBatch {
  RowMatrix samples; // n × d, row k is draw k
  std::vector<std::size_t> regions;
  BatchDiagnostics diagnostics;
};

/// n draws, draw k using streams keyed by (seed, k, attempt). OpenMP
/// parallel; bit-identical to draw_iid_batch_serial for any worker count.
SampleBatch draw_iid_batch(SamplerState& state, std::size_t n, std::uint64_t seed, int workers);

/// Serial reference: draws 0..n-1 in order, applying state changes inline.
SampleBatch draw_iid_batch_serial(SamplerState& state, std::size_t n, std::uint64_t seed);

struct TvReport {
  double max_rel_se = 0.0;
  double epsilon_proxy = 0.0; // 3 · max relative SE of non-zero weights
  double tv_bound = 0.0;      // epsilon_proxy / 2
  bool recalibrate_advised = false;
  double expected_coalescence = 0.0; // Σ w_i / p̂_i over usable regions
};

TvReport tv_error_report(const SamplerState& state);

} // namespace reflex
