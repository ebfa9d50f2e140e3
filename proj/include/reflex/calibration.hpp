#pragma once

// Pilot estimation of the partition centre/shape and per-region Monte Carlo
// calibration of mixing weights and minorisation constants.

#include "reflex/ellipsoid.hpp"
#include "reflex/target.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace reflex {

struct CalibrationConfig {
  std::size_t n_min = 100'000;
  std::size_t n_max = 1'000'000;
  double target_rel_se = 0.01;
  double eta = 1e-5;
  double p_floor = 1e-4;
  std::size_t pilot_iters = 10'000;
  std::size_t pilot_burnin = 2'000;
  std::optional<Vector> pilot_start;
  std::uint64_t seed = 0;

  void validate() const;
};

struct RegionCalibration {
  std::size_t region = 0;
  double log_mean_density = kOutOfSupport; // log of the MC mean of π̃ over A_i
  double log_weight = kOutOfSupport;       // log L(A_i) + log_mean_density
  double weight_rel_se = 0.0;
  double log_s_hat = kOutOfSupport;        // min sampled log π̃
  double log_S_hat = kOutOfSupport;        // max sampled log π̃
  double p_hat = 0.0;
  std::size_t n_samples = 0;
  std::uint32_t generation = 0;            // number of refinements applied
  bool low_p_warning = false;              // p̂ under the configured floor

  bool zero_weight() const noexcept { return log_weight == kOutOfSupport; }
  /// Region has mass but its sampled density reached zero: no usable
  /// minorisation constant.
  bool degenerate() const noexcept { return !zero_weight() && !(p_hat > 0.0); }
};

/// Recompute p̂ from the stored extremes.
void update_minorisation(RegionCalibration& rc, const CalibrationConfig& cfg);

struct Calibration {
  std::vector<RegionCalibration> regions;
  std::vector<double> weights; // normalised, sum to 1
};

struct PilotResult {
  Vector mean;
  Matrix covariance;
  double acceptance_rate = 0.0;
};

/// Adaptive random-walk Metropolis pilot tuned toward 23.4% acceptance.
PilotResult run_pilot(const TargetDistribution& target, const CalibrationConfig& cfg);

RegionCalibration calibrate_region(const TargetDistribution& target,
                                   const EllipsoidalPartition& partition, std::size_t region,
                                   const CalibrationConfig& cfg, std::uint32_t generation = 0,
                                   std::size_t sample_multiplier = 1);

/// Normalised weights from log weights (log-sum-exp). Throws
/// TargetUnreachable if every weight is zero.
std::vector<double> normalize_log_weights(const std::vector<double>& log_weights);

/// All regions, one OpenMP task each. Bit-identical to calibrate_all_serial.
Calibration calibrate_all(const TargetDistribution& target, const EllipsoidalPartition& partition,
                          const CalibrationConfig& cfg, int workers);

/// Serial reference for calibrate_all.
Calibration calibrate_all_serial(const TargetDistribution& target,
                                 const EllipsoidalPartition& partition,
                                 const CalibrationConfig& cfg);

struct ExtendedCalibration {
  EllipsoidalPartition partition;
  Calibration calibration;
};

/// Grows the partition to `new_size` regions with the same spacing,
/// calibrating only the new regions.
ExtendedCalibration extend_partition(const TargetDistribution& target,
                                     const EllipsoidalPartition& partition,
                                     const Calibration& calibration, std::size_t new_size,
                                     double radius_step, const CalibrationConfig& cfg,
                                     int workers);

} // namespace reflex
