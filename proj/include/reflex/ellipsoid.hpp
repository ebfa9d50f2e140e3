#pragma once

// Nested ellipsoidal partition of R^d:
//   A_i = { θ : c_{i-1} ≤ (θ-μ)ᵀ Σ⁻¹ (θ-μ) ≤ c_i },  Σ = B Bᵀ,  0 = c_0 < c_1 < ...
// Regions are indexed from 0 here (region 0 is the central ellipsoid).

#include "reflex/linalg.hpp"
#include "reflex/rng.hpp"

#include <cstddef>
#include <optional>
#include <vector>

namespace reflex {

struct PartitionConfig {
  double radius_step = 1.0;           // r₀: √c_i = (i+1)·r₀
  std::optional<std::size_t> regions; // initial M; default from the χ² rule
  std::size_t min_regions = 8;
  double tail_probability = 1e-6;     // c_M ≥ χ²_d quantile at 1 - this
};

class EllipsoidalPartition {
public:
  /// `radii_sq` lists c_1..c_M (c_0 = 0 is implicit).
  EllipsoidalPartition(Vector center, Matrix scale_lower, std::vector<double> radii_sq);

  std::size_t dim() const noexcept { return static_cast<std::size_t>(center_.size()); }
  std::size_t size() const noexcept { return radii_sq_.size(); }
  const Vector& center() const noexcept { return center_; }
  const Matrix& scale() const noexcept { return scale_; }
  const std::vector<double>& radii_sq() const noexcept { return radii_sq_; }
  double inner_radius_sq(std::size_t i) const { return i == 0 ? 0.0 : radii_sq_.at(i - 1); }
  double outer_radius_sq(std::size_t i) const { return radii_sq_.at(i); }
  double log_det_scale() const noexcept { return log_det_; }

  double mahalanobis_sq(const Vector& point) const;

  /// Smallest i with mahalanobis_sq ≤ c_i; nullopt past the outermost radius.
  std::optional<std::size_t> region_index(const Vector& point) const;

  double lebesgue_measure(std::size_t i) const;
  double log_lebesgue_measure(std::size_t i) const;

  /// Uniform draw on A_i written into `out` (resized if needed).
  void sample_uniform_region(std::size_t i, Stream& rng, Vector& out) const;
  Vector sample_uniform_region(std::size_t i, Stream& rng) const;

  /// Copy with radii √c_i = (i+1)·step extended to `new_size` regions.
  /// Existing radii are kept; a no-op when new_size ≤ size().
  EllipsoidalPartition extended(std::size_t new_size, double step) const;

private:
  Vector center_;
  Matrix scale_;
  std::vector<double> radii_sq_;
  double log_det_;
};

/// Equal Mahalanobis-radius spacing around a pilot mean and covariance.
EllipsoidalPartition build_default_partition(const Vector& pilot_mean, const Matrix& pilot_cov,
                                             const PartitionConfig& cfg = {});

/// Number of regions the default rule picks for dimension d.
std::size_t default_region_count(std::size_t dim, const PartitionConfig& cfg);

} // namespace reflex
