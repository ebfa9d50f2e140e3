#include "reflex/ellipsoid.hpp"

#include "reflex/errors.hpp"

#include <boost/math/distributions/chi_squared.hpp>

#include <cmath>
#include <numbers>

namespace reflex {

EllipsoidalPartition::EllipsoidalPartition(Vector center, Matrix scale_lower,
                                           std::vector<double> radii_sq)
    : center_(std::move(center)), scale_(std::move(scale_lower)),
      radii_sq_(std::move(radii_sq)) {
  if (center_.size() == 0)
    throw PreconditionError("partition: empty center");
  if (scale_.rows() != center_.size() || scale_.cols() != center_.size())
    throw PreconditionError("partition: scale factor dimension mismatch");
  if (radii_sq_.empty())
    throw PreconditionError("partition: need at least one region");
  double prev = 0.0;
  for (double c : radii_sq_) {
    if (!(c > prev) || !std::isfinite(c))
      throw PreconditionError("partition: radii must be finite and strictly increasing from 0");
    prev = c;
  }
  for (Eigen::Index i = 0; i < scale_.rows(); ++i) {
    if (!(scale_(i, i) > 0.0))
      throw NotSpdError("partition: scale factor needs a positive diagonal");
    for (Eigen::Index j = i + 1; j < scale_.cols(); ++j)
      if (scale_(i, j) != 0.0)
        throw PreconditionError("partition: scale factor must be lower triangular");
  }
  log_det_ = scale_.diagonal().array().log().sum();
}

double EllipsoidalPartition::mahalanobis_sq(const Vector& point) const {
  return lower_solve_norm_sq(scale_, point, center_);
}

std::optional<std::size_t> EllipsoidalPartition::region_index(const Vector& point) const {
  double m = mahalanobis_sq(point);
  auto it = std::lower_bound(radii_sq_.begin(), radii_sq_.end(), m);
  if (it == radii_sq_.end())
    return std::nullopt;
  return static_cast<std::size_t>(it - radii_sq_.begin());
}

double EllipsoidalPartition::log_lebesgue_measure(std::size_t i) const {
  if (i >= size())
    throw PreconditionError("partition: region index out of range");
  const double half_d = 0.5 * static_cast<double>(dim());
  const double log_unit_ball = half_d * std::log(std::numbers::pi) - std::lgamma(half_d + 1.0);
  const double outer = radii_sq_[i];
  const double inner = inner_radius_sq(i);
  // c_i^{d/2} - c_{i-1}^{d/2} = c_i^{d/2} (1 - (c_{i-1}/c_i)^{d/2})
  double shell = half_d * std::log(outer);
  if (inner > 0.0)
    shell += std::log1p(-std::pow(inner / outer, half_d));
  return log_det_ + log_unit_ball + shell;
}

double EllipsoidalPartition::lebesgue_measure(std::size_t i) const {
  return std::exp(log_lebesgue_measure(i));
}

void EllipsoidalPartition::sample_uniform_region(std::size_t i, Stream& rng, Vector& out) const {
  if (i >= size())
    throw PreconditionError("partition: region index out of range");
  const auto d = center_.size();
  const double dd = static_cast<double>(d);
  out.resize(d);
  double norm_sq = 0.0;
  do {
    norm_sq = 0.0;
    for (Eigen::Index k = 0; k < d; ++k) {
      out[k] = rng.normal();
      norm_sq += out[k] * out[k];
    }
  } while (norm_sq == 0.0);
  // r^d uniform on [c_{i-1}^{d/2}, c_i^{d/2}], expressed relative to c_i^{d/2}.
  const double outer = radii_sq_[i];
  const double inner = inner_radius_sq(i);
  const double lo = inner > 0.0 ? std::pow(inner / outer, 0.5 * dd) : 0.0;
  const double u = rng.uniform_open();
  const double radius = std::sqrt(outer) * std::pow(lo + u * (1.0 - lo), 1.0 / dd);
  out *= radius / std::sqrt(norm_sq);
  // θ = μ + B y with B lower triangular; in place from the last row up.
  for (Eigen::Index r = d - 1; r >= 0; --r) {
    double acc = 0.0;
    for (Eigen::Index c = 0; c <= r; ++c)
      acc += scale_(r, c) * out[c];
    out[r] = center_[r] + acc;
  }
}

Vector EllipsoidalPartition::sample_uniform_region(std::size_t i, Stream& rng) const {
  Vector out;
  sample_uniform_region(i, rng, out);
  return out;
}

EllipsoidalPartition EllipsoidalPartition::extended(std::size_t new_size, double step) const {
  if (!(step > 0.0))
    throw PreconditionError("partition: radius step must be positive");
  std::vector<double> radii = radii_sq_;
  for (std::size_t i = radii.size(); i < new_size; ++i) {
    double r = static_cast<double>(i + 1) * step;
    double c = r * r;
    if (!(c > radii.back()))
      throw PreconditionError("partition: extension radius not beyond current outer radius");
    radii.push_back(c);
  }
  return EllipsoidalPartition(center_, scale_, std::move(radii));
}

std::size_t default_region_count(std::size_t dim, const PartitionConfig& cfg) {
  if (cfg.regions)
    return *cfg.regions;
  boost::math::chi_squared_distribution<double> chi2(static_cast<double>(dim));
  double q = boost::math::quantile(boost::math::complement(chi2, cfg.tail_probability));
  auto m = static_cast<std::size_t>(std::ceil(std::sqrt(q) / cfg.radius_step));
  return std::max(m, cfg.min_regions);
}

EllipsoidalPartition build_default_partition(const Vector& pilot_mean, const Matrix& pilot_cov,
                                             const PartitionConfig& cfg) {
  if (pilot_cov.rows() != pilot_mean.size())
    throw PreconditionError("partition: pilot covariance dimension mismatch");
  if (!(cfg.radius_step > 0.0))
    throw PreconditionError("partition: radius step must be positive");
  Matrix lower = cholesky_lower(pilot_cov, "pilot covariance");
  const std::size_t m = default_region_count(static_cast<std::size_t>(pilot_mean.size()), cfg);
  if (m == 0)
    throw PreconditionError("partition: need at least one region");
  std::vector<double> radii;
  radii.reserve(m);
  for (std::size_t i = 0; i < m; ++i) {
    double r = static_cast<double>(i + 1) * cfg.radius_step;
    radii.push_back(r * r);
  }
  return EllipsoidalPartition(pilot_mean, std::move(lower), std::move(radii));
}

} // namespace reflex
