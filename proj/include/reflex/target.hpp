#pragma once

// Target distributions: an unnormalised log-density on R^d.

#include "reflex/linalg.hpp"

#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <variant>
#include <vector>

namespace reflex {

inline constexpr double kOutOfSupport = -std::numeric_limits<double>::infinity();

/// An unnormalised density π̃ on R^d, evaluated in log space.
///
/// Out-of-support points return kOutOfSupport. The evaluator must be pure
/// and callable concurrently from many threads.
class TargetDistribution {
public:
  using LogDensity = std::function<double(const Vector&)>;

  TargetDistribution(std::size_t dim, LogDensity log_density, std::string label);

  std::size_t dim() const noexcept { return dim_; }
  const std::string& label() const noexcept { return label_; }
  double log_density(const Vector& x) const { return (*log_density_)(x); }

private:
  std::size_t dim_;
  std::shared_ptr<const LogDensity> log_density_;
  std::string label_;
};

struct NormalSpec {
  Vector mean;
  Matrix cov;
};

struct StudentTSpec {
  double dof;
  Vector location;
  Matrix scale;
};

struct CauchySpec {
  Vector location;
  Matrix scale;
};

struct MixtureSpec {
  std::vector<double> weights;
  std::vector<NormalSpec> components;
};

/// Posterior of logistic-regression weights under an isotropic Gaussian prior.
/// Row r of `design` was observed `trials[r]` times with `responses[r]`
/// successes; an empty `trials` means one Bernoulli trial per row.
struct LogisticPosteriorSpec {
  Matrix design;
  std::vector<double> responses;
  std::vector<double> trials;
  Vector prior_mean;
  double prior_variance = 1.0;
};

using BuiltinTargetSpec =
    std::variant<NormalSpec, StudentTSpec, CauchySpec, MixtureSpec, LogisticPosteriorSpec>;

std::size_t spec_dim(const BuiltinTargetSpec& spec);

/// Validates `spec` and returns a target whose log-density equals the named
/// family's log-density up to an additive constant.
TargetDistribution make_builtin(const BuiltinTargetSpec& spec);

/// Exact marginal CDF of coordinate `coordinate`. Throws PreconditionError
/// for the logistic posterior, which has no closed-form marginal.
double analytic_marginal_cdf(const BuiltinTargetSpec& spec, std::size_t coordinate,
                             double value);

// Convenience constructors.
NormalSpec standard_normal(std::size_t dim);
CauchySpec standard_cauchy(std::size_t dim);
StudentTSpec standard_student_t(std::size_t dim, double dof);

} // namespace reflex
