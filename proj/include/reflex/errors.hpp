#pragma once

#include <stdexcept>
#include <string>

namespace reflex {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// A matrix that must be symmetric positive definite is not.
class NotSpdError : public Error {
public:
  using Error::Error;
};

/// Caller violated a documented precondition (bad index, bad probability, ...).
class PreconditionError : public Error {
public:
  using Error::Error;
};

/// Observation outside the support of a likelihood family.
class DomainError : public Error {
public:
  using Error::Error;
};

/// The target returned NaN, or a numerical routine broke down.
class NumericalError : public Error {
public:
  using Error::Error;
};

/// Adaptive pilot chain never moved.
class PilotFailure : public Error {
public:
  using Error::Error;
};

/// Every region of the partition carries zero estimated mass.
class TargetUnreachable : public Error {
public:
  using Error::Error;
};

/// Partition doubling exceeded the configured maximum number of regions.
class TailMassError : public Error {
public:
  TailMassError(const std::string& msg, double outer_weight)
      : Error(msg), outer_weight_(outer_weight) {}
  double outer_weight() const noexcept { return outer_weight_; }

private:
  double outer_weight_;
};

/// A residual-kernel acceptance probability fell below zero: the sampled
/// density extremes of a region were narrower than the true ones.
class MinorisationViolation : public Error {
public:
  MinorisationViolation(const std::string& msg, std::size_t region,
                        double log_current, double log_proposal)
      : Error(msg), region_(region), log_current_(log_current),
        log_proposal_(log_proposal) {}
  std::size_t region() const noexcept { return region_; }
  double log_current() const noexcept { return log_current_; }
  double log_proposal() const noexcept { return log_proposal_; }

private:
  std::size_t region_;
  double log_current_;
  double log_proposal_;
};

/// The selected region has zero minorisation constant (partial support).
class DegenerateRegion : public Error {
public:
  using Error::Error;
};

/// Particle weights all vanished.
class DegeneracyError : public Error {
public:
  using Error::Error;
};

/// Innovation covariance could not be factorised.
class SingularInnovation : public Error {
public:
  using Error::Error;
};

/// Memory budget for a sieve was exceeded.
class BudgetError : public Error {
public:
  using Error::Error;
};

} // namespace reflex
