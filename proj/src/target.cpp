#include "reflex/target.hpp"

#include "reflex/errors.hpp"

#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>

#include <cmath>
#include <numbers>
#include <numeric>

namespace reflex {

TargetDistribution::TargetDistribution(std::size_t dim, LogDensity log_density,
                                       std::string label)
    : dim_(dim), log_density_(std::make_shared<const LogDensity>(std::move(log_density))),
      label_(std::move(label)) {
  if (dim_ == 0)
    throw PreconditionError("target dimension must be at least 1");
  if (!*log_density_)
    throw PreconditionError("target log-density is empty");
}

namespace {

constexpr double kLogTwoPi = 1.8378770664093454836;

double log_det_lower(const Matrix& lower) {
  return lower.diagonal().array().log().sum();
}

void check_dim(const Vector& v, const Matrix& m, const std::string& what) {
  if (v.size() == 0)
    throw PreconditionError(what + ": empty location vector");
  if (m.rows() != v.size() || m.cols() != v.size())
    throw PreconditionError(what + ": matrix dimension does not match location");
}

double log1pexp(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

struct NormalKernel {
  Vector mean;
  Matrix lower;
  double log_norm;

  NormalKernel(const NormalSpec& s, const std::string& what)
      : mean(s.mean), lower(cholesky_lower(s.cov, what.c_str())) {
    log_norm = -0.5 * static_cast<double>(mean.size()) * kLogTwoPi - log_det_lower(lower);
  }
  double operator()(const Vector& x) const {
    return log_norm - 0.5 * lower_solve_norm_sq(lower, x, mean);
  }
};

struct StudentKernel {
  Vector location;
  Matrix lower;
  double dof;
  double log_norm;

  StudentKernel(double nu, const Vector& loc, const Matrix& scale, const std::string& what)
      : location(loc), lower(cholesky_lower(scale, what.c_str())), dof(nu) {
    if (!(nu > 0.0) || !std::isfinite(nu))
      throw PreconditionError(what + ": degrees of freedom must be positive");
    double d = static_cast<double>(loc.size());
    log_norm = std::lgamma(0.5 * (nu + d)) - std::lgamma(0.5 * nu) -
               0.5 * d * std::log(nu * std::numbers::pi) - log_det_lower(lower);
  }
  double operator()(const Vector& x) const {
    double d = static_cast<double>(location.size());
    double q = lower_solve_norm_sq(lower, x, location);
    return log_norm - 0.5 * (dof + d) * std::log1p(q / dof);
  }
};

TargetDistribution make(const NormalSpec& s) {
  check_dim(s.mean, s.cov, "normal");
  NormalKernel k(s, "normal covariance");
  return TargetDistribution(static_cast<std::size_t>(s.mean.size()), k, "normal");
}

TargetDistribution make(const StudentTSpec& s) {
  check_dim(s.location, s.scale, "student-t");
  StudentKernel k(s.dof, s.location, s.scale, "student-t scale");
  return TargetDistribution(static_cast<std::size_t>(s.location.size()), k, "student-t");
}

TargetDistribution make(const CauchySpec& s) {
  check_dim(s.location, s.scale, "cauchy");
  StudentKernel k(1.0, s.location, s.scale, "cauchy scale");
  return TargetDistribution(static_cast<std::size_t>(s.location.size()), k, "cauchy");
}

TargetDistribution make(const MixtureSpec& s) {
  if (s.components.empty() || s.components.size() != s.weights.size())
    throw PreconditionError("mixture: weights and components must be non-empty and equal in number");
  double total = 0.0;
  for (double w : s.weights) {
    if (!(w > 0.0))
      throw PreconditionError("mixture: weights must be strictly positive");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-12)
    throw PreconditionError("mixture: weights must sum to 1");
  std::vector<NormalKernel> kernels;
  std::vector<double> log_w;
  const auto dim = s.components.front().mean.size();
  for (std::size_t k = 0; k < s.components.size(); ++k) {
    const auto what = "mixture component " + std::to_string(k) + " covariance";
    check_dim(s.components[k].mean, s.components[k].cov, what);
    if (s.components[k].mean.size() != dim)
      throw PreconditionError("mixture: components differ in dimension");
    kernels.emplace_back(s.components[k], what);
    log_w.push_back(std::log(s.weights[k]));
  }
  auto f = [kernels = std::move(kernels), log_w = std::move(log_w)](const Vector& x) {
    double best = kOutOfSupport;
    std::array<double, 16> small{};
    std::vector<double> big;
    double* terms = small.data();
    if (kernels.size() > small.size()) {
      big.resize(kernels.size());
      terms = big.data();
    }
    for (std::size_t k = 0; k < kernels.size(); ++k) {
      terms[k] = log_w[k] + kernels[k](x);
      best = std::max(best, terms[k]);
    }
    double acc = 0.0;
    for (std::size_t k = 0; k < kernels.size(); ++k)
      acc += std::exp(terms[k] - best);
    return best + std::log(acc);
  };
  return TargetDistribution(static_cast<std::size_t>(dim), std::move(f), "normal-mixture");
}

TargetDistribution make(const LogisticPosteriorSpec& s) {
  const auto n = static_cast<std::size_t>(s.design.rows());
  const auto d = s.design.cols();
  if (d == 0)
    throw PreconditionError("logistic: design matrix has no columns");
  if (s.responses.size() != n)
    throw PreconditionError("logistic: response count does not match design rows");
  if (!s.trials.empty() && s.trials.size() != n)
    throw PreconditionError("logistic: trial count does not match design rows");
  if (s.prior_mean.size() != d)
    throw PreconditionError("logistic: prior mean dimension does not match design");
  if (!(s.prior_variance > 0.0))
    throw PreconditionError("logistic: prior variance must be positive");
  std::vector<double> trials = s.trials.empty() ? std::vector<double>(n, 1.0) : s.trials;
  for (std::size_t r = 0; r < n; ++r) {
    if (!(trials[r] >= 0.0) || !(s.responses[r] >= 0.0) || s.responses[r] > trials[r])
      throw DomainError("logistic: responses must lie in [0, trials] (row " +
                        std::to_string(r) + ")");
  }
  Matrix design = s.design;
  Vector prior_mean = s.prior_mean;
  double inv_var = 1.0 / s.prior_variance;
  auto f = [design, y = s.responses, trials, prior_mean, inv_var](const Vector& w) {
    double acc = -0.5 * inv_var * (w - prior_mean).squaredNorm();
    for (Eigen::Index r = 0; r < design.rows(); ++r) {
      double eta = design.row(r).dot(w);
      acc += y[static_cast<std::size_t>(r)] * eta -
             trials[static_cast<std::size_t>(r)] * log1pexp(eta);
    }
    return acc;
  };
  return TargetDistribution(static_cast<std::size_t>(d), std::move(f), "logistic-posterior");
}

double normal_marginal(const Vector& mean, const Matrix& cov, std::size_t k, double v) {
  boost::math::normal_distribution<double> nd(mean[static_cast<Eigen::Index>(k)],
                                              std::sqrt(cov(static_cast<Eigen::Index>(k),
                                                            static_cast<Eigen::Index>(k))));
  return boost::math::cdf(nd, v);
}

double t_marginal(double dof, const Vector& loc, const Matrix& scale, std::size_t k, double v) {
  const auto i = static_cast<Eigen::Index>(k);
  double z = (v - loc[i]) / std::sqrt(scale(i, i));
  if (dof == 1.0)
    return 0.5 + std::atan(z) / std::numbers::pi;
  return boost::math::cdf(boost::math::students_t_distribution<double>(dof), z);
}

} // namespace

std::size_t spec_dim(const BuiltinTargetSpec& spec) {
  return std::visit(
      [](const auto& s) -> std::size_t {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, NormalSpec>)
          return static_cast<std::size_t>(s.mean.size());
        else if constexpr (std::is_same_v<S, MixtureSpec>)
          return s.components.empty() ? 0 : static_cast<std::size_t>(s.components[0].mean.size());
        else if constexpr (std::is_same_v<S, LogisticPosteriorSpec>)
          return static_cast<std::size_t>(s.design.cols());
        else
          return static_cast<std::size_t>(s.location.size());
      },
      spec);
}

TargetDistribution make_builtin(const BuiltinTargetSpec& spec) {
  return std::visit([](const auto& s) { return make(s); }, spec);
}

double analytic_marginal_cdf(const BuiltinTargetSpec& spec, std::size_t coordinate,
                             double value) {
  if (coordinate >= spec_dim(spec))
    throw PreconditionError("marginal coordinate out of range");
  if (std::isnan(value))
    throw PreconditionError("marginal CDF evaluated at NaN");
  if (std::isinf(value))
    return value > 0 ? 1.0 : 0.0;
  return std::visit(
      [&](const auto& s) -> double {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, NormalSpec>) {
          return normal_marginal(s.mean, s.cov, coordinate, value);
        } else if constexpr (std::is_same_v<S, StudentTSpec>) {
          return t_marginal(s.dof, s.location, s.scale, coordinate, value);
        } else if constexpr (std::is_same_v<S, CauchySpec>) {
          return t_marginal(1.0, s.location, s.scale, coordinate, value);
        } else if constexpr (std::is_same_v<S, MixtureSpec>) {
          double acc = 0.0;
          for (std::size_t k = 0; k < s.components.size(); ++k)
            acc += s.weights[k] *
                   normal_marginal(s.components[k].mean, s.components[k].cov, coordinate, value);
          return acc;
        } else {
          throw PreconditionError("logistic posterior has no closed-form marginal");
        }
      },
      spec);
}

NormalSpec standard_normal(std::size_t dim) {
  return {Vector::Zero(static_cast<Eigen::Index>(dim)),
          Matrix::Identity(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim))};
}

CauchySpec standard_cauchy(std::size_t dim) {
  return {Vector::Zero(static_cast<Eigen::Index>(dim)),
          Matrix::Identity(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim))};
}

StudentTSpec standard_student_t(std::size_t dim, double dof) {
  return {dof, Vector::Zero(static_cast<Eigen::Index>(dim)),
          Matrix::Identity(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim))};
}

} // namespace reflex
