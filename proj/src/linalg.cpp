#include "reflex/linalg.hpp"

#include "reflex/errors.hpp"

#include <array>
#include <vector>

namespace reflex {

Matrix cholesky_lower(const Matrix& m, const char* what) {
  if (m.rows() != m.cols() || m.rows() == 0)
    throw NotSpdError(std::string(what) + ": matrix is not square and non-empty");
  if (!m.allFinite())
    throw NotSpdError(std::string(what) + ": matrix has non-finite entries");
  if (!m.isApprox(m.transpose(), 1e-10))
    throw NotSpdError(std::string(what) + ": matrix is not symmetric");
  Eigen::LLT<Matrix> llt(symmetrized(m));
  if (llt.info() != Eigen::Success)
    throw NotSpdError(std::string(what) + ": matrix is not positive definite");
  Matrix lower = llt.matrixL();
  for (Eigen::Index i = 0; i < lower.rows(); ++i)
    if (!(lower(i, i) > 0.0))
      throw NotSpdError(std::string(what) + ": Cholesky factor has a zero pivot");
  return lower;
}

Matrix symmetrized(const Matrix& m) { return 0.5 * (m + m.transpose()); }

namespace {

double solve_into(const Matrix& lower, const Vector& x, const Vector& mu, double* z) {
  const Eigen::Index d = lower.rows();
  double acc = 0.0;
  for (Eigen::Index i = 0; i < d; ++i) {
    double s = x[i] - mu[i];
    for (Eigen::Index j = 0; j < i; ++j)
      s -= lower(i, j) * z[j];
    z[i] = s / lower(i, i);
    acc += z[i] * z[i];
  }
  return acc;
}

} // namespace

double lower_solve_norm_sq(const Matrix& lower, const Vector& x, const Vector& mu) {
  const Eigen::Index d = lower.rows();
  if (d <= 64) {
    std::array<double, 64> z;
    return solve_into(lower, x, mu, z.data());
  }
  std::vector<double> z(static_cast<std::size_t>(d));
  return solve_into(lower, x, mu, z.data());
}

} // namespace reflex
