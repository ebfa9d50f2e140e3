#pragma once

#include <Eigen/Dense>

namespace reflex {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Lower Cholesky factor; throws NotSpdError naming `what` on failure.
Matrix cholesky_lower(const Matrix& m, const char* what);

// (m + mᵀ)/2
Matrix symmetrized(const Matrix& m);

} // namespace reflex

namespace reflex {

/// ‖L⁻¹(x − mu)‖² for lower-triangular L, by forward substitution.
/// Allocation-free for d ≤ 64.
double lower_solve_norm_sq(const Matrix& lower, const Vector& x, const Vector& mu);

} // namespace reflex
