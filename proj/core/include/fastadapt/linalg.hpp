#pragma once

#include "fastadapt/complex_matrix.hpp"

#include <Eigen/Dense>

namespace fastadapt::linalg {

/// Inverses whose estimated condition number exceeds this are rejected.
inline constexpr double kMaxCondition = 1e12;
/// Allowed max-entry deviation from Hermitian symmetry, relative to max(1, max|a_ij|).
inline constexpr double kHermitianTolerance = 1e-8;

/// Largest |a_ij - conj(a_ji)|; the matrix must be square.
double hermitian_deviation(const ComplexMatrix& a);

/// (A + A^H) / 2.
ComplexMatrix hermitian_part(const ComplexMatrix& a);

/// Inverse via partially pivoted LU. Throws SingularMatrixError when the
/// reciprocal condition estimate is below 1 / kMaxCondition.
ComplexMatrix inverse(const ComplexMatrix& a);

/// Natural log-determinant of a Hermitian positive definite matrix via Cholesky.
double logdet_hpd(const ComplexMatrix& a);

/// Inverse of a Hermitian positive definite matrix via Cholesky.
ComplexMatrix inverse_hpd(const ComplexMatrix& a);

struct HermitianEig {
    Eigen::VectorXd values;  // ascending
    ComplexMatrix vectors;   // columns are orthonormal eigenvectors
};

HermitianEig hermitian_eig(const ComplexMatrix& a);

/// Singular values in descending order.
Eigen::VectorXd singular_values(const ComplexMatrix& a);

/// Largest singular value of a real matrix.
double spectral_norm(const RealMatrix& a);

/// Multiplier mu >= 0 solving sum_i weights_i / (eigenvalues_i + mu)^2 = power.
///
/// eigenvalues are those of a Hermitian PSD matrix A and weights_i is the
/// squared norm of row i of Q^H B, so the left side is ||(A + mu I)^+ B||_F^2.
/// Returns 0 when the unregularized solution already fits the budget. The
/// bracket [0, mu_max] is found by doubling, narrowed by bisection until the
/// power is within 1e-8 * power (at most 100 steps), then polished by
/// safeguarded Newton steps. Throws NumericError when no bracket exists.
double solve_power_multiplier(const Eigen::VectorXd& eigenvalues, const Eigen::VectorXd& weights,
                              double power);

/// Row-wise squared norms of Q^H B for the eigenvectors Q of `eig`.
Eigen::VectorXd projected_weights(const HermitianEig& eig, const ComplexMatrix& b);

/// (A + mu I)^+ B using the eigendecomposition of A; modes with
/// eigenvalue + mu == 0 are dropped.
ComplexMatrix regularized_solve(const HermitianEig& eig, const ComplexMatrix& b, double mu);

} // namespace fastadapt::linalg
