#pragma once

#include <cstddef>
#include <vector>

#include "msense/matrix.hpp"

namespace msense {

/// Eigendecomposition M = Q diag(values) Q^T of a symmetric matrix.
struct SymEig {
  Vector values;   ///< descending
  Matrix vectors;  ///< orthonormal columns, column i pairs with values[i]
};

struct Svd {
  Matrix left;   ///< rows x k
  Vector sigma;  ///< k = min(rows, cols) values, descending, nonnegative
  Matrix right;  ///< cols x k
};

struct SingularPair {
  Vector u;
  Vector v;
  double sigma = 0.0;
};

namespace jacobi {
inline constexpr double kThreshold = 1e-14;
inline constexpr int kMaxSweeps = 100;
}  // namespace jacobi

/// Cyclic Jacobi eigendecomposition.
///
/// Eigenvalues come out descending (ties keep the smaller original index
/// first) and each eigenvector is signed so that its largest-magnitude entry
/// is positive. Throws NotSymmetric when |M - M^T|_F > 1e-12 |M|_F.
SymEig sym_eig(const Matrix& m);

/// Thin SVD through the eigendecomposition of the smaller Gram matrix.
Svd svd(const Matrix& m);

/// Singular values only, descending.
Vector singular_values(const Matrix& m);

/// Operator (spectral) norm.
double op_norm(const Matrix& m);

/// Largest eigenvalue of a symmetric matrix.
double lambda_max(const Matrix& m);

/// Right pseudoinverse A^T (A A^T)^{-1} of a wide matrix.
/// Throws RankDeficient when sigma_min(A) < 1e-10 sigma_max(A).
Matrix pinv_wide(const Matrix& a);

/// Inverse of a symmetric positive definite matrix via Cholesky.
Matrix spd_inverse(const Matrix& m);

/// Principal logarithm of a symmetric positive definite matrix.
/// Throws NonPositiveSpectrum if an eigenvalue is <= 1e-12.
Matrix spd_log(const Matrix& m);
Matrix spd_log(const SymEig& eig);

/// M^p for symmetric positive definite M and p in [0, 1].
Matrix spd_frac_power(const Matrix& m, double p);
Matrix spd_frac_power(const SymEig& eig, double p);

/// Matrix exponential of a symmetric matrix.
Matrix sym_exp(const Matrix& m);

/// Q diag(f(lambda)) Q^T for an existing decomposition.
template <class F>
Matrix spectral_apply(const SymEig& eig, F&& f) {
  const std::size_t n = eig.values.size();
  Matrix scaled = eig.vectors;
  for (std::size_t j = 0; j < n; ++j) {
    const double fj = f(eig.values[j]);
    for (std::size_t i = 0; i < n; ++i) scaled(i, j) *= fj;
  }
  return symmetrize(times_transpose(scaled, eig.vectors));
}

/// Top singular pair (sigma = |M|). Throws ZeroMatrix for an all-zero input.
SingularPair top_singular_pair(const Matrix& m);

/// Pair for the smallest singular value, sigma_{min(rows, cols)}(M).
/// Throws RankDeficient when M is not of full rank within 1e-12 sigma_1.
SingularPair bottom_singular_pair(const Matrix& m);

/// Square orthogonal matrix whose leading columns are `basis` (orthonormal
/// columns); the rest are Gram-Schmidt completions of standard unit vectors.
Matrix orthonormal_completion(const Matrix& basis);

/// Numerical rank: number of singular values above tol * sigma_1.
std::size_t numerical_rank(const Vector& sigma, double tol = 1e-12);

}  // namespace msense
