#pragma once

#include <cmath>
#include <cstdint>

#include "msense/matrix.hpp"
#include "msense/rng.hpp"

namespace msense::testing {

inline Matrix random_matrix(std::size_t rows, std::size_t cols, SplitMix64& rng, double sd = 1.0) {
  Matrix m(rows, cols);
  for (double& x : m.data()) x = sd * rng.normal();
  return m;
}

inline Matrix random_symmetric(std::size_t n, SplitMix64& rng) {
  const Matrix g = random_matrix(n, n, rng);
  return symmetrize(g);
}

inline Matrix random_spd(std::size_t n, SplitMix64& rng, double shift = 0.5) {
  const Matrix g = random_matrix(n, n, rng);
  Matrix s = (1.0 / static_cast<double>(n)) * times_transpose(g, g);
  for (std::size_t i = 0; i < n; ++i) s(i, i) += shift;
  return s;
}

inline Vector random_vector(std::size_t n, SplitMix64& rng) {
  Vector v(n);
  for (double& x : v) x = rng.normal();
  return v;
}

inline double rel_diff(const Matrix& a, const Matrix& b) {
  return frobenius_norm(a - b) / std::max(1e-300, frobenius_norm(b));
}

/// Largest eigenvalue by plain power iteration on M^T M; independent of Jacobi.
inline double power_norm(const Matrix& m, int iters = 2000) {
  Vector v(m.cols(), 1.0);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] += 0.01 * static_cast<double>(i);
  double sigma = 0.0;
  for (int k = 0; k < iters; ++k) {
    Vector w = m.transpose() * std::span<const double>(m * v);
    const double nrm = norm2(w);
    if (nrm == 0.0) return 0.0;
    for (double& x : w) x /= nrm;
    v = std::move(w);
    sigma = norm2(m * v);
  }
  return sigma;
}

}  // namespace msense::testing
