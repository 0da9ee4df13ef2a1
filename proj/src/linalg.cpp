#include "msense/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "msense/errors.hpp"

namespace msense {

namespace {

// Singular values below this fraction of sigma_1 get their partner vector
// from an orthogonal completion instead of M v / sigma.
constexpr double kCompletionTol = 1e-13;

void normalize_sign(std::span<double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (std::abs(v[i]) > std::abs(v[best])) best = i;
  }
  if (!v.empty() && v[best] < 0.0) {
    for (double& x : v) x = -x;
  }
}

void normalize_col_signs(Matrix& q) {
  for (std::size_t j = 0; j < q.cols(); ++j) {
    Vector c = q.col(j);
    normalize_sign(c);
    q.set_col(j, c);
  }
}

std::vector<std::size_t> descending_order(const Vector& values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] > values[b]; });
  return order;
}

// Extends `basis` (orthonormal columns, the first `filled` of which are set)
// column by column with unit vectors orthogonal to everything before them.
void complete_basis(Matrix& basis, const std::vector<bool>& filled) {
  const std::size_t n = basis.rows();
  for (std::size_t j = 0; j < basis.cols(); ++j) {
    if (filled[j]) continue;
    Vector best;
    double best_norm = -1.0;
    for (std::size_t e = 0; e < n; ++e) {
      Vector cand(n, 0.0);
      cand[e] = 1.0;
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t k = 0; k < basis.cols(); ++k) {
          if (k == j || (!filled[k] && k > j)) continue;
          Vector bk = basis.col(k);
          const double proj = dot(bk, cand);
          for (std::size_t i = 0; i < n; ++i) cand[i] -= proj * bk[i];
        }
      }
      const double nrm = norm2(cand);
      if (nrm > best_norm + 1e-12) {
        best_norm = nrm;
        best = std::move(cand);
      }
    }
    for (double& x : best) x /= best_norm;
    basis.set_col(j, best);
  }
}

}  // namespace

SymEig sym_eig(const Matrix& m) {
  if (!m.square()) throw ShapeMismatch("sym_eig requires a square matrix");
  const std::size_t n = m.rows();
  const double scale = frobenius_norm(m);
  double asym = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) asym += 2.0 * (m(i, j) - m(j, i)) * (m(i, j) - m(j, i));
  asym = std::sqrt(asym);
  if (asym > 1e-12 * scale) throw NotSymmetric(asym, scale);

  Matrix a = symmetrize(m);
  Matrix v = Matrix::identity(n);
  const double norm_a = frobenius_norm(a);

  for (int sweep = 0; sweep < jacobi::kMaxSweeps; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    if (std::sqrt(2.0 * off) <= jacobi::kThreshold * norm_a) break;

    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double app = a(p, p);
        const double aqq = a(q, q);
        const double theta = (aqq - app) / (2.0 * apq);
        double t;
        if (std::abs(theta) > 1e150) {
          t = 0.5 / theta;
        } else {
          t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(1.0 + theta * theta));
        }
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          if (k == p || k == q) continue;
          const double akp = a(k, p);
          const double akq = a(k, q);
          const double bkp = c * akp - s * akq;
          const double bkq = s * akp + c * akq;
          a(k, p) = bkp;
          a(p, k) = bkp;
          a(k, q) = bkq;
          a(q, k) = bkq;
        }
        a(p, p) = app - t * apq;
        a(q, q) = aqq + t * apq;
        a(p, q) = 0.0;
        a(q, p) = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p);
          const double vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  Vector diag(n);
  for (std::size_t i = 0; i < n; ++i) diag[i] = a(i, i);
  const auto order = descending_order(diag);
  SymEig out{Vector(n), Matrix(n, n)};
  for (std::size_t j = 0; j < n; ++j) {
    out.values[j] = diag[order[j]];
    for (std::size_t i = 0; i < n; ++i) out.vectors(i, j) = v(i, order[j]);
  }
  normalize_col_signs(out.vectors);
  return out;
}

Svd svd(const Matrix& m) {
  const std::size_t rows = m.rows();
  const std::size_t cols = m.cols();
  const std::size_t k = std::min(rows, cols);
  if (k == 0) return {Matrix(rows, 0), {}, Matrix(cols, 0)};

  // Eigenvectors of the smaller Gram matrix give one side; the other side is
  // M v / |M v|, which keeps the reconstruction exact even for tiny sigma.
  const bool wide = rows <= cols;
  const Matrix gram = wide ? times_transpose(m, m) : transpose_times(m, m);
  const SymEig eig = sym_eig(gram);
  const Matrix& basis = eig.vectors;  // k x k
  const Matrix mt = wide ? m.transpose() : Matrix();

  Matrix other(wide ? cols : rows, k);
  Vector sigma(k);
  for (std::size_t i = 0; i < k; ++i) {
    const Vector b = basis.col(i);
    Vector w = wide ? mt * b : m * b;
    sigma[i] = norm2(w);
    other.set_col(i, w);
  }
  const double smax = *std::max_element(sigma.begin(), sigma.end());
  std::vector<bool> filled(k, false);
  for (std::size_t i = 0; i < k; ++i) {
    if (sigma[i] > 0.0 && sigma[i] > kCompletionTol * smax) {
      filled[i] = true;
      for (std::size_t r = 0; r < other.rows(); ++r) other(r, i) /= sigma[i];
    }
  }
  complete_basis(other, filled);

  const auto order = descending_order(sigma);
  Svd out{Matrix(rows, k), Vector(k), Matrix(cols, k)};
  const Matrix& left = wide ? basis : other;
  const Matrix& right = wide ? other : basis;
  for (std::size_t j = 0; j < k; ++j) {
    const std::size_t src = order[j];
    out.sigma[j] = sigma[src];
    for (std::size_t r = 0; r < rows; ++r) out.left(r, j) = left(r, src);
    for (std::size_t r = 0; r < cols; ++r) out.right(r, j) = right(r, src);
  }
  return out;
}

Vector singular_values(const Matrix& m) {
  const std::size_t k = std::min(m.rows(), m.cols());
  if (k == 0) return {};
  const Matrix gram = m.rows() <= m.cols() ? times_transpose(m, m) : transpose_times(m, m);
  const SymEig eig = sym_eig(gram);
  // |M b_i| is more accurate than sqrt(lambda_i) for small singular values.
  Vector sigma(k);
  const Matrix mt = m.rows() <= m.cols() ? m.transpose() : m;
  for (std::size_t i = 0; i < k; ++i) sigma[i] = norm2(mt * eig.vectors.col(i));
  std::stable_sort(sigma.begin(), sigma.end(), std::greater<>());
  return sigma;
}

double op_norm(const Matrix& m) {
  if (m.empty()) return 0.0;
  return singular_values(m).front();
}

double lambda_max(const Matrix& m) {
  if (m.empty()) throw ShapeMismatch("lambda_max of an empty matrix");
  return sym_eig(m).values.front();
}

Matrix orthonormal_completion(const Matrix& basis) {
  const std::size_t n = basis.rows();
  if (basis.cols() > n) throw ShapeMismatch("orthonormal_completion: more columns than rows");
  Matrix full(n, n);
  std::vector<bool> filled(n, false);
  for (std::size_t j = 0; j < basis.cols(); ++j) {
    full.set_col(j, basis.col(j));
    filled[j] = true;
  }
  complete_basis(full, filled);
  return full;
}

std::size_t numerical_rank(const Vector& sigma, double tol) {
  if (sigma.empty() || sigma.front() <= 0.0) return 0;
  return static_cast<std::size_t>(std::count_if(
      sigma.begin(), sigma.end(), [&](double s) { return s > tol * sigma.front(); }));
}

Matrix spd_inverse(const Matrix& m) {
  if (!m.square()) throw ShapeMismatch("spd_inverse requires a square matrix");
  const std::size_t n = m.rows();
  Matrix l(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    double d = m(j, j);
    for (std::size_t k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
    if (!(d > 0.0)) throw NonPositiveSpectrum(d);
    l(j, j) = std::sqrt(d);
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = m(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      l(i, j) = s / l(j, j);
    }
  }
  // L^{-1} by forward substitution, then M^{-1} = L^{-T} L^{-1}.
  Matrix linv(n, n);
  for (std::size_t c = 0; c < n; ++c) {
    for (std::size_t i = c; i < n; ++i) {
      double s = i == c ? 1.0 : 0.0;
      for (std::size_t k = c; k < i; ++k) s -= l(i, k) * linv(k, c);
      linv(i, c) = s / l(i, i);
    }
  }
  return symmetrize(transpose_times(linv, linv));
}

Matrix pinv_wide(const Matrix& a) {
  if (a.rows() > a.cols()) throw ShapeMismatch("pinv_wide requires rows <= cols");
  if (a.rows() == 0) return Matrix(a.cols(), 0);
  const Vector sigma = singular_values(a);
  const double smin = sigma.back();
  if (!(smin >= 1e-10 * sigma.front()) || sigma.front() == 0.0) throw RankDeficient(smin);
  return transpose_times(a, spd_inverse(times_transpose(a, a)));
}

Matrix spd_log(const SymEig& eig) {
  if (!eig.values.empty() && eig.values.back() <= 1e-12) throw NonPositiveSpectrum(eig.values.back());
  return spectral_apply(eig, [](double x) { return std::log(x); });
}

Matrix spd_log(const Matrix& m) { return spd_log(sym_eig(m)); }

Matrix spd_frac_power(const SymEig& eig, double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw InvalidArgument("spd_frac_power: p must lie in [0, 1]");
  if (!eig.values.empty() && eig.values.back() <= 1e-12) throw NonPositiveSpectrum(eig.values.back());
  if (p == 0.0) return Matrix::identity(eig.values.size());
  return spectral_apply(eig, [p](double x) { return std::pow(x, p); });
}

Matrix spd_frac_power(const Matrix& m, double p) { return spd_frac_power(sym_eig(m), p); }

Matrix sym_exp(const Matrix& m) {
  return spectral_apply(sym_eig(m), [](double x) { return std::exp(x); });
}

SingularPair top_singular_pair(const Matrix& m) {
  if (m.empty() || max_abs(m) == 0.0) throw ZeroMatrix();
  Svd s = svd(m);
  SingularPair pair{s.left.col(0), s.right.col(0), s.sigma[0]};
  std::size_t best = 0;
  for (std::size_t i = 1; i < pair.u.size(); ++i)
    if (std::abs(pair.u[i]) > std::abs(pair.u[best])) best = i;
  if (pair.u[best] < 0.0) {
    for (double& x : pair.u) x = -x;
    for (double& x : pair.v) x = -x;
  }
  return pair;
}

SingularPair bottom_singular_pair(const Matrix& m) {
  if (m.empty() || max_abs(m) == 0.0) throw RankDeficient(0.0, "bottom singular pair of a zero matrix");
  Svd s = svd(m);
  const std::size_t k = s.sigma.size();
  if (numerical_rank(s.sigma) < k) throw RankDeficient(s.sigma.back());
  SingularPair pair{s.left.col(k - 1), s.right.col(k - 1), s.sigma[k - 1]};
  std::size_t best = 0;
  for (std::size_t i = 1; i < pair.u.size(); ++i)
    if (std::abs(pair.u[i]) > std::abs(pair.u[best])) best = i;
  if (pair.u[best] < 0.0) {
    for (double& x : pair.u) x = -x;
    for (double& x : pair.v) x = -x;
  }
  return pair;
}

}  // namespace msense
