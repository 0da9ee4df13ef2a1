#include "msense/lifted.hpp"

#include <algorithm>
#include <cmath>

#include "msense/errors.hpp"
#include "msense/linalg.hpp"
#include "msense/rng.hpp"

namespace msense {

namespace {

void require_finite_positive(double x, const char* name) {
  if (!std::isfinite(x) || x <= 0.0) throw InvalidArgument(std::string(name) + " must be finite and positive");
}

}  // namespace

Projections build_projections(std::size_t m, std::size_t n, std::size_t r) {
  if (r == 0 || r > std::min(m, n)) throw DimensionError("build_projections: need 1 <= r <= min(m, n)");
  const std::size_t d = m + n;
  const double s = 1.0 / std::sqrt(2.0);
  Projections p{Matrix(r, d), Matrix(d - 2 * r, d), Matrix(d - r, d)};
  for (std::size_t i = 0; i < r; ++i) {
    p.PA(i, i) = s;
    p.PA(i, m + i) = s;
  }
  std::size_t row = 0;
  for (std::size_t i = r; i < m; ++i) p.PN(row++, i) = 1.0;
  for (std::size_t i = r; i < n; ++i) p.PN(row++, m + i) = 1.0;
  for (std::size_t i = 0; i < d - 2 * r; ++i) std::ranges::copy(p.PN.row(i), p.PP.row(i).begin());
  for (std::size_t i = 0; i < r; ++i) {
    p.PP(d - 2 * r + i, i) = s;
    p.PP(d - 2 * r + i, m + i) = -s;
  }
  return p;
}

Matrix dilation(const Matrix& m) {
  const std::size_t a = m.rows();
  const std::size_t b = m.cols();
  Matrix out(a + b, a + b);
  for (std::size_t i = 0; i < a; ++i) {
    for (std::size_t j = 0; j < b; ++j) {
      out(i, a + j) = m(i, j);
      out(a + j, i) = m(i, j);
    }
  }
  return out;
}

ProblemSpec make_spec(const Matrix& y, const ProblemParams& params) {
  ProblemSpec spec;
  spec.m = y.rows();
  spec.n = y.cols();
  spec.r = params.r;
  spec.h = params.h;
  if (spec.m == 0 || spec.n == 0) throw DimensionError("Y must be nonempty");
  if (spec.r == 0 || spec.r > std::min(spec.m, spec.n)) throw DimensionError("need 1 <= r <= min(m, n)");
  if (spec.h < spec.r) throw DimensionError("need h >= r");

  const std::size_t k = std::min(spec.m, spec.n);
  for (std::size_t i = 0; i < spec.m; ++i) {
    for (std::size_t j = 0; j < spec.n; ++j) {
      if (i != j && y(i, j) != 0.0) throw InvalidArgument("Y is not diagonal; canonicalize it first");
    }
  }
  for (std::size_t i = 0; i < k; ++i) {
    if (y(i, i) < 0.0 || (i > 0 && y(i, i) > y(i - 1, i - 1))) {
      throw InvalidArgument("diagonal of Y must be nonnegative and nonincreasing");
    }
  }
  spec.Y = y;
  spec.normY = y(0, 0);
  spec.Yrr = y(spec.r - 1, spec.r - 1);
  if (spec.Yrr <= 0.0) throw RankDeficient(spec.Yrr, "Y has rank below r");
  if (spec.r < k && y(spec.r, spec.r) > 1e-12 * spec.normY) throw RankTooHigh(y(spec.r, spec.r), spec.normY);

  require_finite_positive(params.alpha, "alpha");
  require_finite_positive(params.delta, "delta");
  require_finite_positive(params.epsilon, "epsilon");
  require_finite_positive(params.eta, "eta");
  if (!std::isfinite(params.rho_target) || params.rho_target < 0.0) {
    throw InvalidArgument("rho_target must be finite and nonnegative");
  }
  if (params.delta_eff) require_finite_positive(*params.delta_eff, "delta_eff");
  spec.alpha = params.alpha;
  spec.delta = params.delta;
  spec.epsilon = params.epsilon;
  spec.eta = params.eta;
  spec.rho_target = params.rho_target;
  spec.delta_eff = params.delta_eff;

  const double eps2 = spec.epsilon * spec.epsilon;
  if (eps2 >= spec.Yrr) throw InvalidArgument("epsilon^2 must be below Y_rr so that T2 > 0");
  spec.kappa = spec.normY / spec.Yrr;
  spec.gamma = static_cast<double>(k) / static_cast<double>(spec.r);
  spec.T1 = 5.0 / (4.0 * spec.Yrr) * std::log(std::pow(spec.alpha, 4) * spec.Yrr / eps2);
  spec.T2 = 5.0 / spec.Yrr * std::log(spec.Yrr / eps2);
  const double dm = spec.monitor_delta();
  spec.beta20 = dm * dm / (20.0 * spec.T2 * spec.normY);
  spec.beta4 = dm * dm / (4.0 * spec.T2 * spec.normY);

  const std::size_t d = spec.m + spec.n;
  Projections p = build_projections(spec.m, spec.n, spec.r);
  spec.lift.Yhat = dilation(y);
  spec.lift.J = Matrix::identity(d);
  for (std::size_t i = spec.m; i < d; ++i) spec.lift.J(i, i) = -1.0;
  spec.lift.PA = std::move(p.PA);
  spec.lift.PN = std::move(p.PN);
  spec.lift.PP = std::move(p.PP);
  return spec;
}

ProblemSpec with_monitor_delta(ProblemSpec spec, double delta_eff) {
  require_finite_positive(delta_eff, "delta_eff");
  spec.delta_eff = delta_eff;
  spec.beta20 = delta_eff * delta_eff / (20.0 * spec.T2 * spec.normY);
  spec.beta4 = delta_eff * delta_eff / (4.0 * spec.T2 * spec.normY);
  return spec;
}

Canonical canonicalize(const Matrix& y_raw) {
  const Svd s = svd(y_raw);
  Canonical c;
  c.Y = Matrix::diagonal(s.sigma, y_raw.rows(), y_raw.cols());
  c.left_rot = orthonormal_completion(s.left);
  c.right_rot = orthonormal_completion(s.right);
  return c;
}

Matrix stack_factors(const Matrix& u, const Matrix& v) {
  if (u.cols() != v.cols()) throw ShapeMismatch("U and V need the same number of columns");
  return vstack(u, v);
}

Matrix apply_J(const Matrix& m, std::size_t m_rows) {
  Matrix out = m;
  for (std::size_t i = m_rows; i < out.rows(); ++i) {
    for (double& x : out.row(i)) x = -x;
  }
  return out;
}

namespace {

void check_w_shape(const Matrix& w, const ProblemSpec& spec) {
  if (w.rows() != spec.d()) throw ShapeMismatch("W must have m + n rows");
  if (w.cols() != spec.h) throw ShapeMismatch("W must have h columns");
}

// J G J for G of size d x d: flips the sign of the off-diagonal blocks.
Matrix conj_J(const Matrix& g, std::size_t m) {
  Matrix out = g;
  for (std::size_t i = 0; i < g.rows(); ++i) {
    for (std::size_t j = 0; j < g.cols(); ++j) {
      if ((i < m) != (j < m)) out(i, j) = -out(i, j);
    }
  }
  return out;
}

}  // namespace

Matrix residual_R(const Matrix& w, const ProblemSpec& spec) {
  check_w_shape(w, spec);
  const Matrix g = times_transpose(w, w);
  return spec.lift.Yhat - 0.5 * (g - conj_J(g, spec.m));
}

Matrix lifted_X(const Matrix& w, const ProblemSpec& spec) {
  check_w_shape(w, spec);
  return spec.lift.Yhat + 0.5 * conj_J(times_transpose(w, w), spec.m);
}

LiftedState derive(const Matrix& w, const ProblemSpec& spec, double t) {
  check_w_shape(w, spec);
  LiftedState s;
  s.t = t;
  s.W = w;
  s.A = spec.lift.PA * w;
  const double sigma_r = singular_values(s.A).back();
  if (sigma_r < 1e-12 * std::sqrt(spec.normY)) throw RankDeficient(sigma_r, "A = PA W lost rank");
  try {
    s.AAt_inv = spd_inverse(times_transpose(s.A, s.A));
  } catch (const NonPositiveSpectrum&) {
    throw RankDeficient(sigma_r, "A A^T is numerically singular");
  }
  s.Adag = transpose_times(s.A, s.AAt_inv);
  s.Q = symmetrize(s.Adag * s.A);
  s.Wtilde = w - w * s.Q;
  s.F = spec.lift.PP * (w * s.Adag);
  const Matrix g = times_transpose(w, w);
  const Matrix jgj = conj_J(g, spec.m);
  s.R = spec.lift.Yhat - 0.5 * (g - jgj);
  s.X = spec.lift.Yhat + 0.5 * jgj;
  s.imbalance = transpose_times(w, apply_J(w, spec.m));
  return s;
}

Matrix init_random(const ProblemSpec& spec, double scale_c, std::uint64_t seed) {
  require_finite_positive(scale_c, "C");
  const double sd = spec.epsilon / (scale_c * std::sqrt(static_cast<double>(spec.h)));
  SplitMix64 rng(seed);
  Matrix w(spec.d(), spec.h);
  for (double& x : w.data()) x = sd * rng.normal();
  return w;
}

Matrix init_scaled_identity(const ProblemSpec& spec) {
  if (spec.m != spec.n || spec.n != spec.h) throw ShapeMismatch("scaled identity initialization needs m = n = h");
  Matrix w(spec.d(), spec.h);
  const double s = spec.epsilon / std::sqrt(2.0);
  for (std::size_t i = 0; i < spec.h; ++i) {
    w(i, i) = s;
    w(spec.m + i, i) = s;
  }
  return w;
}

InvariantReport check_init(const Matrix& w0, const ProblemSpec& spec) {
  check_w_shape(w0, spec);
  InvariantReport rep;
  const double sqrt_y = std::sqrt(spec.normY);
  rep.add("init_norm_W", op_norm(w0), spec.epsilon);
  rep.add("init_sigma_r_A", singular_values(spec.lift.PA * w0).back(),
          spec.epsilon / (spec.alpha * spec.alpha), BoundKind::lower);
  const double cap = std::min(std::sqrt(spec.kappa) / (spec.alpha * spec.gamma), spec.delta / (3.0 * spec.alpha)) * sqrt_y;
  rep.add("epsilon_cap", spec.epsilon, cap);
  rep.add("delta_cap", spec.delta, 1.0 / (64.0 * spec.alpha * spec.kappa));
  return rep;
}

}  // namespace msense
