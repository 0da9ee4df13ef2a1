#pragma once

#include <cstdint>
#include <optional>

#include "msense/matrix.hpp"
#include "msense/report.hpp"

namespace msense {

/// Fixed lifted objects for a target Y (m x n) and rank r.
struct Lifting {
  Matrix Yhat;  ///< [[0, Y], [Y^T, 0]]
  Matrix J;     ///< diag(I_m, -I_n)
  Matrix PA;    ///< r x (m+n), rows (e_i + e_{m+i}) / sqrt(2)
  Matrix PN;    ///< (m+n-2r) x (m+n)
  Matrix PP;    ///< [PN; PA J], (m+n-r) x (m+n)
};

struct Projections {
  Matrix PA;
  Matrix PN;
  Matrix PP;
};

/// Throws DimensionError if r > min(m, n) or r == 0.
Projections build_projections(std::size_t m, std::size_t n, std::size_t r);

/// Self-adjoint dilation [[0, M], [M^T, 0]].
Matrix dilation(const Matrix& m);

struct ProblemParams {
  std::size_t r = 1;
  std::size_t h = 1;
  double alpha = 1.0;
  double delta = 0.0;
  double epsilon = 0.0;
  double eta = 0.0;
  double rho_target = 0.0;
  /// Monitoring delta for practical runs; the theorem's delta when unset.
  std::optional<double> delta_eff;
};

/// Target, dimensions and all scalar hyperparameters.
///
/// Y must already be canonical (diagonal, nonnegative, descending) with
/// rank exactly r.
struct ProblemSpec {
  std::size_t m = 0, n = 0, r = 0, h = 0;
  Matrix Y;
  double normY = 0.0;
  double Yrr = 0.0;
  double kappa = 0.0;
  double gamma = 0.0;
  double alpha = 0.0, delta = 0.0, epsilon = 0.0, eta = 0.0, rho_target = 0.0;
  double T1 = 0.0, T2 = 0.0;
  // Both betas use the monitoring delta.
  double beta20 = 0.0;  ///< delta^2 / (20 T2 |Y|)
  double beta4 = 0.0;   ///< delta^2 / (4 T2 |Y|)
  std::optional<double> delta_eff;
  Lifting lift;

  double monitor_delta() const { return delta_eff.value_or(delta); }
  std::size_t d() const { return m + n; }
};

/// Validates and fills every derived field. Throws DimensionError,
/// InvalidArgument (non-canonical Y, bad scalars), RankDeficient
/// (Y_rr = 0) or RankTooHigh (sigma_{r+1}(Y) > 1e-12 |Y|).
ProblemSpec make_spec(const Matrix& y, const ProblemParams& params);

/// Copy of `spec` monitored with `delta_eff`; the betas follow.
ProblemSpec with_monitor_delta(ProblemSpec spec, double delta_eff);

struct Canonical {
  Matrix Y;           ///< m x n diagonal, descending, nonnegative
  Matrix left_rot;    ///< m x m orthogonal
  Matrix right_rot;   ///< n x n orthogonal
};

/// Yraw = left_rot * Y * right_rot^T.
Canonical canonicalize(const Matrix& y_raw);

/// Snapshot of W with everything derived from it.
struct LiftedState {
  double t = 0.0;
  Matrix W;          ///< (m+n) x h
  Matrix A;          ///< PA W, r x h
  Matrix Adag;       ///< A^T (A A^T)^{-1}
  Matrix AAt_inv;    ///< (A A^T)^{-1}
  Matrix Q;          ///< Adag A
  Matrix Wtilde;     ///< W (I - Q)
  Matrix F;          ///< PP W Adag
  Matrix R;          ///< Yhat - (W W^T - J W W^T J) / 2
  Matrix X;          ///< Yhat + J W W^T J / 2
  Matrix imbalance;  ///< W^T J W

  Matrix U(std::size_t m) const { return W.row_block(0, m); }
  Matrix V(std::size_t m) const { return W.row_block(m, W.rows() - m); }
};

Matrix stack_factors(const Matrix& u, const Matrix& v);
/// Yhat - (W W^T - J W W^T J) / 2, which equals dilation(Y - U V^T).
Matrix residual_R(const Matrix& w, const ProblemSpec& spec);
/// Yhat + J W W^T J / 2
Matrix lifted_X(const Matrix& w, const ProblemSpec& spec);
/// Left-multiplication by J: negates the last n rows.
Matrix apply_J(const Matrix& m, std::size_t m_rows);

/// Throws ShapeMismatch, or RankDeficient when sigma_r(A) < 1e-12 sqrt(|Y|).
LiftedState derive(const Matrix& w, const ProblemSpec& spec, double t = 0.0);

/// i.i.d. Normal(0, (epsilon / (C sqrt(h)))^2) entries.
Matrix init_random(const ProblemSpec& spec, double scale_c, std::uint64_t seed);
/// U = V = (epsilon / sqrt(2)) I. Requires m = n = h.
Matrix init_scaled_identity(const ProblemSpec& spec);

/// Initialization conditions on W0 and the admissible epsilon and delta.
InvariantReport check_init(const Matrix& w0, const ProblemSpec& spec);

}  // namespace msense
