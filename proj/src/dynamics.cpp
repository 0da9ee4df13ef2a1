#include "msense/dynamics.hpp"

#include <algorithm>
#include <cmath>

#include "msense/errors.hpp"

namespace msense {

namespace {

void require_symmetric(const Matrix& e, std::size_t d) {
  if (e.rows() != d || e.cols() != d) throw ShapeMismatch("E must be (m+n) x (m+n)");
  const double asym = frobenius_norm(e - e.transpose());
  const double scale = frobenius_norm(e);
  if (asym > 1e-12 * scale) throw NotSymmetric(asym, scale);
}

// Targets below this fraction of their natural scale count as zero; their
// singular vectors would be roundoff.
constexpr double kZeroTol = 1e-13;

SingularPair top_pair_or_throw(const Matrix& target, double scale) {
  if (max_abs(target) <= kZeroTol * scale) throw ZeroMatrix();
  return top_singular_pair(target);
}

double bilinear(std::span<const double> u, const Matrix& m, std::span<const double> v) { return dot(u, m * v); }

}  // namespace

std::pair<Matrix, Matrix> gd_step_factored(const Matrix& u, const Matrix& v, const MeasOp& op, const Matrix& y,
                                           double eta) {
  if (u.cols() != v.cols() || u.rows() != y.rows() || v.rows() != y.cols()) {
    throw ShapeMismatch("gd_step_factored: U, V, Y shapes are inconsistent");
  }
  const Matrix g = normal_map(op, y - times_transpose(u, v));
  Matrix u_next = u + eta * (g * v);
  Matrix v_next = v + eta * transpose_times(g, u);
  return {std::move(u_next), std::move(v_next)};
}

StepRecord gd_step_lifted(const Matrix& w, std::size_t k, const MeasOp& op, const ProblemSpec& spec) {
  StepRecord rec;
  rec.k = k;
  rec.eta = spec.eta;
  rec.W_before = w;
  rec.R_k = residual_R(w, spec);
  const Matrix u = w.row_block(0, spec.m);
  const Matrix v = w.row_block(spec.m, spec.n);
  const Matrix ea = measurement_error(op, spec.Y, u, v);
  rec.EA_hat = dilation(ea);
  rec.Rtilde = rec.R_k + rec.EA_hat;
  // |dilation(B)| = |B| for the m x n off-diagonal block B.
  Matrix block(spec.m, spec.n);
  for (std::size_t i = 0; i < spec.m; ++i) {
    for (std::size_t j = 0; j < spec.n; ++j) block(i, j) = rec.Rtilde(i, spec.m + j);
  }
  const double guard = spec.eta * op_norm(block);
  if (!(guard <= kStepGuard)) throw StepTooLarge(guard);
  rec.W_after = w + spec.eta * (rec.Rtilde * w);
  return rec;
}

StepFlow::StepFlow(StepRecord rec) : rec_(std::move(rec)) {
  Matrix m = rec_.eta * rec_.Rtilde;
  for (std::size_t i = 0; i < m.rows(); ++i) m(i, i) += 1.0;
  eig_ = sym_eig(symmetrize(m));
  generator_ = (1.0 / rec_.eta) * spd_log(eig_);
}

Matrix StepFlow::interpolate(double s) const { return spd_frac_power(eig_, s) * rec_.W_before; }

Matrix StepFlow::perturbation(double s, const ProblemSpec& spec) const {
  return generator_ - residual_R(interpolate(s), spec);
}

Matrix StepFlow::derivative_W(double s) const { return generator_ * interpolate(s); }

Matrix flow_interpolate(const StepRecord& rec, double s) {
  if (s == 0.0) return rec.W_before;
  return StepFlow(rec).interpolate(s);
}

Matrix perturbation_E(const StepRecord& rec, double s, const ProblemSpec& spec) {
  return StepFlow(rec).perturbation(s, spec);
}

Matrix flow_derivative_W(const StepRecord& rec, double s, const ProblemSpec& spec) {
  if (rec.W_before.rows() != spec.d()) throw ShapeMismatch("step record does not match the problem");
  return StepFlow(rec).derivative_W(s);
}

Matrix dF_dt(const LiftedState& st, const Matrix& e, const ProblemSpec& spec) {
  require_symmetric(e, spec.d());
  const Lifting& L = spec.lift;
  const Matrix xe = st.X + e;
  const Matrix left = L.PP - st.F * L.PA;
  const Matrix right = L.PA.transpose() + transpose_times(L.PP, st.F);
  const Matrix bracket = transpose_times(L.PA * xe, st.AAt_inv) - transpose_times(L.PP, st.F);
  return left * xe * right + L.PP * times_transpose(st.Wtilde, st.Wtilde) * bracket;
}

Matrix dWtilde_dt(const LiftedState& st, const Matrix& e, const ProblemSpec& spec) {
  require_symmetric(e, spec.d());
  const Lifting& L = spec.lift;
  const Matrix xe = st.X + e;
  const Matrix first = transpose_times(L.PP, (L.PP - st.F * L.PA) * xe * st.Wtilde);
  const Matrix bracket = times_transpose(times_transpose(xe, L.PA), st.Adag) - 0.5 * st.W + st.Wtilde;
  return first - times_transpose(st.Wtilde, st.Wtilde) * bracket;
}

FlowTangent flow_tangent(const LiftedState& st, const Matrix& e, const ProblemSpec& spec) {
  require_symmetric(e, spec.d());
  const Lifting& L = spec.lift;
  FlowTangent tan;
  tan.W_dot = (st.R + e) * st.W;
  tan.A_dot = L.PA * tan.W_dot;
  Matrix s = times_transpose(tan.W_dot, st.W);
  s += s.transpose();
  const Matrix jsj = L.J * s * L.J;
  tan.R_dot = -0.5 * (s - jsj);
  tan.X_dot = 0.5 * jsj;
  tan.F_dot = dF_dt(st, e, spec);
  tan.Wtilde_dot = dWtilde_dt(st, e, spec);
  const Matrix jw = apply_J(st.W, spec.m);
  tan.imbalance_dot = transpose_times(tan.W_dot, jw);
  tan.imbalance_dot += tan.imbalance_dot.transpose();
  return tan;
}

double singular_pair_derivative(const LiftedState& st, const Matrix& e, const ProblemSpec& spec, PairTarget which) {
  const FlowTangent tan = flow_tangent(st, e, spec);
  const double w_scale = std::max(max_abs(st.W), 1e-300);
  switch (which) {
    case PairTarget::Wtilde: {
      const SingularPair p = top_pair_or_throw(st.Wtilde, w_scale);
      return bilinear(p.u, tan.Wtilde_dot, p.v);
    }
    case PairTarget::R: {
      if (max_abs(st.R) <= kZeroTol * spec.normY) throw ZeroMatrix();
      const Vector v = sym_eig(st.R).vectors.col(0);
      return bilinear(v, tan.R_dot, v);
    }
    case PairTarget::F: {
      const SingularPair p = top_pair_or_throw(st.F, 1.0);
      return bilinear(p.u, tan.F_dot, p.v);
    }
    case PairTarget::PNWQ: {
      const SingularPair p = top_pair_or_throw(spec.lift.PN * st.W * st.Q, w_scale);
      return bilinear(p.u, spec.lift.PN * (tan.W_dot - tan.Wtilde_dot), p.v);
    }
    case PairTarget::A_bottom: {
      const SingularPair p = bottom_singular_pair(st.A);
      return bilinear(p.u, tan.A_dot, p.v);
    }
  }
  throw InvalidArgument("unknown singular pair target");
}

}  // namespace msense
