#include "msense/monitors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "msense/errors.hpp"
#include "msense/linalg.hpp"

namespace msense {

namespace {

// Derivative checks fire when the quantity is within this fraction of its bound.
constexpr double kActivation = 0.01;

double sigma_r1(const Matrix& w, std::size_t r) {
  if (std::min(w.rows(), w.cols()) <= r) return 0.0;
  return singular_values(w)[r];
}

double norm_or_zero(const Matrix& m) { return m.empty() ? 0.0 : op_norm(m); }

double lambda1_ppx(const LiftedState& st, const ProblemSpec& spec) {
  const Matrix& pp = spec.lift.PP;
  return lambda_max(symmetrize(pp * times_transpose(st.X, pp)));
}

}  // namespace

StateScalars state_scalars(const LiftedState& st, const ProblemSpec& spec) {
  const Lifting& L = spec.lift;
  StateScalars sc;
  sc.norm_W = op_norm(st.W);
  sc.norm_R = op_norm(st.R);
  sc.norm_imbalance = op_norm(st.imbalance);
  sc.norm_PAJW = op_norm(L.PA * apply_J(st.W, spec.m));
  sc.norm_PNW = norm_or_zero(L.PN * st.W);
  sc.lambda1_PPX = lambda1_ppx(st, spec);
  sc.norm_F = op_norm(st.F);
  sc.norm_Wtilde = op_norm(st.Wtilde);
  sc.sigma_r_A = singular_values(st.A).back();
  sc.sigma_r1_W = sigma_r1(st.W, spec.r);
  sc.norm_PNWQ = norm_or_zero(L.PN * st.W * st.Q);
  return sc;
}

double mr_inf(const ProblemSpec& spec, double beta) {
  const double ratio = spec.normY / spec.Yrr;
  const double eps2 = spec.epsilon * spec.epsilon;
  return 64.0 * (beta * spec.gamma * ratio + std::sqrt(ratio)) * eps2 *
         std::exp(6.0 * spec.alpha * spec.monitor_delta() * spec.normY * spec.T2);
}

PhaseBounds phase_bounds(const ProblemSpec& spec, double t) {
  PhaseBounds b;
  b.MR_inf = mr_inf(spec, spec.beta20);
  b.MR_t = std::max(3.0 * spec.normY * std::exp(-(2.0 * spec.Yrr / 5.0) * (t - spec.T1)), b.MR_inf);
  return b;
}

InvariantReport warmup_report(const LiftedState& st, const ProblemSpec& spec) {
  return warmup_report(st, state_scalars(st, spec), spec);
}

InvariantReport warmup_report(const LiftedState& st, const StateScalars& sc, const ProblemSpec& spec) {
  const double t = st.t;
  const double y = spec.normY;
  const double sy = std::sqrt(y);
  const double delta = spec.monitor_delta();
  const double alpha = spec.alpha;
  InvariantReport rep;
  rep.t = t;
  rep.add("norm_W", sc.norm_W, 1.5 * sy);
  rep.add("imbalance", sc.norm_imbalance, (1.0 + 5.0 * t / spec.T2) * delta * delta * y);
  rep.add("PAJW", sc.norm_PAJW, delta / (3.0 * alpha) * sy);
  rep.add("PNW", sc.norm_PNW, delta * std::sqrt(8.0 * y));
  rep.add("lambda1_PPX", sc.lambda1_PPX, 2.0 * delta * y);
  rep.add("F", sc.norm_F, alpha * alpha);
  rep.add("Wtilde", sc.norm_Wtilde, spec.epsilon * std::exp(3.0 * alpha * delta * y * t));
  const double growth = spec.epsilon / (alpha * alpha) * std::exp(2.0 * spec.Yrr * t / 5.0);
  rep.add("sigma_r_A", sc.sigma_r_A, std::min(std::sqrt(spec.Yrr), growth), BoundKind::lower);
  return rep;
}

InvariantReport local_report(const LiftedState& st, const ProblemSpec& spec) {
  return local_report(st, state_scalars(st, spec), spec);
}

InvariantReport local_report(const LiftedState& st, const StateScalars& sc, const ProblemSpec& spec) {
  const PhaseBounds b = phase_bounds(spec, st.t);
  InvariantReport rep;
  rep.t = st.t;
  rep.add("R", sc.norm_R, b.MR_t);
  rep.add("PNWQ", sc.norm_PNWQ, 0.4 * b.MR_t / std::sqrt(spec.normY));
  rep.note("MR_t", b.MR_t);
  rep.note("MR_inf", b.MR_inf);
  rep.note("MR_inf_beta4", mr_inf(spec, spec.beta4));
  return rep;
}

unsigned pass_bitmask(const InvariantReport& rep) {
  unsigned mask = 0;
  for (std::size_t i = 0; i < rep.items.size(); ++i) {
    if (rep.items[i].pass) mask |= 1u << i;
  }
  return mask;
}

double beta_run(const ProblemSpec& spec) {
  return std::max(20.0 * spec.normY * spec.eta, 4.0 * std::sqrt(static_cast<double>(spec.r)) * spec.rho_target);
}

InvariantReport e_bound_report(const StepFlow& flow, double s, const ProblemSpec& spec) {
  InvariantReport rep = e_bound_report(flow.record(), op_norm(flow.perturbation(s, spec)), spec);
  rep.t = flow.time(s);
  return rep;
}

InvariantReport e_bound_report(const StepRecord& rec, double norm_e, const ProblemSpec& spec) {
  InvariantReport rep;
  rep.t = static_cast<double>(rec.k) * rec.eta;
  const double beta = beta_run(spec);
  const double norm_wk = op_norm(rec.W_before);
  const double s_r1 = sigma_r1(rec.W_before, spec.r);
  const bool applicable =
      beta <= 0.25 && norm_wk <= 1.5 * std::sqrt(spec.normY) && s_r1 * s_r1 <= spec.normY / spec.gamma;
  rep.note("beta_run", beta);
  rep.note("applicable", applicable ? 1.0 : 0.0);
  rep.note("norm_E", norm_e);

  const double bound = beta * (op_norm(rec.R_k) + spec.gamma * s_r1 * s_r1);
  if (applicable) {
    rep.add("thm_E", norm_e, bound);
  } else {
    rep.add_inactive("thm_E", norm_e, bound);
  }
  const double delta = spec.monitor_delta();
  const double b2 = delta * delta / spec.T2;
  if (applicable && beta <= spec.beta4) {
    rep.add("E_trajectory", norm_e, b2);
  } else {
    rep.add_inactive("E_trajectory", norm_e, b2);
  }
  return rep;
}

InvariantReport assumption_report(const ProblemSpec& spec, std::size_t op_count) {
  InvariantReport rep;
  const double d2 = spec.delta * spec.delta;
  const double y = spec.normY;
  const double rho_max = d2 / (16.0 * std::sqrt(static_cast<double>(spec.r)) * spec.T2 * y);
  const double eta_max = d2 / (80.0 * spec.T2 * y * y);
  rep.add("rho_target", spec.rho_target, rho_max);
  rep.add("eta", spec.eta, eta_max);
  rep.add("delta_cap", spec.delta, 1.0 / (64.0 * spec.alpha * spec.kappa));
  rep.note("rho_max", rho_max);
  rep.note("eta_max", eta_max);
  rep.note("steps_at_eta_max", std::ceil(spec.T2 / eta_max));
  rep.note("steps_at_eta", std::ceil(spec.T2 / spec.eta));
  const double lg = std::log(spec.Yrr / (spec.epsilon * spec.epsilon));
  rep.note("steps_reference", std::pow(spec.kappa, 4) * lg * lg);
  rep.note("N", static_cast<double>(op_count));
  return rep;
}

InvariantReport final_error_report(const LiftedState& st, const ProblemSpec& spec) {
  InvariantReport rep;
  rep.t = st.t;
  const Matrix u = st.U(spec.m);
  const Matrix v = st.V(spec.m);
  const double err = op_norm(spec.Y - times_transpose(u, v));
  const double eps2 = spec.epsilon * spec.epsilon;
  const double expo = 32.0 * spec.alpha * spec.kappa * spec.delta;
  const double thm = 64.0 * eps2 * (spec.delta * spec.delta * spec.gamma * spec.kappa + std::sqrt(spec.kappa)) *
                     std::pow(spec.Yrr / eps2, expo);
  rep.add("end_time_bound", err, thm);
  rep.add("MR_inf", err, mr_inf(spec, spec.beta20));
  rep.add("exponent", expo, 0.5);
  rep.note("final_error", err);
  rep.note("thm_bound", thm);
  rep.note("MR_inf", mr_inf(spec, spec.beta20));
  rep.note("MR_inf_beta4", mr_inf(spec, spec.beta4));
  return rep;
}

InvariantReport identity_suite(const LiftedState& st, const ProblemSpec& spec) {
  const Lifting& L = spec.lift;
  InvariantReport rep;
  rep.t = st.t;
  const auto tol = [](double scale) { return 1e-10 * std::max(1.0, scale); };
  const auto eq = [&](const char* id, double residual, double scale) {
    rep.add_with_slack(id, residual, tol(scale), BoundKind::upper, 0.0);
  };

  const double wf = frobenius_norm(st.W);
  const double norm_r = op_norm(st.R);
  const double norm_w = op_norm(st.W);
  const double y = spec.normY;
  const Matrix u = st.U(spec.m);
  const Matrix v = st.V(spec.m);

  eq("dilation_norm", std::abs(op_norm(L.Yhat) - y), y);
  eq("JRJ", frobenius_norm(L.J * st.R * L.J + st.R), frobenius_norm(st.R));
  eq("lambda1_R", std::abs(lambda_max(st.R) - norm_r), norm_r);
  eq("R_residual", std::abs(norm_r - op_norm(spec.Y - times_transpose(u, v))), norm_r);
  const double r_cap = y + 0.5 * norm_w * norm_w;
  rep.add_with_slack("R_upper", norm_r, r_cap, BoundKind::upper, tol(r_cap));
  if (L.PN.rows() > 0) {
    const Matrix pnx = L.PN * st.X;
    eq("PNJX", std::abs(op_norm(pnx * L.J) - op_norm(pnx)), op_norm(pnx));
    eq("PN_Yhat", frobenius_norm(L.PN * L.Yhat), y);
  }
  eq("PP_Wtilde", frobenius_norm(transpose_times(L.PP, L.PP * st.Wtilde) - st.Wtilde), wf);
  eq("PA_Wtilde", frobenius_norm(L.PA * st.Wtilde), wf);
  const Matrix wwt = times_transpose(st.W, st.W);
  const Matrix split = st.W * times_transpose(st.Q, st.W) + times_transpose(st.Wtilde, st.Wtilde);
  eq("WWt_split", frobenius_norm(wwt - split), wf * wf);
  const Matrix wad = st.W * st.Adag;
  eq("WAdag", frobenius_norm(wad - L.PA.transpose() - transpose_times(L.PP, st.F)), wf * frobenius_norm(st.Adag));
  const double s_r1 = sigma_r1(st.W, spec.r);
  const double wt = op_norm(st.Wtilde);
  rep.add_with_slack("sigma_r1_W", s_r1, wt, BoundKind::upper, tol(norm_w));
  const double pa = frobenius_norm(st.A);
  const double pn = frobenius_norm(L.PN * st.W);
  const double paj = frobenius_norm(L.PA * apply_J(st.W, spec.m));
  eq("pythagoras", std::abs(wf * wf - pa * pa - pn * pn - paj * paj), wf * wf);
  const SymEig pyp = sym_eig(symmetrize(L.PA * times_transpose(L.Yhat, L.PA)));
  eq("PA_Yhat_PA", std::abs(pyp.values.back() - spec.Yrr), y);
  eq("Q_idempotent", frobenius_norm(st.Q * st.Q - st.Q), 1.0);
  eq("Q_symmetric", frobenius_norm(st.Q - st.Q.transpose()), 1.0);
  eq("Wtilde_Q", frobenius_norm(st.Wtilde * st.Q), wf);
  return rep;
}

InvariantReport derivative_sign_suite(const LiftedState& st, const Matrix& e, const ProblemSpec& spec, Phase phase) {
  const Lifting& L = spec.lift;
  const StateScalars sc = state_scalars(st, spec);
  const FlowTangent tan = flow_tangent(st, e, spec);
  const double y = spec.normY;
  const double rate = 2.0 * spec.Yrr / 5.0;
  const double delta = spec.monitor_delta();
  InvariantReport rep;
  rep.t = st.t;

  // Derivative of the top singular value of x along x_dot; 0 for a zero x.
  const auto top_rate = [](const Matrix& x, const Matrix& x_dot) {
    if (x.empty() || max_abs(x) == 0.0) return 0.0;
    const SingularPair p = top_singular_pair(x);
    return dot(p.u, x_dot * p.v);
  };
  // An upper-bounded quantity near its cap must have derivative below `limit`.
  const auto upper = [&](const char* id, double value, double cap, double deriv, double limit) {
    const bool near = value >= (1.0 - kActivation) * cap;
    if (near && value > 0.0) {
      rep.add_with_slack(id, deriv, limit, BoundKind::upper, 0.0);
      // Strict inequality.
      if (!(deriv < limit)) rep.items.back().pass = false;
    } else {
      rep.add_inactive(id, deriv, limit);
    }
  };

  if (phase == Phase::warmup) {
    const Matrix jw_dot = apply_J(tan.W_dot, spec.m);
    upper("d_norm_W", sc.norm_W, 1.5 * std::sqrt(y), top_rate(st.W, tan.W_dot), 0.0);
    const double imb_cap = (1.0 + 5.0 * st.t / spec.T2) * delta * delta * y;
    const double imb_rate = 5.0 * delta * delta * y / spec.T2;
    upper("d_imbalance", sc.norm_imbalance, imb_cap, op_norm(tan.imbalance_dot), imb_rate);
    upper("d_PAJW", sc.norm_PAJW, delta / (3.0 * spec.alpha) * std::sqrt(y),
          top_rate(L.PA * apply_J(st.W, spec.m), L.PA * jw_dot), 0.0);
    upper("d_PNW", sc.norm_PNW, delta * std::sqrt(8.0 * y), top_rate(L.PN * st.W, L.PN * tan.W_dot), 0.0);
    {
      const double cap = 2.0 * delta * y;
      double deriv = 0.0;
      if (sc.lambda1_PPX >= (1.0 - kActivation) * cap) {
        const Vector v = sym_eig(symmetrize(L.PP * times_transpose(st.X, L.PP))).vectors.col(0);
        deriv = dot(v, L.PP * times_transpose(tan.X_dot, L.PP) * v);
      }
      upper("d_lambda1_PPX", sc.lambda1_PPX, cap, deriv, 0.0);
    }
    upper("d_F", sc.norm_F, spec.alpha * spec.alpha, top_rate(st.F, tan.F_dot), 0.0);
    upper("d_Wtilde", sc.norm_Wtilde, spec.epsilon * std::exp(3.0 * spec.alpha * delta * y * st.t),
          top_rate(st.Wtilde, tan.Wtilde_dot), 3.0 * spec.alpha * delta * y * sc.norm_Wtilde);

    const double growth = spec.epsilon / (spec.alpha * spec.alpha) * std::exp(rate * st.t);
    const double floor = std::min(std::sqrt(spec.Yrr), growth);
    const double limit = rate * sc.sigma_r_A;
    const bool near = sc.sigma_r_A <= (1.0 + kActivation) * floor && sc.sigma_r_A > 0.0 &&
                      sc.sigma_r_A <= std::sqrt(spec.Yrr);
    if (near) {
      const SingularPair p = bottom_singular_pair(st.A);
      const double deriv = dot(p.u, tan.A_dot * p.v);
      rep.add_with_slack("d_sigma_r_A", deriv, limit, BoundKind::lower, 0.0);
      if (!(deriv > limit)) rep.items.back().pass = false;
    } else {
      rep.add_inactive("d_sigma_r_A", 0.0, limit, BoundKind::lower);
    }
  } else {
    const PhaseBounds b = phase_bounds(spec, st.t);
    double dr = 0.0;
    if (sc.norm_R >= (1.0 - kActivation) * b.MR_t && sc.norm_R > 0.0) {
      const Vector v = sym_eig(st.R).vectors.col(0);
      dr = dot(v, tan.R_dot * v);
    }
    upper("d_R", sc.norm_R, b.MR_t, dr, -rate * sc.norm_R);
    const Matrix pnwq = L.PN.rows() > 0 ? L.PN * st.W * st.Q : Matrix();
    const Matrix pnwq_dot = L.PN.rows() > 0 ? L.PN * (tan.W_dot - tan.Wtilde_dot) : Matrix();
    upper("d_PNWQ", sc.norm_PNWQ, 0.4 * b.MR_t / std::sqrt(y), top_rate(pnwq, pnwq_dot), -rate * sc.norm_PNWQ);
  }
  return rep;
}

double minimal_delta_eff(const LiftedState& st0, const ProblemSpec& spec) {
  const StateScalars sc = state_scalars(st0, spec);
  const double y = spec.normY;
  double d = 0.0;
  d = std::max(d, std::sqrt(sc.norm_imbalance / y));
  d = std::max(d, 3.0 * spec.alpha * sc.norm_PAJW / std::sqrt(y));
  d = std::max(d, sc.norm_PNW / std::sqrt(8.0 * y));
  d = std::max(d, sc.lambda1_PPX / (2.0 * y));
  return std::max(d, std::numeric_limits<double>::min());
}

}  // namespace msense
