#pragma once

#include <cstddef>

#include "msense/dynamics.hpp"
#include "msense/lifted.hpp"
#include "msense/report.hpp"

namespace msense {

/// Scalars monitored along a trajectory, one per trajectory CSV column.
struct StateScalars {
  double norm_W = 0.0;
  double norm_R = 0.0;
  double norm_imbalance = 0.0;
  double norm_PAJW = 0.0;
  double norm_PNW = 0.0;
  double lambda1_PPX = 0.0;
  double norm_F = 0.0;
  double norm_Wtilde = 0.0;
  double sigma_r_A = 0.0;
  double sigma_r1_W = 0.0;
  double norm_PNWQ = 0.0;
};

StateScalars state_scalars(const LiftedState& st, const ProblemSpec& spec);

struct PhaseBounds {
  double MR_t = 0.0;
  double MR_inf = 0.0;
};

/// 64 (beta gamma |Y| / Y_rr + sqrt(|Y| / Y_rr)) eps^2 exp(6 alpha delta |Y| T2)
/// with the monitoring delta.
double mr_inf(const ProblemSpec& spec, double beta);
/// MR_t = max(3 |Y| exp(-(2 Y_rr / 5)(t - T1)), MR_inf), using beta20.
PhaseBounds phase_bounds(const ProblemSpec& spec, double t);

/// Eight warm-up items, in order (bit i of the pass mask is item i + 1):
/// norm_W, imbalance, PAJW, PNW, lambda1_PPX, F, Wtilde, sigma_r_A.
InvariantReport warmup_report(const LiftedState& st, const ProblemSpec& spec);
InvariantReport warmup_report(const LiftedState& st, const StateScalars& sc, const ProblemSpec& spec);

/// Local-phase items R and PNWQ against MR_t.
InvariantReport local_report(const LiftedState& st, const ProblemSpec& spec);
InvariantReport local_report(const LiftedState& st, const StateScalars& sc, const ProblemSpec& spec);

/// Bit i set when item i passes.
unsigned pass_bitmask(const InvariantReport& rep);

/// Smallest beta for which the step-size and RIP hypotheses of the E bound
/// hold: max(20 |Y| eta, 4 sqrt(r) rho_target).
double beta_run(const ProblemSpec& spec);

/// E bound check at flow time (k + s) eta. When the hypotheses on eta, rho,
/// |W_k| and sigma_{r+1}(W_k) hold, asserts |E| <= beta (|R_k| + gamma
/// sigma_{r+1}(W_k)^2); the delta^2 / T2 item is asserted only when
/// additionally beta_run <= beta4. Inapplicable items are inactive.
InvariantReport e_bound_report(const StepFlow& flow, double s, const ProblemSpec& spec);
/// Same, with |E| already measured.
InvariantReport e_bound_report(const StepRecord& rec, double norm_e, const ProblemSpec& spec);

/// Step-size and RIP requirements for end time T2, with the theorem delta.
InvariantReport assumption_report(const ProblemSpec& spec, std::size_t op_count);

/// |Y - U V^T| against the end-time bound and MR_inf.
InvariantReport final_error_report(const LiftedState& st, const ProblemSpec& spec);

/// Unconditional algebraic identities and projection facts. Each item's
/// bound already is its tolerance, 1e-10 max(1, scale).
InvariantReport identity_suite(const LiftedState& st, const ProblemSpec& spec);

enum class Phase { warmup, local };

/// Strict derivative inequalities for quantities within 1% of their
/// boundary. Items away from the boundary are inactive.
InvariantReport derivative_sign_suite(const LiftedState& st, const Matrix& e, const ProblemSpec& spec, Phase phase);

/// Smallest monitoring delta for which every delta-dependent warm-up item
/// passes at t = 0 (imbalance, PAJW, PNW, lambda1_PPX).
double minimal_delta_eff(const LiftedState& st0, const ProblemSpec& spec);

}  // namespace msense
