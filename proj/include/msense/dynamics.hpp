#pragma once

#include <cstddef>
#include <utility>

#include "msense/lifted.hpp"
#include "msense/linalg.hpp"
#include "msense/measurement.hpp"

namespace msense {

/// One gradient-descent step in lifted form, W_after = (I + eta Rtilde) W_before.
struct StepRecord {
  std::size_t k = 0;
  double eta = 0.0;
  Matrix W_before;
  Matrix W_after;
  Matrix R_k;
  Matrix EA_hat;  ///< dilation of the measurement error
  Matrix Rtilde;  ///< R_k + EA_hat
};

/// The step guard: eta |Rtilde| <= 2/3.
inline constexpr double kStepGuard = 2.0 / 3.0;

/// U' = U + eta G V, V' = V + eta G^T U with G = (A*A)(Y - U V^T).
std::pair<Matrix, Matrix> gd_step_factored(const Matrix& u, const Matrix& v, const MeasOp& op, const Matrix& y,
                                           double eta);

/// Throws StepTooLarge when the guard fails.
StepRecord gd_step_lifted(const Matrix& w, std::size_t k, const MeasOp& op, const ProblemSpec& spec);

/// Exact flow between grid points k eta and (k+1) eta:
/// W_{(k+s) eta} = (I + eta Rtilde)^s W_before for s in [0, 1].
///
/// Holds the eigendecomposition of I + eta Rtilde so that repeated
/// evaluations within one step share it.
class StepFlow {
 public:
  explicit StepFlow(StepRecord rec);

  const StepRecord& record() const { return rec_; }
  double time(double s) const { return (static_cast<double>(rec_.k) + s) * rec_.eta; }

  /// (1/eta) ln(I + eta Rtilde)
  const Matrix& generator() const { return generator_; }
  Matrix interpolate(double s) const;
  /// E = generator - R(W_s), the right limit at grid points.
  Matrix perturbation(double s, const ProblemSpec& spec) const;
  /// dW/dt = generator * W_s = (R_t + E_t) W_s
  Matrix derivative_W(double s) const;

 private:
  StepRecord rec_;
  SymEig eig_;
  Matrix generator_;
};

Matrix flow_interpolate(const StepRecord& rec, double s);
Matrix perturbation_E(const StepRecord& rec, double s, const ProblemSpec& spec);
Matrix flow_derivative_W(const StepRecord& rec, double s, const ProblemSpec& spec);

/// Time derivatives of the derived quantities for dW/dt = (R + E) W.
struct FlowTangent {
  Matrix W_dot;
  Matrix A_dot;
  Matrix R_dot;
  Matrix X_dot;
  Matrix F_dot;
  Matrix Wtilde_dot;
  Matrix imbalance_dot;
};

/// Throws NotSymmetric for an asymmetric E and ShapeMismatch for a wrong size.
FlowTangent flow_tangent(const LiftedState& st, const Matrix& e, const ProblemSpec& spec);

/// (PP - F PA)(X + E)(PA^T + PP^T F) + PP Wt Wt^T [(X + E) PA^T (A A^T)^{-1} - PP^T F]
Matrix dF_dt(const LiftedState& st, const Matrix& e, const ProblemSpec& spec);

/// PP^T (PP - F PA)(X + E) Wt - Wt Wt^T [(X + E) PA^T Adag^T - W/2 + Wt]
Matrix dWtilde_dt(const LiftedState& st, const Matrix& e, const ProblemSpec& spec);

enum class PairTarget { Wtilde, R, F, PNWQ, A_bottom };

/// u^T (dX/dt) v for the top singular pair (u, v) of the chosen X, or the
/// bottom pair for A_bottom. For R, v is the top eigenvector and u = v.
/// Throws ZeroMatrix when the target vanishes.
double singular_pair_derivative(const LiftedState& st, const Matrix& e, const ProblemSpec& spec, PairTarget which);

}  // namespace msense
