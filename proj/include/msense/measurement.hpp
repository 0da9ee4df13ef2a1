#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "msense/matrix.hpp"

namespace msense {

enum class OpKind { identity, gaussian };

std::string to_string(OpKind kind);
OpKind op_kind_from_string(const std::string& s);

/// Linear measurement operator from m x n matrices to R^N.
///
/// Gaussian operators hold N dense measurement matrices with i.i.d.
/// Normal(0, 1/N) entries, so E|A(X)|^2 = |X|_F^2. The identity operator is
/// plain row-major vectorization and stores nothing.
class MeasOp {
 public:
  std::size_t m() const { return m_; }
  std::size_t n() const { return n_; }
  std::size_t count() const { return count_; }
  OpKind kind() const { return kind_; }
  std::uint64_t seed() const { return seed_; }
  const std::vector<Matrix>& mats() const { return mats_; }

  friend MeasOp gaussian_operator(std::size_t m, std::size_t n, std::size_t count, std::uint64_t seed);
  friend MeasOp identity_operator(std::size_t m, std::size_t n);
  /// Builds an operator from explicit measurement matrices (kind = gaussian,
  /// seed = 0). Used for hand-constructed operators in tests.
  friend MeasOp custom_operator(std::vector<Matrix> mats);

 private:
  std::size_t m_ = 0;
  std::size_t n_ = 0;
  std::size_t count_ = 0;
  OpKind kind_ = OpKind::identity;
  std::uint64_t seed_ = 0;
  std::vector<Matrix> mats_;
};

MeasOp gaussian_operator(std::size_t m, std::size_t n, std::size_t count, std::uint64_t seed);
MeasOp identity_operator(std::size_t m, std::size_t n);
MeasOp custom_operator(std::vector<Matrix> mats);

/// Component i is <mats[i], X>_F.
Vector apply(const MeasOp& op, const Matrix& x);
/// sum_i y_i mats[i].
Matrix adjoint(const MeasOp& op, std::span<const double> y);
/// (A*A)(X)
Matrix normal_map(const MeasOp& op, const Matrix& x);

/// E^A = (A*A - I)(Y - U V^T).
Matrix measurement_error(const MeasOp& op, const Matrix& y, const Matrix& u, const Matrix& v);

struct RipEstimate {
  double rho_hat = 0.0;
  std::size_t trials = 0;
  std::size_t probe_rank = 0;
  std::uint64_t seed = 0;
};

/// Largest |‖A(X)‖² / ‖X‖_F² − 1| over `trials` random rank-`probe_rank`
/// probes X = G1 G2^T (Gaussian factors, Frobenius-normalized).
///
/// This only falsifies a claimed RIP constant; it never certifies one.
/// The probe stream depends only on `seed`, so the estimate is a running
/// maximum in `trials`.
RipEstimate estimate_rip(const MeasOp& op, std::size_t probe_rank, std::size_t trials, std::uint64_t seed);

/// ‖(A*A)(X) − X‖ in operator norm, for X of rank at most r.
/// Throws RankTooHigh if sigma_{r+1}(X) > 1e-8 sigma_1(X).
double rip_deviation(const MeasOp& op, const Matrix& x, std::size_t r);

/// 2 sqrt(r) rho (‖R‖ + (min(m,n)/(2r) + 1) sigma_{r+1}(W)^2)
double ea_bound(double norm_r, double sigma_r1_w_sq, std::size_t r, double rho, std::size_t m, std::size_t n);

/// Portable header {m, n, N, kind, seed}; Gaussian matrices are regenerated
/// from the seed on load.
std::string op_to_json(const MeasOp& op);
MeasOp op_from_json(const std::string& text);

}  // namespace msense
