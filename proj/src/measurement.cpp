#include "msense/measurement.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"

#include "msense/errors.hpp"
#include "msense/linalg.hpp"
#include "msense/rng.hpp"

namespace msense {

std::string to_string(OpKind kind) { return kind == OpKind::identity ? "identity" : "gaussian"; }

OpKind op_kind_from_string(const std::string& s) {
  if (s == "identity") return OpKind::identity;
  if (s == "gaussian") return OpKind::gaussian;
  throw ConfigError("unknown operator kind '" + s + "' (expected identity or gaussian)");
}

MeasOp gaussian_operator(std::size_t m, std::size_t n, std::size_t count, std::uint64_t seed) {
  if (m == 0 || n == 0 || count == 0) throw DimensionError("gaussian_operator: m, n, N must be >= 1");
  MeasOp op;
  op.m_ = m;
  op.n_ = n;
  op.count_ = count;
  op.kind_ = OpKind::gaussian;
  op.seed_ = seed;
  SplitMix64 rng(seed);
  const double stddev = 1.0 / std::sqrt(static_cast<double>(count));
  op.mats_.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Matrix a(m, n);
    for (double& x : a.data()) x = stddev * rng.normal();
    op.mats_.push_back(std::move(a));
  }
  return op;
}

MeasOp identity_operator(std::size_t m, std::size_t n) {
  if (m == 0 || n == 0) throw DimensionError("identity_operator: m, n must be >= 1");
  MeasOp op;
  op.m_ = m;
  op.n_ = n;
  op.count_ = m * n;
  op.kind_ = OpKind::identity;
  return op;
}

MeasOp custom_operator(std::vector<Matrix> mats) {
  if (mats.empty()) throw DimensionError("custom_operator: need at least one measurement");
  MeasOp op;
  op.m_ = mats.front().rows();
  op.n_ = mats.front().cols();
  for (const Matrix& a : mats) {
    if (a.rows() != op.m_ || a.cols() != op.n_) throw ShapeMismatch("custom_operator: ragged measurement matrices");
  }
  op.count_ = mats.size();
  op.kind_ = OpKind::gaussian;
  op.mats_ = std::move(mats);
  return op;
}

Vector apply(const MeasOp& op, const Matrix& x) {
  if (x.rows() != op.m() || x.cols() != op.n()) throw ShapeMismatch("apply: operand shape does not match operator");
  if (op.kind() == OpKind::identity) return x.entries();
  Vector y(op.count());
  for (std::size_t i = 0; i < op.count(); ++i) y[i] = frobenius_inner(op.mats()[i], x);
  return y;
}

Matrix adjoint(const MeasOp& op, std::span<const double> y) {
  if (y.size() != op.count()) throw ShapeMismatch("adjoint: vector length does not match operator");
  if (op.kind() == OpKind::identity) return Matrix(op.m(), op.n(), Vector(y.begin(), y.end()));
  Matrix out(op.m(), op.n());
  auto acc = out.data();
  for (std::size_t i = 0; i < op.count(); ++i) {
    const double yi = y[i];
    const auto& a = op.mats()[i].entries();
    for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += yi * a[k];
  }
  return out;
}

Matrix normal_map(const MeasOp& op, const Matrix& x) {
  if (op.kind() == OpKind::identity) {
    if (x.rows() != op.m() || x.cols() != op.n()) throw ShapeMismatch("normal_map: operand shape does not match operator");
    return x;
  }
  return adjoint(op, apply(op, x));
}

Matrix measurement_error(const MeasOp& op, const Matrix& y, const Matrix& u, const Matrix& v) {
  if (u.cols() != v.cols()) throw ShapeMismatch("measurement_error: U and V need the same width");
  const Matrix residual = y - times_transpose(u, v);
  if (op.kind() == OpKind::identity) {
    if (residual.rows() != op.m() || residual.cols() != op.n()) throw ShapeMismatch("measurement_error: shape");
    return Matrix(op.m(), op.n());
  }
  return normal_map(op, residual) - residual;
}

RipEstimate estimate_rip(const MeasOp& op, std::size_t probe_rank, std::size_t trials, std::uint64_t seed) {
  if (probe_rank == 0 || probe_rank > std::min(op.m(), op.n())) {
    throw DimensionError("estimate_rip: probe_rank must lie in [1, min(m, n)]");
  }
  RipEstimate est{0.0, trials, probe_rank, seed};
  SplitMix64 rng(seed);
  for (std::size_t t = 0; t < trials; ++t) {
    Matrix g1(op.m(), probe_rank);
    Matrix g2(op.n(), probe_rank);
    for (double& x : g1.data()) x = rng.normal();
    for (double& x : g2.data()) x = rng.normal();
    Matrix probe = times_transpose(g1, g2);
    probe *= 1.0 / frobenius_norm(probe);
    const Vector y = apply(op, probe);
    est.rho_hat = std::max(est.rho_hat, std::abs(dot(y, y) - 1.0));
  }
  return est;
}

double rip_deviation(const MeasOp& op, const Matrix& x, std::size_t r) {
  const Vector sigma = singular_values(x);
  if (r < sigma.size() && sigma.front() > 0.0 && sigma[r] > 1e-8 * sigma.front()) {
    throw RankTooHigh(sigma[r], sigma.front());
  }
  return op_norm(normal_map(op, x) - x);
}

double ea_bound(double norm_r, double sigma_r1_w_sq, std::size_t r, double rho, std::size_t m, std::size_t n) {
  const double rr = static_cast<double>(r);
  const double mn = static_cast<double>(std::min(m, n));
  return 2.0 * std::sqrt(rr) * rho * (norm_r + (mn / (2.0 * rr) + 1.0) * sigma_r1_w_sq);
}

std::string op_to_json(const MeasOp& op) {
  nlohmann::ordered_json j;
  j["m"] = op.m();
  j["n"] = op.n();
  j["N"] = op.count();
  j["kind"] = to_string(op.kind());
  j["seed"] = op.seed();
  return j.dump();
}

MeasOp op_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  const auto kind = op_kind_from_string(j.at("kind").get<std::string>());
  const auto m = j.at("m").get<std::size_t>();
  const auto n = j.at("n").get<std::size_t>();
  if (kind == OpKind::identity) return identity_operator(m, n);
  return gaussian_operator(m, n, j.at("N").get<std::size_t>(), j.at("seed").get<std::uint64_t>());
}

}  // namespace msense
