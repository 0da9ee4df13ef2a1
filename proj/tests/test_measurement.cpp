#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "msense/errors.hpp"
#include "msense/linalg.hpp"
#include "msense/measurement.hpp"

using namespace msense;
using msense::testing::random_matrix;
using msense::testing::random_vector;

TEST_CASE("gaussian operator is deterministic in its seed") {
  const MeasOp a = gaussian_operator(2, 2, 4, 7);
  const MeasOp b = gaussian_operator(2, 2, 4, 7);
  const MeasOp c = gaussian_operator(2, 2, 4, 8);
  REQUIRE(a.mats().size() == 4);
  for (std::size_t i = 0; i < 4; ++i) CHECK(a.mats()[i] == b.mats()[i]);
  CHECK_FALSE(a.mats()[0] == c.mats()[0]);
  CHECK_THROWS_AS(gaussian_operator(0, 2, 4, 1), DimensionError);
}

TEST_CASE("gaussian operator is unbiased on average") {
  SplitMix64 rng(3);
  const Matrix x = random_matrix(4, 3, rng);
  const double fx = frobenius_norm(x);
  double mean = 0.0;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const Vector y = apply(gaussian_operator(4, 3, 8, seed), x);
    mean += dot(y, y) / (fx * fx);
  }
  mean /= 1000.0;
  CHECK(mean == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("a single gaussian measurement is far from an isometry") {
  int hits = 0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const MeasOp op = gaussian_operator(3, 3, 1, seed);
    if (estimate_rip(op, 1, 50, seed + 1000).rho_hat >= 0.5) ++hits;
  }
  CHECK(hits >= 198);
}

TEST_CASE("identity operator") {
  const MeasOp op = identity_operator(2, 2);
  const Matrix x = Matrix::from_rows({{1, 2}, {3, 4}});
  const Vector y = apply(op, x);
  CHECK(norm2(y) == doctest::Approx(frobenius_norm(x)));
  CHECK(adjoint(op, y) == x);
  CHECK(normal_map(op, x) == x);
  CHECK(estimate_rip(op, 1, 100, 5).rho_hat <= 1e-12);
  CHECK(estimate_rip(op, 2, 100, 5).rho_hat <= 1e-12);
  CHECK(op.mats().empty());
  CHECK(op.count() == 4);
}

TEST_CASE("apply and adjoint basics") {
  const MeasOp op = gaussian_operator(3, 2, 5, 9);
  CHECK(norm2(apply(op, Matrix(3, 2))) == 0.0);
  CHECK(max_abs(adjoint(op, Vector(5, 0.0))) == 0.0);
  CHECK_THROWS_AS(apply(op, Matrix(2, 3)), ShapeMismatch);
  CHECK_THROWS_AS(adjoint(op, Vector(4, 0.0)), ShapeMismatch);

  Matrix e11(2, 2);
  e11(0, 0) = 1.0;
  const MeasOp single = custom_operator({e11});
  const Matrix x = Matrix::from_rows({{5, 6}, {7, 8}});
  CHECK(apply(single, x) == Vector{5.0});
}

TEST_CASE("apply is linear") {
  SplitMix64 rng(4);
  const MeasOp op = gaussian_operator(4, 5, 30, 10);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix x = random_matrix(4, 5, rng);
    const Matrix z = random_matrix(4, 5, rng);
    const double a = rng.normal();
    const double b = rng.normal();
    const Vector lhs = apply(op, a * x + b * z);
    const Vector ax = apply(op, x);
    const Vector az = apply(op, z);
    for (std::size_t i = 0; i < lhs.size(); ++i) CHECK(std::abs(lhs[i] - (a * ax[i] + b * az[i])) <= 1e-12 * (1 + std::abs(lhs[i])));
  }
}

TEST_CASE("adjoint identity for both kinds") {
  SplitMix64 rng(5);
  for (const MeasOp& op : {gaussian_operator(5, 4, 40, 1), identity_operator(5, 4)}) {
    for (int trial = 0; trial < 100; ++trial) {
      const Matrix x = random_matrix(5, 4, rng);
      const Vector y = random_vector(op.count(), rng);
      const double lhs = dot(apply(op, x), y);
      const double rhs = frobenius_inner(x, adjoint(op, y));
      CHECK(std::abs(lhs - rhs) <= 1e-10 * frobenius_norm(x) * norm2(y));
      CHECK(frobenius_inner(x, normal_map(op, x)) >= 0.0);
    }
  }
}

TEST_CASE("measurement error") {
  SplitMix64 rng(6);
  const Matrix y = random_matrix(4, 3, rng);
  const Matrix u = random_matrix(4, 2, rng);
  const Matrix v = random_matrix(3, 2, rng);
  CHECK(max_abs(measurement_error(identity_operator(4, 3), y, u, v)) == 0.0);

  const MeasOp op = gaussian_operator(4, 3, 25, 2);
  // Exact fit: zero residual and zero error.
  CHECK(max_abs(measurement_error(op, times_transpose(u, v), u, v)) == 0.0);

  // Direct sum oracle.
  const Matrix z = y - times_transpose(u, v);
  Matrix direct(4, 3);
  for (const Matrix& a : op.mats()) direct += frobenius_inner(a, z) * a;
  direct -= z;
  CHECK(frobenius_norm(measurement_error(op, y, u, v) - direct) <= 1e-12 * std::max(1.0, frobenius_norm(direct)));
  CHECK_THROWS_AS(measurement_error(op, y, u, random_matrix(3, 1, rng)), ShapeMismatch);
}

TEST_CASE("estimate_rip is a running maximum") {
  const MeasOp op = gaussian_operator(6, 6, 40, 3);
  double prev = 0.0;
  for (std::size_t trials : {0u, 1u, 5u, 20u, 80u}) {
    const RipEstimate est = estimate_rip(op, 2, trials, 77);
    CHECK(est.rho_hat >= prev);
    CHECK(est.rho_hat >= 0.0);
    prev = est.rho_hat;
  }
  CHECK(estimate_rip(op, 2, 0, 77).rho_hat == 0.0);
  CHECK_THROWS_AS(estimate_rip(op, 7, 10, 1), DimensionError);
}

TEST_CASE("rip_deviation") {
  SplitMix64 rng(7);
  const MeasOp id = identity_operator(5, 5);
  const Matrix x = times_transpose(random_matrix(5, 2, rng), random_matrix(5, 2, rng));
  CHECK(rip_deviation(id, x, 2) == 0.0);
  CHECK(rip_deviation(gaussian_operator(5, 5, 30, 1), Matrix(5, 5), 2) == 0.0);
  CHECK_THROWS_AS(rip_deviation(id, random_matrix(5, 5, rng), 2), RankTooHigh);

  const MeasOp op = gaussian_operator(5, 5, 60, 4);
  const Matrix u = random_matrix(5, 1, rng);
  const Matrix v = random_matrix(5, 1, rng);
  const Matrix y = x + times_transpose(u, v);
  // Y - U V^T = X, so the two computations coincide.
  const double via_error = op_norm(measurement_error(op, y, u, v));
  CHECK(rip_deviation(op, x, 2) == doctest::Approx(via_error).epsilon(1e-10));
}

TEST_CASE("ea_bound arithmetic") {
  CHECK(ea_bound(1.0, 0.5, 2, 0.0, 4, 4) == 0.0);
  CHECK(ea_bound(1.0, 0.0, 1, 0.1, 2, 2) == doctest::Approx(0.2));
  // 2 sqrt(2) 0.1 (1 + (3/4 + 1) 2)
  CHECK(ea_bound(1.0, 2.0, 2, 0.1, 3, 5) == doctest::Approx(2 * std::sqrt(2.0) * 0.1 * 4.5));
}

TEST_CASE("operator json roundtrip regenerates matrices") {
  const MeasOp op = gaussian_operator(3, 4, 7, 123);
  const MeasOp back = op_from_json(op_to_json(op));
  CHECK(back.kind() == OpKind::gaussian);
  CHECK(back.count() == 7);
  CHECK(back.seed() == 123);
  for (std::size_t i = 0; i < 7; ++i) CHECK(back.mats()[i] == op.mats()[i]);
  const MeasOp id = op_from_json(op_to_json(identity_operator(2, 3)));
  CHECK(id.kind() == OpKind::identity);
  CHECK(id.m() == 2);
  CHECK(id.n() == 3);
  CHECK_THROWS_AS(op_kind_from_string("fourier"), ConfigError);
}
