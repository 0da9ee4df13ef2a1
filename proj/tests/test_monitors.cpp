#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "msense/linalg.hpp"
#include "msense/monitors.hpp"

using namespace msense;
using msense::testing::power_norm;
using msense::testing::random_matrix;

namespace {

// m = n = h = 12, r = 2, kappa = 2, Y_rr = 1.
ProblemSpec ref_spec(double eta, double epsilon = 1e-3, double rho = 0.0) {
  Vector d(12, 0.0);
  d[0] = 2.0;
  d[1] = 1.0;
  ProblemParams p;
  p.r = 2;
  p.h = 12;
  p.alpha = 1.0;
  p.delta = 1.0 / 128.0;
  p.epsilon = epsilon;
  p.eta = eta;
  p.rho_target = rho;
  return make_spec(Matrix::diagonal(d), p);
}

ProblemSpec rect_spec(std::size_t m, std::size_t n, std::size_t r, std::size_t h) {
  Vector d(std::min(m, n), 0.0);
  for (std::size_t i = 0; i < r; ++i) d[i] = 3.0 - static_cast<double>(i) / static_cast<double>(r);
  ProblemParams p;
  p.r = r;
  p.h = h;
  p.alpha = 2.0;
  p.delta = 1e-3;
  p.epsilon = 1e-4;
  p.eta = 1e-3;
  return make_spec(Matrix::diagonal(d, m, n), p);
}

}  // namespace

TEST_CASE("warm-up report at a compliant scaled-identity start") {
  const ProblemSpec spec = ref_spec(1e-2);
  const LiftedState st = derive(init_scaled_identity(spec), spec, 0.0);
  const InvariantReport rep = warmup_report(st, spec);
  REQUIRE(rep.items.size() == 8);
  CHECK(rep.all_pass());
  CHECK(pass_bitmask(rep) == 0xFFu);
  CHECK(rep.at("sigma_r_A").kind == BoundKind::lower);
  CHECK(rep.at("sigma_r_A").value == doctest::Approx(1e-3).epsilon(1e-12));
  CHECK(rep.at("PNW").value == doctest::Approx(1e-3).epsilon(1e-12));
}

TEST_CASE("warm-up item 1 violation has the expected margin") {
  const ProblemSpec spec = ref_spec(1e-2);
  SplitMix64 rng(3);
  Matrix w = random_matrix(24, 12, rng);
  w *= 2.0 * std::sqrt(spec.normY) / power_norm(w);
  const InvariantReport rep = warmup_report(derive(w, spec), spec);
  const ReportItem& item = rep.at("norm_W");
  CHECK_FALSE(item.pass);
  CHECK(item.margin == doctest::Approx(-0.5 * std::sqrt(spec.normY)).epsilon(1e-9));
  CHECK((pass_bitmask(rep) & 1u) == 0u);
  CHECK(rep.first_failure() == "norm_W");
}

TEST_CASE("phase bounds") {
  const ProblemSpec spec = ref_spec(1e-2);
  const double eps2 = 1e-6;
  const double ratio = spec.normY / spec.Yrr;
  const double oracle = 64.0 * (spec.beta20 * spec.gamma * ratio + std::sqrt(ratio)) * eps2 *
                        std::exp(6.0 * spec.alpha * spec.delta * spec.normY * spec.T2);
  CHECK(mr_inf(spec, spec.beta20) == doctest::Approx(oracle).epsilon(1e-13));
  CHECK(mr_inf(spec, spec.beta20) < mr_inf(spec, spec.beta4));

  const PhaseBounds at_t1 = phase_bounds(spec, spec.T1);
  CHECK(at_t1.MR_t == doctest::Approx(std::max(3.0 * spec.normY, at_t1.MR_inf)));
  double prev = at_t1.MR_t;
  for (int i = 1; i <= 200; ++i) {
    const double t = spec.T1 + (spec.T2 - spec.T1) * i / 200.0;
    const double cur = phase_bounds(spec, t).MR_t;
    CHECK(cur <= prev);
    prev = cur;
  }
  CHECK(phase_bounds(spec, 1e6).MR_t == at_t1.MR_inf);
}

TEST_CASE("local report at T1 for a small start") {
  const ProblemSpec spec = ref_spec(1e-2);
  const LiftedState st = derive(init_scaled_identity(spec), spec, spec.T1);
  const InvariantReport rep = local_report(st, spec);
  REQUIRE(rep.items.size() == 2);
  CHECK(rep.all_pass());
  CHECK(rep.at("R").value <= 17.0 / 8.0 * spec.normY);
  CHECK(rep.info_at("MR_t") == doctest::Approx(3.0 * spec.normY));
  CHECK(rep.info_at("MR_inf_beta4") > rep.info_at("MR_inf"));
}

TEST_CASE("E bound report") {
  const MeasOp op = identity_operator(12, 12);
  SUBCASE("applicable and satisfied for a tiny start") {
    const ProblemSpec spec = ref_spec(1e-3);
    CHECK(beta_run(spec) == doctest::Approx(20.0 * 2.0 * 1e-3));
    const StepFlow flow(gd_step_lifted(init_scaled_identity(spec), 0, op, spec));
    for (double s : {0.0, 0.25, 0.5, 0.75}) {
      const InvariantReport rep = e_bound_report(flow, s, spec);
      CHECK(rep.info_at("applicable") == 1.0);
      const ReportItem& thm = rep.at("thm_E");
      CHECK(thm.active);
      CHECK(thm.pass);
      // Taylor oracle for ln(I + eta R) / eta - R: |E| ~ eta |R|^2 / 2.
      const double norm_r = 2.0 - 0.5e-6;
      CHECK(thm.value == doctest::Approx(0.5 * 1e-3 * norm_r * norm_r).epsilon(5e-3));
      CHECK(thm.value < 0.05 * thm.bound);
      CHECK_FALSE(rep.at("E_trajectory").active);
    }
  }
  SUBCASE("large step is not applicable") {
    const ProblemSpec spec = ref_spec(1e-2);
    CHECK(beta_run(spec) == doctest::Approx(0.4));
    const StepFlow flow(gd_step_lifted(init_scaled_identity(spec), 0, op, spec));
    const InvariantReport rep = e_bound_report(flow, 0.5, spec);
    CHECK(rep.info_at("applicable") == 0.0);
    CHECK_FALSE(rep.at("thm_E").active);
    CHECK(rep.at("thm_E").pass);
    CHECK(rep.all_pass());
  }
  SUBCASE("rho dominates beta") {
    const ProblemSpec spec = ref_spec(1e-4, 1e-3, 0.05);
    CHECK(beta_run(spec) == doctest::Approx(4.0 * std::sqrt(2.0) * 0.05));
  }
}

TEST_CASE("assumption report") {
  const ProblemSpec base = ref_spec(1e-2);
  const double d2 = base.delta * base.delta;
  const double eta_max = d2 / (80.0 * base.T2 * base.normY * base.normY);

  const ProblemSpec compliant = ref_spec(0.5 * eta_max);
  const InvariantReport ok = assumption_report(compliant, 144);
  CHECK(ok.all_pass());
  CHECK(ok.info_at("eta_max") == doctest::Approx(eta_max).epsilon(1e-13));
  CHECK(ok.info_at("steps_at_eta_max") == std::ceil(base.T2 / eta_max));
  CHECK(ok.info_at("steps_at_eta_max") > 1e8);
  CHECK(ok.info_at("N") == 144.0);
  const double lg = std::log(1.0 / 1e-6);
  CHECK(ok.info_at("steps_reference") == doctest::Approx(16.0 * lg * lg));

  const InvariantReport practical = assumption_report(base, 144);
  CHECK_FALSE(practical.at("eta").pass);
  CHECK(practical.at("eta").margin == doctest::Approx(eta_max - 1e-2));

  const ReportItem& rho = practical.at("rho_target");
  CHECK(rho.pass);
  CHECK(rho.margin == rho.bound);
}

TEST_CASE("final error report") {
  const ProblemSpec spec = ref_spec(1e-2);
  const LiftedState st = derive(init_scaled_identity(spec), spec, spec.T2);
  const InvariantReport rep = final_error_report(st, spec);
  CHECK(rep.at("exponent").value == doctest::Approx(32.0 / 128.0 * 2.0));
  CHECK(rep.at("exponent").pass);
  CHECK(rep.info_at("final_error") == doctest::Approx(2.0 - 0.5e-6).epsilon(1e-12));
  CHECK_FALSE(rep.at("MR_inf").pass);

  // Halving epsilon scales the bound by 4^-(1 - p), p the exponent.
  const ProblemSpec half = ref_spec(1e-2, 5e-4);
  const double ratio = rep.info_at("thm_bound") / final_error_report(st, half).info_at("thm_bound");
  const double p = rep.at("exponent").value;
  CHECK(ratio == doctest::Approx(std::pow(4.0, 1.0 - p)).epsilon(1e-12));
  CHECK(ratio >= 2.0);
}

TEST_CASE("identity suite on random states") {
  SplitMix64 rng(11);
  const ProblemSpec specs[] = {ref_spec(1e-2), rect_spec(5, 3, 2, 4), rect_spec(3, 6, 1, 3), rect_spec(3, 3, 3, 5)};
  int n_states = 0;
  for (const ProblemSpec& spec : specs) {
    for (int i = 0; i < 25; ++i) {
      const double scale = std::pow(10.0, rng.uniform() * 3.0 - 2.0);
      const Matrix w = random_matrix(spec.d(), spec.h, rng, scale);
      const InvariantReport rep = identity_suite(derive(w, spec), spec);
      CHECK_MESSAGE(rep.all_pass(), rep.first_failure());
      ++n_states;
    }
  }
  CHECK(n_states == 100);
  // PN is empty when m = n = r; those items are skipped.
  SplitMix64 rng2(2);
  const ProblemSpec sq = rect_spec(3, 3, 3, 5);
  const InvariantReport rep = identity_suite(derive(random_matrix(6, 5, rng2), sq), sq);
  CHECK_FALSE(rep.contains("PN_Yhat"));
  CHECK(rep.contains("JRJ"));
}

TEST_CASE("derivative sign suite") {
  const ProblemSpec spec = ref_spec(1e-3);
  const MeasOp op = identity_operator(12, 12);

  SUBCASE("warm-up start sits on the sigma_r(A) and Wtilde boundaries") {
    const Matrix w0 = init_scaled_identity(spec);
    const StepFlow flow(gd_step_lifted(w0, 0, op, spec));
    const LiftedState st = derive(w0, spec);
    const InvariantReport rep = derivative_sign_suite(st, flow.perturbation(0.0, spec), spec, Phase::warmup);
    CHECK_FALSE(rep.at("d_norm_W").active);
    CHECK_FALSE(rep.at("d_F").active);
    CHECK(rep.at("d_sigma_r_A").active);
    CHECK(rep.at("d_Wtilde").active);
    CHECK(rep.all_pass());
    // Growth of the aligned block is close to Y_rr sigma_r(A).
    CHECK(rep.at("d_sigma_r_A").value == doctest::Approx(spec.Yrr * 1e-3).epsilon(1e-3));
  }

  SUBCASE("local phase decay at the MR_t boundary") {
    const double c = 0.1;
    Matrix w(24, 12);
    for (std::size_t i = 0; i < 2; ++i) {
      const double a = std::sqrt(spec.Y(i, i) * (1.0 - c));
      w(i, i) = a;
      w(12 + i, i) = a;
    }
    w(2, 2) = 1e-4;
    w(14, 2) = 1e-4;
    LiftedState st = derive(w, spec);
    const double norm_r = op_norm(st.R);
    CHECK(norm_r == doctest::Approx(c * spec.normY));
    st.t = spec.T1 - std::log(norm_r / (3.0 * spec.normY)) / (0.4 * spec.Yrr);
    CHECK(phase_bounds(spec, st.t).MR_t == doctest::Approx(norm_r));
    const Matrix e(24, 24);
    const InvariantReport rep = derivative_sign_suite(st, e, spec, Phase::local);
    CHECK(rep.at("d_R").active);
    CHECK(rep.at("d_R").pass);
    CHECK(rep.at("d_R").value < -0.4 * spec.Yrr * norm_r);
  }
}

TEST_CASE("minimal delta_eff makes the t = 0 delta items pass") {
  const ProblemSpec spec = ref_spec(1e-2);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const LiftedState st = derive(init_random(spec, 10.0, seed), spec);
    const double d = minimal_delta_eff(st, spec);
    CHECK(d > 0.0);
    const InvariantReport at = warmup_report(st, with_monitor_delta(spec, d));
    for (const char* id : {"imbalance", "PAJW", "PNW", "lambda1_PPX"}) CHECK(at.at(id).pass);
    const InvariantReport tight = warmup_report(st, with_monitor_delta(spec, 0.99 * d));
    const bool any_delta_item_failed = !tight.at("imbalance").pass || !tight.at("PAJW").pass ||
                                       !tight.at("PNW").pass || !tight.at("lambda1_PPX").pass;
    CHECK(any_delta_item_failed);
  }
  CHECK(with_monitor_delta(spec, 0.1).beta20 == doctest::Approx(0.01 / (20.0 * spec.T2 * spec.normY)));
}
