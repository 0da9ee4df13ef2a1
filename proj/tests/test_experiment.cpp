#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "helpers.hpp"
#include "msense/errors.hpp"
#include "msense/experiment.hpp"
#include "msense/linalg.hpp"

using namespace msense;
using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

ExperimentConfig small_config() {
  ExperimentConfig c;
  c.m = c.n = c.h = 4;
  c.r = 2;
  c.steps = 120;
  c.log_every = 10;
  c.seed = 9;
  return c;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("msense_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("config parsing") {
  const ExperimentConfig d = config_from_json(json::object());
  CHECK(d.m == 12);
  CHECK(d.op_kind == OpKind::identity);
  CHECK_FALSE(d.steps.has_value());

  const json j = {{"m", 5},        {"n", 4},           {"op_kind", "gaussian"}, {"steps", "auto"},
                  {"N", 30},       {"delta_eff", "auto"}, {"init", "random"},    {"seed", 18446744073709551615ULL}};
  const ExperimentConfig c = config_from_json(j);
  CHECK(c.m == 5);
  CHECK(c.op_kind == OpKind::gaussian);
  CHECK(c.N == 30u);
  CHECK(c.delta_eff_auto);
  CHECK(c.seed == 18446744073709551615ULL);
  CHECK(config_from_json(config_to_json(c)).seed == c.seed);
  CHECK(config_to_json(config_from_json(config_to_json(c))) == config_to_json(c));

  CHECK_THROWS_AS(config_from_json({{"etaa", 1.0}}), ConfigError);
  CHECK_THROWS_AS(config_from_json({{"eta", "fast"}}), ConfigError);
  CHECK_THROWS_AS(config_from_json({{"m", -3}}), ConfigError);
  CHECK_THROWS_AS(config_from_json({{"op_kind", "sparse"}}), ConfigError);
  CHECK_THROWS_AS(config_from_json({{"init", "zeros"}}), ConfigError);

  ExperimentConfig bad = small_config();
  bad.r = 5;
  CHECK_THROWS_AS(validate(bad), ConfigError);
  bad = small_config();
  bad.h = 6;
  CHECK_THROWS_AS(validate(bad), ConfigError);
  bad.init = InitKind::random;
  CHECK_NOTHROW(validate(bad));
  bad.log_every = 0;
  CHECK_THROWS_AS(validate(bad), ConfigError);
}

TEST_CASE("synthetic target is geometric between kappa y_rr and y_rr") {
  ExperimentConfig c = small_config();
  c.r = 3;
  c.kappa = 4.0;
  c.y_rr = 0.5;
  const Canonical t = build_target(c);
  CHECK(t.Y(0, 0) == 2.0);
  CHECK(t.Y(1, 1) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(t.Y(2, 2) == 0.5);
  CHECK(t.Y(3, 3) == 0.0);
  c.r = 1;
  CHECK_THROWS_AS(build_target(c), ConfigError);
}

TEST_CASE("auto steps reach T2 and auto log cadence") {
  ExperimentConfig c = small_config();
  c.steps.reset();
  const ProblemSpec spec = build_spec(c, build_target(c).Y);
  const std::size_t steps = resolve_steps(c, spec);
  CHECK(static_cast<double>(steps) * c.eta >= spec.T2);
  CHECK(static_cast<double>(steps - 1) * c.eta < spec.T2);
  c.log_every.reset();
  CHECK(resolve_log_every(c, 6908) == 3);
  CHECK(resolve_log_every(c, 100) == 1);
}

TEST_CASE("run rows, CSV layout and the zero-step run") {
  const RunResult res = run(small_config());
  REQUIRE(res.rows.size() == 13);
  for (std::size_t i = 1; i < res.rows.size(); ++i) CHECK(res.rows[i].t > res.rows[i - 1].t);
  CHECK(res.rows.back().k == 120);

  const std::string csv = trajectory_csv(res);
  CHECK(csv.substr(0, csv.find('\n')) == kTrajectoryHeader);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 14);

  ExperimentConfig zero = small_config();
  zero.steps = 0;
  const RunResult z = run(zero);
  REQUIRE(z.rows.size() == 1);
  CHECK(z.rows[0].t == 0.0);
  CHECK(z.rows[0].warmup_mask == 0xFFu);
  CHECK(z.summary["init_check"]["all_pass"].get<bool>());
}

TEST_CASE("runs are deterministic") {
  ExperimentConfig c = small_config();
  c.op_kind = OpKind::gaussian;
  c.init = InitKind::random;
  c.h = 6;
  const RunResult a = run(c);
  const RunResult b = run(c);
  CHECK(trajectory_csv(a) == trajectory_csv(b));
  CHECK(a.summary.dump() == b.summary.dump());
  CHECK(a.summary["runtime_seconds"].is_null());
  c.seed += 1;
  CHECK(trajectory_csv(run(c)) != trajectory_csv(a));
}

TEST_CASE("artifacts and snapshot recomputation") {
  const fs::path dir = scratch("artifacts");
  const RunResult res = run(small_config());
  write_run(res, dir);
  CHECK(slurp(dir / "trajectory.csv") == trajectory_csv(res));
  const json summary = json::parse(slurp(dir / "summary.json"));
  for (const char* key : {"config", "T1", "T2", "beta_20", "beta_4", "final_error", "thm33_bound", "MR_inf",
                          "first_warmup_violation", "first_local_violation", "runtime_seconds"}) {
    CHECK_MESSAGE(summary.contains(key), key);
  }

  for (const TrajectoryRow& row : res.rows) {
    char name[32];
    std::snprintf(name, sizeof name, "W_%08zu.bin", row.k);
    const fs::path p = dir / "snapshots" / name;
    const Matrix w = read_matrix(p);
    CHECK(json::parse(slurp(p.string() + ".json"))["t"].get<double>() == row.t);
    const TrajectoryRow again = recompute_row(w, row.t, row.k, res.spec);
    CHECK(std::abs(again.sc.norm_R - row.sc.norm_R) <= 1e-12);
    CHECK(std::abs(again.sc.sigma_r_A - row.sc.sigma_r_A) <= 1e-12);
    CHECK(std::abs(again.sc.norm_Wtilde - row.sc.norm_Wtilde) <= 1e-12);
    CHECK(again.warmup_mask == row.warmup_mask);
    CHECK(again.local_mask == row.local_mask);
  }

  const Matrix u = read_matrix(dir / "final_U.bin");
  CHECK(u == res.U_final);
  fs::remove_all(dir);
}

TEST_CASE("snapshot bytes are little-endian float64") {
  const fs::path dir = scratch("bytes");
  Matrix m(1, 2);
  m(0, 0) = 1.0;
  m(0, 1) = -2.0;
  write_matrix(dir / "m.bin", m, 0.5);
  const std::string b = slurp(dir / "m.bin");
  REQUIRE(b.size() == 16);
  CHECK(static_cast<unsigned char>(b[6]) == 0xF0);
  CHECK(static_cast<unsigned char>(b[7]) == 0x3F);
  CHECK(static_cast<unsigned char>(b[15]) == 0xC0);
  CHECK(read_matrix(dir / "m.bin") == m);
  fs::remove_all(dir);
}

TEST_CASE("target from file runs in the canonical frame") {
  const fs::path dir = scratch("yfile");
  SplitMix64 rng(4);
  const Matrix g1 = testing::random_matrix(5, 2, rng);
  const Matrix g2 = testing::random_matrix(4, 2, rng);
  const Matrix y = times_transpose(g1, g2);
  json yj = {{"rows", 5}, {"cols", 4}, {"data", json::array()}};
  for (double x : y.entries()) yj["data"].push_back(x);
  std::ofstream(dir / "y.json") << yj.dump();

  ExperimentConfig c = small_config();
  c.y_file = (dir / "y.json").string();
  c.init = InitKind::random;
  c.h = 3;
  c.delta = 1e-3;
  c.steps = 50;
  const RunResult res = run(c);
  CHECK(res.spec.m == 5);
  CHECK(res.spec.n == 4);
  const double err_orig = op_norm(y - times_transpose(res.U_final, res.V_final));
  CHECK(err_orig == doctest::Approx(res.summary["final_error"].get<double>()).epsilon(1e-10));
  fs::remove_all(dir);
}

TEST_CASE("step errors carry the step index") {
  ExperimentConfig c = small_config();
  c.init = InitKind::random;
  c.epsilon = 0.9;
  c.C = 0.2;
  c.eta = 0.5;
  c.delta = 0.1;
  try {
    (void)run(c);
    FAIL("expected StepTooLarge");
  } catch (const StepTooLarge& e) {
    REQUIRE(e.step().has_value());
    CHECK(std::string(e.what()).starts_with("step " + std::to_string(*e.step()) + ":"));
  }
}

TEST_CASE("check-rip") {
  ExperimentConfig c = small_config();
  CHECK_THROWS_AS(check_rip(c, 10), ConfigError);
  c.op_kind = OpKind::gaussian;
  c.m = c.n = 10;
  c.h = 10;
  c.rho_target = 0.5;
  const json zero = check_rip(c, 0);
  CHECK(zero["rho_hat"].get<double>() == 0.0);
  CHECK(zero.contains("warning"));
  const json est = check_rip(c, 200);
  CHECK(est["N"].get<std::size_t>() == 240);
  CHECK(est["probe_rank"].get<std::size_t>() == 3);
  CHECK(est["rho_hat"].get<double>() < 0.5);
  CHECK(est["caveat"] == "falsifier-only");
}

TEST_CASE("flow against GD") {
  ExperimentConfig c = small_config();
  c.op_kind = OpKind::gaussian;
  c.init = InitKind::random;
  c.h = 7;
  c.epsilon = 1e-2;
  const json out = flow_vs_gd(c, 0);
  CHECK(out["probes"].get<std::size_t>() == 120);
  CHECK(out["max_rel_deviation"].get<double>() <= 1e-8);
  CHECK(out["max_s0_deviation"].get<double>() == 0.0);
  CHECK(flow_vs_gd(c, 15)["probes"].get<std::size_t>() == 15);

  // Near the guard: eta |R~| close to 2/3.
  c.eta = 0.28;
  c.steps = 5;
  c.delta = 0.05;
  const json hot = flow_vs_gd(c, 0);
  CHECK(hot["max_step_guard"].get<double>() > 0.55);
  CHECK(hot["max_rel_deviation"].get<double>() <= 1e-8);
}

TEST_CASE("derivative verification") {
  ExperimentConfig c = small_config();
  c.op_kind = OpKind::gaussian;
  c.init = InitKind::random;
  c.h = 6;
  c.epsilon = 1e-2;
  c.eta = 0.02;
  const json out = verify_derivatives(c, 10);
  CHECK(out["table"].size() == 10);
  CHECK(out["pass"].get<bool>());
  CHECK(out["min_ratio"].get<double>() >= 3.5);
  CHECK(out["max_ratio"].get<double>() <= 4.5);

  // h = r: Wtilde vanishes identically.
  ExperimentConfig sq = small_config();
  sq.m = sq.n = sq.h = sq.r = 2;
  sq.kappa = 2.0;
  const json z = verify_derivatives(sq, 3);
  for (const json& row : z["table"]) {
    CHECK(row["Wtilde"]["scale"].get<double>() <= 1e-30);
    CHECK(row["Wtilde"]["err_fine"].get<double>() <= 1e-12);
    CHECK(row["Wtilde"]["ratio"].is_null());
  }
}

TEST_CASE("sweep is independent of the thread count") {
  ExperimentConfig c = small_config();
  c.op_kind = OpKind::gaussian;
  c.init = InitKind::random;
  c.h = 5;
  const json a = sweep(c, 4, 1, std::nullopt);
  const json b = sweep(c, 4, 3, std::nullopt);
  CHECK(a.dump() == b.dump());
  REQUIRE(a["runs"].size() == 4);
  CHECK(a["runs"][0]["seed"].get<std::uint64_t>() == derive_seed(c.seed, 0));
  CHECK(a["runs"][1]["final_error"] != a["runs"][2]["final_error"]);
}
