#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "msense/dynamics.hpp"
#include "msense/lifted.hpp"
#include "msense/measurement.hpp"
#include "msense/monitors.hpp"

namespace msense {

inline constexpr const char* kVersion = "0.1.0";

enum class InitKind { random, scaled_identity };

std::string to_string(InitKind kind);
InitKind init_kind_from_string(const std::string& s);

/// Everything needed to reproduce one run. Optional counts mean "auto".
struct ExperimentConfig {
  std::size_t m = 12, n = 12, r = 2, h = 12;
  double kappa = 2.0;
  double y_rr = 1.0;
  std::optional<std::string> y_file;
  OpKind op_kind = OpKind::identity;
  std::optional<std::size_t> N;  ///< auto: 6 (m + n) r for Gaussian operators
  double rho_target = 0.0;
  double eta = 1e-2;
  double epsilon = 1e-3;
  double alpha = 1.0;
  std::optional<double> delta;  ///< auto: 1 / (64 alpha kappa)
  InitKind init = InitKind::scaled_identity;
  double C = 10.0;
  std::optional<std::size_t> steps;      ///< auto: ceil(T2 / eta)
  std::optional<std::size_t> log_every;  ///< auto: max(1, steps / 2000)
  std::uint64_t seed = 0;
  std::optional<double> delta_eff;
  bool delta_eff_auto = false;  ///< smallest delta_eff passing the t = 0 warm-up items
  bool derivative_checks = false;
  bool snapshots = true;
  std::size_t rip_trials = 0;  ///< > 0 adds a RIP estimate to the summary
  bool timing = false;
};

/// Unknown keys and ill-typed values raise ConfigError. Missing keys keep
/// their defaults.
ExperimentConfig config_from_json(const nlohmann::ordered_json& j);
/// Applies the keys of `overrides` on top of `base`.
ExperimentConfig merge_config(const ExperimentConfig& base, const nlohmann::ordered_json& overrides);
nlohmann::ordered_json config_to_json(const ExperimentConfig& cfg);
/// Throws ConfigError when counts are zero, r > min(m, n) or the
/// scaled-identity init is requested with m, n, h not all equal.
void validate(const ExperimentConfig& cfg);

/// Target in the canonical frame and the rotations back to the caller's frame.
Canonical build_target(const ExperimentConfig& cfg);
ProblemSpec build_spec(const ExperimentConfig& cfg, const Matrix& y_canonical);
MeasOp build_operator(const ExperimentConfig& cfg);
Matrix build_init(const ExperimentConfig& cfg, const ProblemSpec& spec);
std::size_t resolve_steps(const ExperimentConfig& cfg, const ProblemSpec& spec);
std::size_t resolve_log_every(const ExperimentConfig& cfg, std::size_t steps);

struct TrajectoryRow {
  double t = 0.0;
  std::size_t k = 0;
  StateScalars sc;
  double norm_E = 0.0;  ///< max over s in {0, 1/4, 1/2, 3/4} of the step starting here
  double MR_t = 0.0;
  unsigned warmup_mask = 0;
  unsigned local_mask = 0;
  bool ebound_applicable = false;
  bool ebound_pass = true;
};

struct RunResult {
  ExperimentConfig config;
  ProblemSpec spec;  ///< with the monitoring delta resolved
  std::size_t steps = 0;
  std::size_t log_every = 1;
  std::vector<TrajectoryRow> rows;
  std::vector<Matrix> snapshots;  ///< W at each logged row, when enabled
  Matrix W_final;                 ///< canonical frame
  Matrix U_final, V_final;        ///< caller's frame
  nlohmann::ordered_json summary;
};

/// Runs GD from the configured start, logging every `log_every` steps and at
/// the last step. Errors from a step carry its index (Error::step()).
RunResult run(const ExperimentConfig& cfg);

inline constexpr const char* kTrajectoryHeader =
    "t,k,norm_W,norm_R,norm_imbalance,norm_PAJW,norm_PNW,lambda1_PPX,norm_F,norm_Wtilde,sigma_r_A,sigma_r1_W,"
    "norm_E,MR_t,norm_PNWQ,warmup_pass_bitmask,local_pass_bitmask,ebound_applicable,ebound_pass";

std::string trajectory_csv(const RunResult& res);
/// Row values recomputed from a W snapshot, without norm_E and the E flags.
TrajectoryRow recompute_row(const Matrix& w, double t, std::size_t k, const ProblemSpec& spec);

/// Flat little-endian float64 dump plus `<path>.json` = {t, rows, cols}.
void write_matrix(const std::filesystem::path& path, const Matrix& m, std::optional<double> t = std::nullopt);
Matrix read_matrix(const std::filesystem::path& path);

/// trajectory.csv, summary.json, snapshots/, final_U.bin, final_V.bin.
void write_run(const RunResult& res, const std::filesystem::path& out_dir);

/// Closed-form flow at s = 1 against the GD iterate on `probes` random steps
/// (all steps when probes = 0), with the E bound at s in {0, 1/4, 1/2, 3/4}.
nlohmann::ordered_json flow_vs_gd(const ExperimentConfig& cfg, std::size_t probes);

/// Falsifier-only RIP estimate; ConfigError for the identity operator.
nlohmann::ordered_json check_rip(const ExperimentConfig& cfg, std::size_t trials,
                                 std::optional<std::size_t> probe_rank = std::nullopt);

/// Central-difference check of one analytic derivative at flow parameter s.
struct FdCheck {
  double err_h = 0.0;    ///< step h_coarse
  double err_h2 = 0.0;   ///< step h_coarse / 2
  double ratio = 0.0;    ///< err_h / err_h2, NaN when both are at roundoff
  double err_fine = 0.0; ///< step h_fine
  double scale = 0.0;    ///< |analytic derivative|_F
};

struct DerivativeProbe {
  std::size_t k = 0;
  double s = 0.0;
  FdCheck F, Wtilde, W;
};

/// Steps in s; physical steps are these times eta.
DerivativeProbe probe_derivatives(const StepFlow& flow, double s, const ProblemSpec& spec, double h_coarse = 0.2,
                                  double h_fine = 1e-4);

nlohmann::ordered_json verify_derivatives(const ExperimentConfig& cfg, std::size_t probes);

/// `count` runs of `base` with seeds derive_seed(base.seed, i), at most
/// `threads` at a time. Artifacts go to out_dir/run_<i> when out_dir is set.
nlohmann::ordered_json sweep(const ExperimentConfig& base, std::size_t count, std::size_t threads,
                             const std::optional<std::filesystem::path>& out_dir);

}  // namespace msense
