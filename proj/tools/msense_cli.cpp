// msense: run and audit factorized GD on matrix sensing problems.
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"
#include "msense/errors.hpp"
#include "msense/experiment.hpp"

namespace {

using json = nlohmann::ordered_json;

struct Common {
  std::string config_path;
  std::uint64_t seed = 0;
  std::string out_dir;
  std::map<std::string, std::string> overrides;
  bool derivative_checks = false;
  bool no_snapshots = false;
  bool timing = false;
};

// Override flags, mapped onto config keys. Single letters clash with CLI11
// short options, so m, n, r, h, N and C get longer names.
const std::pair<const char*, const char*> kOverrideFlags[] = {
    {"--rows", "m"},
    {"--cols", "n"},
    {"--rank", "r"},
    {"--width", "h"},
    {"--kappa", "kappa"},
    {"--y-rr", "y_rr"},
    {"--y-file", "y_file"},
    {"--op-kind", "op_kind"},
    {"--measurements", "N"},
    {"--rho-target", "rho_target"},
    {"--eta", "eta"},
    {"--epsilon", "epsilon"},
    {"--alpha", "alpha"},
    {"--delta", "delta"},
    {"--init", "init"},
    {"--init-scale", "C"},
    {"--steps", "steps"},
    {"--log-every", "log_every"},
    {"--delta-eff", "delta_eff"},
    {"--rip-trials", "rip_trials"},
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config_path, "JSON config file; flags override its values")->check(CLI::ExistingFile);
  sub->add_option("--seed", c.seed, "64-bit seed")->required();
  sub->add_option("--out-dir", c.out_dir, "Output directory")->required();
  for (const auto& [flag, key] : kOverrideFlags) {
    sub->add_option(flag, c.overrides[key], std::string("Override config key ") + key);
  }
  sub->add_flag("--derivative-checks", c.derivative_checks, "Run the derivative sign suite at each logged row");
  sub->add_flag("--no-snapshots", c.no_snapshots, "Do not write W snapshots");
  sub->add_flag("--timing", c.timing, "Record runtime_seconds in the summary");
}

// Numbers, booleans and null parse as JSON; anything else stays a string.
json flag_value(const std::string& key, const std::string& raw) {
  if (key == "y_file" || key == "op_kind" || key == "init") return raw;
  try {
    return json::parse(raw);
  } catch (const json::exception&) {
    return raw;
  }
}

msense::ExperimentConfig load_config(const Common& c) {
  json j = json::object();
  if (!c.config_path.empty()) {
    std::ifstream in(c.config_path);
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      throw msense::ConfigError("cannot parse " + c.config_path + ": " + e.what());
    }
  }
  for (const auto& [key, raw] : c.overrides) {
    if (!raw.empty()) j[key] = flag_value(key, raw);
  }
  j["seed"] = c.seed;
  if (c.derivative_checks) j["derivative_checks"] = true;
  if (c.no_snapshots) j["snapshots"] = false;
  if (c.timing) j["timing"] = true;
  return msense::config_from_json(j);
}

void write_json(const std::filesystem::path& dir, const std::string& name, const json& j) {
  std::filesystem::create_directories(dir);
  std::ofstream(dir / name) << j.dump(2) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Factorized gradient descent for matrix sensing, with invariant monitors"};
  app.require_subcommand(1);

  Common run_opts, fvg_opts, rip_opts, der_opts, sweep_opts;
  std::size_t fvg_probes = 0, der_probes = 20, rip_trials = 200, sweep_count = 10;
  std::size_t rip_rank = 0;
  std::size_t sweep_threads = std::max(1u, std::thread::hardware_concurrency());

  CLI::App* run_cmd = app.add_subcommand("run", "Run GD and write trajectory.csv, summary.json and snapshots");
  add_common(run_cmd, run_opts);

  CLI::App* fvg = app.add_subcommand("flow-vs-gd", "Compare the closed-form flow with the GD iterates");
  add_common(fvg, fvg_opts);
  fvg->add_option("--probes", fvg_probes, "Number of random steps to probe (0 = all)");

  CLI::App* rip = app.add_subcommand("check-rip", "Monte-Carlo RIP estimate of the Gaussian operator");
  add_common(rip, rip_opts);
  rip->add_option("--trials", rip_trials, "Number of random probes");
  rip->add_option("--probe-rank", rip_rank, "Rank of the probes (default r + 1)");

  CLI::App* der = app.add_subcommand("verify-derivatives", "Finite-difference check of the analytic derivatives");
  add_common(der, der_opts);
  der->add_option("--probes", der_probes, "Number of random trajectory points");

  CLI::App* sw = app.add_subcommand("sweep", "Independent runs over derived seeds, run concurrently");
  add_common(sw, sweep_opts);
  sw->add_option("--count", sweep_count, "Number of runs");
  sw->add_option("--threads", sweep_threads, "Concurrent runs");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run_cmd) {
      const msense::RunResult res = msense::run(load_config(run_opts));
      msense::write_run(res, run_opts.out_dir);
      std::printf("steps=%zu rows=%zu final_error=%.6e MR_inf=%.6e out=%s\n", res.steps, res.rows.size(),
                  res.summary["final_error"].get<double>(), res.summary["MR_inf"].get<double>(),
                  run_opts.out_dir.c_str());
      return 0;
    }
    json out;
    std::string out_dir;
    if (*fvg) {
      out = msense::flow_vs_gd(load_config(fvg_opts), fvg_probes);
      out_dir = fvg_opts.out_dir;
      write_json(out_dir, "flow_vs_gd.json", out);
    } else if (*rip) {
      const auto rank = rip_rank == 0 ? std::nullopt : std::optional<std::size_t>(rip_rank);
      out = msense::check_rip(load_config(rip_opts), rip_trials, rank);
      out_dir = rip_opts.out_dir;
      if (out.contains("warning")) std::fprintf(stderr, "warning: %s\n", out["warning"].get<std::string>().c_str());
      write_json(out_dir, "check_rip.json", out);
    } else if (*der) {
      out = msense::verify_derivatives(load_config(der_opts), der_probes);
      out_dir = der_opts.out_dir;
      write_json(out_dir, "verify_derivatives.json", out);
    } else if (*sw) {
      out = msense::sweep(load_config(sweep_opts), sweep_count, sweep_threads, std::filesystem::path(sweep_opts.out_dir));
      out_dir = sweep_opts.out_dir;
      write_json(out_dir, "sweep.json", out);
      for (const json& r : out["runs"]) {
        if (r.contains("error")) {
          std::printf("run %zu: error: %s\n", r["index"].get<std::size_t>(), r["error"].get<std::string>().c_str());
        } else {
          std::printf("run %zu: final_error=%.6e\n", r["index"].get<std::size_t>(), r["final_error"].get<double>());
        }
      }
      return 0;
    }
    json brief = out;
    brief.erase("config");
    brief.erase("table");
    std::cout << brief.dump(2) << "\n";
    return out.value("pass", true) ? 0 : 2;
  } catch (const msense::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
