#include "msense/experiment.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <future>
#include <limits>
#include <numeric>
#include <set>

#include "msense/errors.hpp"
#include "msense/linalg.hpp"
#include "msense/rng.hpp"

namespace msense {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

// Stream indices below derive_seed(seed, i); fixed so artifacts stay stable.
constexpr std::uint64_t kOpStream = 0;
constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kRipStream = 2;
constexpr std::uint64_t kProbeStream = 3;
constexpr std::uint64_t kDerivStream = 4;

constexpr double kQuarterPoints[] = {0.0, 0.25, 0.5, 0.75};

bool is_auto(const json& v) { return v.is_null() || (v.is_string() && v.get<std::string>() == "auto"); }

std::size_t get_count(const json& v, const std::string& key) {
  if (v.is_number_unsigned()) return v.get<std::size_t>();
  if (v.is_number_integer() && v.get<long long>() >= 0) return static_cast<std::size_t>(v.get<long long>());
  throw ConfigError("'" + key + "' must be a nonnegative integer");
}

double get_double(const json& v, const std::string& key) {
  if (!v.is_number()) throw ConfigError("'" + key + "' must be a number");
  return v.get<double>();
}

bool get_bool(const json& v, const std::string& key) {
  if (!v.is_boolean()) throw ConfigError("'" + key + "' must be true or false");
  return v.get<bool>();
}

std::string get_string(const json& v, const std::string& key) {
  if (!v.is_string()) throw ConfigError("'" + key + "' must be a string");
  return v.get<std::string>();
}

std::optional<std::size_t> get_auto_count(const json& v, const std::string& key) {
  if (is_auto(v)) return std::nullopt;
  return get_count(v, key);
}

std::optional<double> get_auto_double(const json& v, const std::string& key) {
  if (is_auto(v)) return std::nullopt;
  return get_double(v, key);
}

void apply_key(ExperimentConfig& c, const std::string& key, const json& v) {
  if (key == "m") c.m = get_count(v, key);
  else if (key == "n") c.n = get_count(v, key);
  else if (key == "r") c.r = get_count(v, key);
  else if (key == "h") c.h = get_count(v, key);
  else if (key == "kappa") c.kappa = get_double(v, key);
  else if (key == "y_rr") c.y_rr = get_double(v, key);
  else if (key == "y_file") c.y_file = v.is_null() ? std::nullopt : std::optional(get_string(v, key));
  else if (key == "op_kind") {
    try {
      c.op_kind = op_kind_from_string(get_string(v, key));
    } catch (const ConfigError&) {
      throw;
    } catch (const Error& e) {
      throw ConfigError(e.what());
    }
  } else if (key == "N") c.N = get_auto_count(v, key);
  else if (key == "rho_target") c.rho_target = get_double(v, key);
  else if (key == "eta") c.eta = get_double(v, key);
  else if (key == "epsilon") c.epsilon = get_double(v, key);
  else if (key == "alpha") c.alpha = get_double(v, key);
  else if (key == "delta") c.delta = get_auto_double(v, key);
  else if (key == "init") c.init = init_kind_from_string(get_string(v, key));
  else if (key == "C") c.C = get_double(v, key);
  else if (key == "steps") c.steps = get_auto_count(v, key);
  else if (key == "log_every") c.log_every = get_auto_count(v, key);
  else if (key == "seed") {
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
      throw ConfigError("'seed' must be a nonnegative 64-bit integer");
    }
    c.seed = v.get<std::uint64_t>();
  } else if (key == "delta_eff") {
    c.delta_eff_auto = v.is_string() && v.get<std::string>() == "auto";
    c.delta_eff = (v.is_null() || c.delta_eff_auto) ? std::nullopt : std::optional(get_double(v, key));
  } else if (key == "derivative_checks") c.derivative_checks = get_bool(v, key);
  else if (key == "snapshots") c.snapshots = get_bool(v, key);
  else if (key == "rip_trials") c.rip_trials = get_count(v, key);
  else if (key == "timing") c.timing = get_bool(v, key);
  else throw ConfigError("unknown config key '" + key + "'");
}

template <class T>
json auto_or(const std::optional<T>& v) {
  return v ? json(*v) : json("auto");
}

json report_to_json(const InvariantReport& rep) {
  json items = json::object();
  for (const ReportItem& it : rep.items) {
    items[it.id] = {{"value", it.value},   {"bound", it.bound},   {"margin", it.margin},
                    {"pass", it.pass},     {"active", it.active}, {"kind", it.kind == BoundKind::lower ? "lower" : "upper"}};
  }
  json info = json::object();
  for (const auto& [key, value] : rep.info) info[key] = value;
  return {{"t", rep.t}, {"all_pass", rep.all_pass()}, {"items", items}, {"info", info}};
}

double max_norm_e(const StepFlow& flow, const ProblemSpec& spec) {
  double out = 0.0;
  for (double s : kQuarterPoints) out = std::max(out, op_norm(flow.perturbation(s, spec)));
  return out;
}

std::size_t item_index(const InvariantReport& rep, const std::string& id) {
  for (std::size_t i = 0; i < rep.items.size(); ++i) {
    if (rep.items[i].id == id) return i + 1;
  }
  return 0;
}

/// `count` distinct indices from [0, total), ascending; all of them when
/// count is 0 or at least total.
std::vector<std::size_t> sample_indices(std::size_t total, std::size_t count, std::uint64_t seed) {
  std::vector<std::size_t> idx(total);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (count == 0 || count >= total) return idx;
  SplitMix64 rng(seed);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.next() % (total - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(count);
  std::sort(idx.begin(), idx.end());
  return idx;
}

struct Setup {
  ExperimentConfig cfg;
  Canonical target;
  ProblemSpec spec;
  MeasOp op;
  Matrix w0;
  std::size_t steps = 0;
  std::string delta_source;
};

Setup prepare(const ExperimentConfig& cfg_in) {
  Setup s{cfg_in, build_target(cfg_in), {}, identity_operator(1, 1), {}, 0, "theorem"};
  s.cfg.m = s.target.Y.rows();
  s.cfg.n = s.target.Y.cols();
  validate(s.cfg);
  s.spec = build_spec(s.cfg, s.target.Y);
  s.op = build_operator(s.cfg);
  s.w0 = build_init(s.cfg, s.spec);
  if (s.cfg.delta_eff) s.delta_source = "config";
  if (s.cfg.delta_eff_auto) {
    s.spec = with_monitor_delta(s.spec, minimal_delta_eff(derive(s.w0, s.spec), s.spec));
    s.delta_source = "auto";
  }
  s.steps = resolve_steps(s.cfg, s.spec);
  return s;
}

StepRecord tagged_step(const Matrix& w, std::size_t k, const MeasOp& op, const ProblemSpec& spec) {
  try {
    return gd_step_lifted(w, k, op, spec);
  } catch (Error& e) {
    e.set_step(k);
    throw;
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << text;
}

std::string fmt_double(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

}  // namespace

std::string to_string(InitKind kind) { return kind == InitKind::random ? "random" : "scaled_identity"; }

InitKind init_kind_from_string(const std::string& s) {
  if (s == "random") return InitKind::random;
  if (s == "scaled_identity") return InitKind::scaled_identity;
  throw ConfigError("unknown init '" + s + "' (expected random or scaled_identity)");
}

ExperimentConfig config_from_json(const json& j) { return merge_config(ExperimentConfig{}, j); }

ExperimentConfig merge_config(const ExperimentConfig& base, const json& overrides) {
  if (!overrides.is_object()) throw ConfigError("config must be a JSON object");
  ExperimentConfig c = base;
  for (const auto& [key, value] : overrides.items()) apply_key(c, key, value);
  return c;
}

json config_to_json(const ExperimentConfig& c) {
  json j;
  j["m"] = c.m;
  j["n"] = c.n;
  j["r"] = c.r;
  j["h"] = c.h;
  j["kappa"] = c.kappa;
  j["y_rr"] = c.y_rr;
  j["y_file"] = c.y_file ? json(*c.y_file) : json(nullptr);
  j["op_kind"] = to_string(c.op_kind);
  j["N"] = auto_or(c.N);
  j["rho_target"] = c.rho_target;
  j["eta"] = c.eta;
  j["epsilon"] = c.epsilon;
  j["alpha"] = c.alpha;
  j["delta"] = auto_or(c.delta);
  j["init"] = to_string(c.init);
  j["C"] = c.C;
  j["steps"] = auto_or(c.steps);
  j["log_every"] = auto_or(c.log_every);
  j["seed"] = c.seed;
  j["delta_eff"] = c.delta_eff_auto ? json("auto") : (c.delta_eff ? json(*c.delta_eff) : json(nullptr));
  j["derivative_checks"] = c.derivative_checks;
  j["snapshots"] = c.snapshots;
  j["rip_trials"] = c.rip_trials;
  j["timing"] = c.timing;
  return j;
}

void validate(const ExperimentConfig& c) {
  if (c.m == 0 || c.n == 0 || c.r == 0 || c.h == 0) throw ConfigError("m, n, r and h must be positive");
  if (c.r > std::min(c.m, c.n)) throw ConfigError("r must not exceed min(m, n)");
  if (c.h < c.r) throw ConfigError("h must be at least r");
  if (c.init == InitKind::scaled_identity && !(c.m == c.n && c.n == c.h)) {
    throw ConfigError("scaled_identity init requires m = n = h");
  }
  if (c.N && *c.N == 0) throw ConfigError("N must be positive");
  if (c.log_every && *c.log_every == 0) throw ConfigError("log_every must be positive");
  if (!(c.kappa >= 1.0) || !std::isfinite(c.kappa)) throw ConfigError("kappa must be finite and >= 1");
  if (!(c.y_rr > 0.0) || !std::isfinite(c.y_rr)) throw ConfigError("y_rr must be finite and positive");
  if (!(c.C > 0.0)) throw ConfigError("C must be positive");
}

Canonical build_target(const ExperimentConfig& cfg) {
  if (cfg.y_file) {
    std::ifstream in(*cfg.y_file);
    if (!in) throw ConfigError("cannot read y_file " + *cfg.y_file);
    json j;
    try {
      j = json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("y_file is not valid JSON: " + std::string(e.what()));
    }
    if (!j.contains("rows") || !j.contains("cols") || !j.contains("data")) {
      throw ConfigError("y_file needs rows, cols and data");
    }
    const std::size_t rows = get_count(j["rows"], "rows");
    const std::size_t cols = get_count(j["cols"], "cols");
    std::vector<double> flat;
    for (const json& v : j["data"]) {
      if (v.is_array()) {
        for (const json& x : v) flat.push_back(get_double(x, "data"));
      } else {
        flat.push_back(get_double(v, "data"));
      }
    }
    if (rows == 0 || cols == 0 || flat.size() != rows * cols) throw ConfigError("y_file data size mismatch");
    Matrix y(rows, cols);
    std::ranges::copy(flat, y.data().begin());
    return canonicalize(y);
  }
  if (cfg.r > std::min(cfg.m, cfg.n) || cfg.r == 0) throw ConfigError("r must be in [1, min(m, n)]");
  if (cfg.r == 1 && cfg.kappa != 1.0) throw ConfigError("kappa must be 1 when r = 1");
  Vector d(std::min(cfg.m, cfg.n), 0.0);
  for (std::size_t i = 0; i < cfg.r; ++i) {
    const double expo = cfg.r == 1 ? 0.0 : static_cast<double>(cfg.r - 1 - i) / static_cast<double>(cfg.r - 1);
    d[i] = cfg.y_rr * std::pow(cfg.kappa, expo);
  }
  // Pin the ends exactly.
  d[0] = cfg.y_rr * cfg.kappa;
  d[cfg.r - 1] = cfg.y_rr;
  return {Matrix::diagonal(d, cfg.m, cfg.n), Matrix::identity(cfg.m), Matrix::identity(cfg.n)};
}

ProblemSpec build_spec(const ExperimentConfig& cfg, const Matrix& y) {
  ProblemParams p;
  p.r = cfg.r;
  p.h = cfg.h;
  p.alpha = cfg.alpha;
  const double kappa = y(0, 0) / y(cfg.r - 1, cfg.r - 1);
  p.delta = cfg.delta.value_or(1.0 / (64.0 * cfg.alpha * kappa));
  p.epsilon = cfg.epsilon;
  p.eta = cfg.eta;
  p.rho_target = cfg.rho_target;
  p.delta_eff = cfg.delta_eff;
  try {
    return make_spec(y, p);
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
}

MeasOp build_operator(const ExperimentConfig& cfg) {
  if (cfg.op_kind == OpKind::identity) return identity_operator(cfg.m, cfg.n);
  const std::size_t count = cfg.N.value_or(6 * (cfg.m + cfg.n) * cfg.r);
  return gaussian_operator(cfg.m, cfg.n, count, derive_seed(cfg.seed, kOpStream));
}

Matrix build_init(const ExperimentConfig& cfg, const ProblemSpec& spec) {
  if (cfg.init == InitKind::random) return init_random(spec, cfg.C, derive_seed(cfg.seed, kInitStream));
  return init_scaled_identity(spec);
}

std::size_t resolve_steps(const ExperimentConfig& cfg, const ProblemSpec& spec) {
  if (cfg.steps) return *cfg.steps;
  auto steps = static_cast<std::size_t>(std::ceil(spec.T2 / spec.eta));
  while (static_cast<double>(steps) * spec.eta < spec.T2) ++steps;
  return steps;
}

std::size_t resolve_log_every(const ExperimentConfig& cfg, std::size_t steps) {
  return cfg.log_every.value_or(std::max<std::size_t>(1, steps / 2000));
}

TrajectoryRow recompute_row(const Matrix& w, double t, std::size_t k, const ProblemSpec& spec) {
  const LiftedState st = derive(w, spec, t);
  TrajectoryRow row;
  row.t = t;
  row.k = k;
  row.sc = state_scalars(st, spec);
  row.MR_t = phase_bounds(spec, t).MR_t;
  row.warmup_mask = pass_bitmask(warmup_report(st, row.sc, spec));
  row.local_mask = pass_bitmask(local_report(st, row.sc, spec));
  return row;
}

RunResult run(const ExperimentConfig& cfg_in) {
  const auto start = std::chrono::steady_clock::now();
  Setup setup = prepare(cfg_in);
  const ProblemSpec& spec = setup.spec;
  RunResult res;
  res.config = setup.cfg;
  res.spec = spec;
  res.steps = setup.steps;
  res.log_every = resolve_log_every(setup.cfg, setup.steps);

  const double sqrt_yrr = std::sqrt(spec.Yrr);
  json first_warmup = nullptr;
  json first_local = nullptr;
  json sigma_reach = nullptr;
  std::size_t identity_failures = 0;
  std::string first_identity_failure;
  std::size_t eb_applicable = 0, eb_violations = 0;
  std::size_t deriv_active = 0, deriv_failed = 0;
  json first_deriv_failure = nullptr;

  Matrix w = setup.w0;
  for (std::size_t k = 0; k <= res.steps; ++k) {
    const bool last = k == res.steps;
    const bool logged = last || k % res.log_every == 0;
    std::optional<StepRecord> rec;
    if (!last) {
      rec = tagged_step(w, k, setup.op, spec);
    } else if (logged) {
      // One step past the end, only to fill norm_E for the last row.
      try {
        rec = gd_step_lifted(w, k, setup.op, spec);
      } catch (const Error&) {
        rec.reset();
      }
    }

    if (logged) {
      const double t = static_cast<double>(k) * spec.eta;
      LiftedState st;
      try {
        st = derive(w, spec, t);
      } catch (Error& e) {
        e.set_step(k);
        throw;
      }
      TrajectoryRow row;
      row.t = t;
      row.k = k;
      row.sc = state_scalars(st, spec);
      row.MR_t = phase_bounds(spec, t).MR_t;
      const InvariantReport wr = warmup_report(st, row.sc, spec);
      const InvariantReport lr = local_report(st, row.sc, spec);
      row.warmup_mask = pass_bitmask(wr);
      row.local_mask = pass_bitmask(lr);

      std::optional<StepFlow> flow;
      if (rec) {
        flow.emplace(*rec);
        row.norm_E = max_norm_e(*flow, spec);
        const InvariantReport eb = e_bound_report(*rec, row.norm_E, spec);
        row.ebound_applicable = eb.info_at("applicable") != 0.0;
        row.ebound_pass = eb.all_pass();
        if (row.ebound_applicable) ++eb_applicable;
        if (!row.ebound_pass) ++eb_violations;
      } else {
        row.norm_E = std::numeric_limits<double>::quiet_NaN();
      }

      const InvariantReport ids = identity_suite(st, spec);
      if (!ids.all_pass()) {
        if (identity_failures == 0) first_identity_failure = ids.first_failure();
        ++identity_failures;
      }

      if (t <= spec.T2 && first_warmup.is_null() && !wr.all_pass()) {
        const std::string id = wr.first_failure();
        first_warmup = {{"t", t}, {"k", k}, {"item", item_index(wr, id)}, {"id", id}};
      }
      if (t >= spec.T1 && t <= spec.T2 && first_local.is_null() && !lr.all_pass()) {
        const std::string id = lr.first_failure();
        first_local = {{"t", t}, {"k", k}, {"item", item_index(lr, id)}, {"id", id}};
      }
      if (sigma_reach.is_null() && row.sc.sigma_r_A >= sqrt_yrr) sigma_reach = t;

      if (setup.cfg.derivative_checks && flow) {
        const Matrix e = symmetrize(flow->perturbation(0.0, spec));
        std::vector<InvariantReport> suites;
        if (t <= spec.T2) suites.push_back(derivative_sign_suite(st, e, spec, Phase::warmup));
        if (t >= spec.T1 && t <= spec.T2) suites.push_back(derivative_sign_suite(st, e, spec, Phase::local));
        for (const InvariantReport& ds : suites) {
          for (const ReportItem& it : ds.items) {
            if (!it.active) continue;
            ++deriv_active;
            if (!it.pass) {
              ++deriv_failed;
              if (first_deriv_failure.is_null()) first_deriv_failure = {{"t", t}, {"k", k}, {"id", it.id}};
            }
          }
        }
      }

      if (setup.cfg.snapshots) res.snapshots.push_back(w);
      res.rows.push_back(row);
    }
    if (!last) w = std::move(rec->W_after);
  }

  res.W_final = w;
  res.U_final = setup.target.left_rot * w.row_block(0, spec.m);
  res.V_final = setup.target.right_rot * w.row_block(spec.m, spec.n);

  const LiftedState final_state = derive(w, spec, static_cast<double>(res.steps) * spec.eta);
  const InvariantReport fin = final_error_report(final_state, spec);

  json& s = res.summary;
  s["version"] = kVersion;
  s["config"] = config_to_json(setup.cfg);
  s["T1"] = spec.T1;
  s["T2"] = spec.T2;
  s["beta_20"] = spec.beta20;
  s["beta_4"] = spec.beta4;
  s["delta"] = spec.delta;
  s["delta_monitor"] = spec.monitor_delta();
  s["delta_monitor_source"] = setup.delta_source;
  s["steps"] = res.steps;
  s["log_every"] = res.log_every;
  s["final_time"] = final_state.t;
  s["final_error"] = fin.info_at("final_error");
  s["thm33_bound"] = fin.info_at("thm_bound");
  s["MR_inf"] = fin.info_at("MR_inf");
  s["MR_inf_beta4"] = fin.info_at("MR_inf_beta4");
  s["final_report"] = report_to_json(fin);
  s["first_warmup_violation"] = first_warmup;
  s["first_local_violation"] = first_local;
  s["t_sigma_r_A_reaches_sqrt_Yrr"] = sigma_reach;
  s["identity_failures"] = identity_failures;
  if (identity_failures > 0) s["first_identity_failure"] = first_identity_failure;
  s["ebound"] = {{"beta_run", beta_run(spec)}, {"applicable_rows", eb_applicable}, {"violations", eb_violations}};
  if (setup.cfg.derivative_checks) {
    s["derivative_checks"] = {{"active", deriv_active}, {"failed", deriv_failed}, {"first_failure", first_deriv_failure}};
  }
  s["assumptions"] = report_to_json(assumption_report(spec, setup.op.count()));
  s["init_check"] = report_to_json(check_init(setup.w0, spec));
  if (setup.cfg.rip_trials > 0 && setup.cfg.op_kind == OpKind::gaussian) {
    s["rip_estimate"] = check_rip(setup.cfg, setup.cfg.rip_trials);
  }
  if (setup.cfg.timing) {
    s["runtime_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  } else {
    s["runtime_seconds"] = nullptr;
  }
  return res;
}

std::string trajectory_csv(const RunResult& res) {
  std::string out = kTrajectoryHeader;
  out += '\n';
  for (const TrajectoryRow& r : res.rows) {
    const double vals[] = {r.sc.norm_W,      r.sc.norm_R,     r.sc.norm_imbalance, r.sc.norm_PAJW,
                           r.sc.norm_PNW,    r.sc.lambda1_PPX, r.sc.norm_F,        r.sc.norm_Wtilde,
                           r.sc.sigma_r_A,   r.sc.sigma_r1_W, r.norm_E,            r.MR_t,
                           r.sc.norm_PNWQ};
    out += fmt_double(r.t);
    out += ',' + std::to_string(r.k);
    for (double v : vals) out += ',' + fmt_double(v);
    out += ',' + std::to_string(r.warmup_mask);
    out += ',' + std::to_string(r.local_mask);
    out += r.ebound_applicable ? ",1" : ",0";
    out += r.ebound_pass ? ",1" : ",0";
    out += '\n';
  }
  return out;
}

void write_matrix(const fs::path& path, const Matrix& m, std::optional<double> t) {
  std::string bytes;
  bytes.reserve(m.entries().size() * 8);
  for (double x : m.entries()) {
    const auto bits = std::bit_cast<std::uint64_t>(x);
    for (int b = 0; b < 8; ++b) bytes.push_back(static_cast<char>((bits >> (8 * b)) & 0xFFu));
  }
  write_text(path, bytes);
  json side;
  side["t"] = t ? json(*t) : json(nullptr);
  side["rows"] = m.rows();
  side["cols"] = m.cols();
  write_text(fs::path(path.string() + ".json"), side.dump(2) + "\n");
}

Matrix read_matrix(const fs::path& path) {
  std::ifstream side(path.string() + ".json");
  if (!side) throw Error("missing sidecar for " + path.string());
  const json j = json::parse(side);
  Matrix m(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>());
  std::ifstream in(path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() != m.data().size() * 8) throw Error("snapshot size mismatch in " + path.string());
  for (std::size_t i = 0; i < m.data().size(); ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[8 * i + b])) << (8 * b);
    m.data()[i] = std::bit_cast<double>(bits);
  }
  return m;
}

void write_run(const RunResult& res, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  write_text(out_dir / "trajectory.csv", trajectory_csv(res));
  write_text(out_dir / "summary.json", res.summary.dump(2) + "\n");
  const double t_end = static_cast<double>(res.steps) * res.spec.eta;
  write_matrix(out_dir / "final_U.bin", res.U_final, t_end);
  write_matrix(out_dir / "final_V.bin", res.V_final, t_end);
  if (!res.snapshots.empty()) {
    const fs::path dir = out_dir / "snapshots";
    fs::create_directories(dir);
    for (std::size_t i = 0; i < res.snapshots.size(); ++i) {
      char name[32];
      std::snprintf(name, sizeof name, "W_%08zu.bin", res.rows[i].k);
      write_matrix(dir / name, res.snapshots[i], res.rows[i].t);
    }
  }
}

json flow_vs_gd(const ExperimentConfig& cfg, std::size_t probes) {
  Setup setup = prepare(cfg);
  const ProblemSpec& spec = setup.spec;
  const std::vector<std::size_t> picks = sample_indices(setup.steps, probes, derive_seed(setup.cfg.seed, kProbeStream));
  const std::set<std::size_t> chosen(picks.begin(), picks.end());

  double max_dev = 0.0, max_s0 = 0.0, max_guard = 0.0, max_ratio = 0.0;
  std::size_t applicable = 0, violations = 0;
  Matrix w = setup.w0;
  for (std::size_t k = 0; k < setup.steps; ++k) {
    StepRecord rec = tagged_step(w, k, setup.op, spec);
    if (chosen.contains(k)) {
      const StepFlow flow(rec);
      max_dev = std::max(max_dev, frobenius_norm(flow.interpolate(1.0) - rec.W_after) / frobenius_norm(rec.W_after));
      max_s0 = std::max(max_s0, frobenius_norm(flow.interpolate(0.0) - rec.W_before) / frobenius_norm(rec.W_before));
      max_guard = std::max(max_guard, rec.eta * op_norm(rec.Rtilde));
      const double ne = max_norm_e(flow, spec);
      const InvariantReport eb = e_bound_report(rec, ne, spec);
      if (eb.info_at("applicable") != 0.0) {
        ++applicable;
        const ReportItem& thm = eb.at("thm_E");
        max_ratio = std::max(max_ratio, thm.value / thm.bound);
        if (!eb.all_pass()) ++violations;
      }
    }
    w = std::move(rec.W_after);
  }
  json out;
  out["command"] = "flow-vs-gd";
  out["config"] = config_to_json(setup.cfg);
  out["steps"] = setup.steps;
  out["probes"] = picks.size();
  out["max_rel_deviation"] = max_dev;
  out["max_s0_deviation"] = max_s0;
  out["max_step_guard"] = max_guard;
  out["ebound"] = {{"beta_run", beta_run(spec)},
                   {"applicable", applicable},
                   {"violations", violations},
                   {"max_value_over_bound", max_ratio}};
  out["pass"] = max_dev <= 1e-8 && violations == 0;
  return out;
}

json check_rip(const ExperimentConfig& cfg, std::size_t trials, std::optional<std::size_t> probe_rank) {
  if (cfg.op_kind != OpKind::gaussian) {
    throw ConfigError("check-rip needs op_kind = gaussian; the identity operator is an exact isometry (use rho_target = 0)");
  }
  validate(cfg);
  const MeasOp op = build_operator(cfg);
  const std::size_t rank = probe_rank.value_or(cfg.r + 1);
  json out;
  out["command"] = "check-rip";
  out["N"] = op.count();
  out["probe_rank"] = rank;
  out["trials"] = trials;
  if (trials == 0) {
    out["rho_hat"] = 0.0;
    out["warning"] = "no trials; the estimate is vacuous";
  } else {
    out["rho_hat"] = estimate_rip(op, rank, trials, derive_seed(cfg.seed, kRipStream)).rho_hat;
  }
  out["rho_target"] = cfg.rho_target;
  out["pass"] = out["rho_hat"].get<double>() <= cfg.rho_target;
  out["caveat"] = "falsifier-only";
  return out;
}

namespace {

template <class Fn>
FdCheck fd_check(const StepFlow& flow, double s, double hc, double hf, const Matrix& analytic, Fn f) {
  const double eta = flow.record().eta;
  const auto central = [&](double hs) {
    return (1.0 / (2.0 * hs * eta)) * (f(flow.interpolate(s + hs)) - f(flow.interpolate(s - hs)));
  };
  FdCheck c;
  c.scale = frobenius_norm(analytic);
  c.err_h = frobenius_norm(central(hc) - analytic);
  c.err_h2 = frobenius_norm(central(0.5 * hc) - analytic);
  c.err_fine = frobenius_norm(central(hf) - analytic);
  // Roundoff level of the coarser differences; below it the ratio means nothing.
  // Quantities like Wtilde cancel down from |W|, so W sets the scale too.
  const Matrix ws = flow.interpolate(s);
  const double level = std::max(frobenius_norm(f(ws)), frobenius_norm(ws));
  const double floor = 1e2 * std::numeric_limits<double>::epsilon() * level / (0.5 * hc * eta);
  c.ratio = c.err_h2 > floor ? c.err_h / c.err_h2 : std::numeric_limits<double>::quiet_NaN();
  return c;
}

json fd_to_json(const FdCheck& c) {
  const json ratio = std::isnan(c.ratio) ? json(nullptr) : json(c.ratio);
  return {{"err_h", c.err_h}, {"err_h2", c.err_h2}, {"ratio", ratio}, {"err_fine", c.err_fine}, {"scale", c.scale}};
}

}  // namespace

DerivativeProbe probe_derivatives(const StepFlow& flow, double s, const ProblemSpec& spec, double h_coarse,
                                  double h_fine) {
  if (s - h_coarse < 0.0 || s + h_coarse > 1.0) throw InvalidArgument("probe_derivatives: s +- h must stay in [0, 1]");
  const LiftedState st = derive(flow.interpolate(s), spec, flow.time(s));
  const Matrix e = symmetrize(flow.perturbation(s, spec));
  DerivativeProbe p;
  p.k = flow.record().k;
  p.s = s;
  p.F = fd_check(flow, s, h_coarse, h_fine, dF_dt(st, e, spec), [&](const Matrix& w) { return derive(w, spec).F; });
  p.Wtilde = fd_check(flow, s, h_coarse, h_fine, dWtilde_dt(st, e, spec),
                      [&](const Matrix& w) { return derive(w, spec).Wtilde; });
  p.W = fd_check(flow, s, h_coarse, h_fine, flow.derivative_W(s), [](const Matrix& w) { return w; });
  return p;
}

json verify_derivatives(const ExperimentConfig& cfg, std::size_t probes) {
  Setup setup = prepare(cfg);
  const ProblemSpec& spec = setup.spec;
  const std::vector<std::size_t> picks = sample_indices(setup.steps, probes, derive_seed(setup.cfg.seed, kDerivStream));
  const std::set<std::size_t> chosen(picks.begin(), picks.end());
  SplitMix64 rng(derive_seed(setup.cfg.seed, kDerivStream + 1));

  json table = json::array();
  json skipped = json::array();
  double min_ratio = std::numeric_limits<double>::infinity();
  double max_ratio = 0.0, max_fine = 0.0;
  bool ok = true;
  Matrix w = setup.w0;
  for (std::size_t k = 0; k < setup.steps; ++k) {
    StepRecord rec = tagged_step(w, k, setup.op, spec);
    if (chosen.contains(k)) {
      const double s = 0.25 + 0.5 * rng.uniform();
      try {
        const DerivativeProbe p = probe_derivatives(StepFlow(rec), s, spec);
        for (const FdCheck* c : {&p.F, &p.Wtilde, &p.W}) {
          max_fine = std::max(max_fine, c->err_fine);
          if (c->err_fine > 1e-6) ok = false;
          if (std::isnan(c->ratio)) continue;
          min_ratio = std::min(min_ratio, c->ratio);
          max_ratio = std::max(max_ratio, c->ratio);
          if (c->ratio < 3.5 || c->ratio > 4.5) ok = false;
        }
        table.push_back({{"k", k}, {"s", s}, {"F", fd_to_json(p.F)}, {"Wtilde", fd_to_json(p.Wtilde)}, {"W", fd_to_json(p.W)}});
      } catch (const RankDeficient& e) {
        skipped.push_back({{"k", k}, {"s", s}, {"reason", e.what()}});
      }
    }
    w = std::move(rec.W_after);
  }
  json out;
  out["command"] = "verify-derivatives";
  out["config"] = config_to_json(setup.cfg);
  out["table"] = table;
  out["skipped"] = skipped;
  out["min_ratio"] = table.empty() ? json(nullptr) : json(min_ratio);
  out["max_ratio"] = table.empty() ? json(nullptr) : json(max_ratio);
  out["max_err_fine"] = max_fine;
  out["pass"] = ok;
  return out;
}

json sweep(const ExperimentConfig& base, std::size_t count, std::size_t threads,
           const std::optional<fs::path>& out_dir) {
  threads = std::max<std::size_t>(1, threads);
  std::vector<json> results(count);
  const auto one = [&](std::size_t i) {
    ExperimentConfig c = base;
    c.seed = derive_seed(base.seed, i);
    json r;
    r["index"] = i;
    r["seed"] = c.seed;
    try {
      const RunResult res = run(c);
      if (out_dir) {
        char name[32];
        std::snprintf(name, sizeof name, "run_%04zu", i);
        write_run(res, *out_dir / name);
      }
      r["final_error"] = res.summary["final_error"];
      r["first_warmup_violation"] = res.summary["first_warmup_violation"];
      r["first_local_violation"] = res.summary["first_local_violation"];
      r["ebound_violations"] = res.summary["ebound"]["violations"];
    } catch (const std::exception& e) {
      r["error"] = e.what();
    }
    return r;
  };
  for (std::size_t begin = 0; begin < count; begin += threads) {
    const std::size_t end = std::min(count, begin + threads);
    std::vector<std::future<json>> batch;
    for (std::size_t i = begin; i < end; ++i) batch.push_back(std::async(std::launch::async, one, i));
    for (std::size_t i = begin; i < end; ++i) results[i] = batch[i - begin].get();
  }
  json out;
  out["command"] = "sweep";
  out["config"] = config_to_json(base);
  out["count"] = count;
  out["runs"] = results;
  return out;
}

}  // namespace msense
