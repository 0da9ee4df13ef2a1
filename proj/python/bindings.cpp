#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "msense/errors.hpp"
#include "msense/experiment.hpp"
#include "msense/linalg.hpp"

namespace py = pybind11;
using namespace msense;
using json = nlohmann::ordered_json;

namespace {

using NdArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

Matrix to_matrix(const NdArray& a) {
  if (a.ndim() != 2) throw ShapeMismatch("expected a 2-D array");
  Matrix m(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)));
  std::copy(a.data(), a.data() + a.size(), m.data().begin());
  return m;
}

py::array_t<double> to_numpy(const Matrix& m) {
  py::array_t<double> out({m.rows(), m.cols()});
  std::copy(m.entries().begin(), m.entries().end(), out.mutable_data());
  return out;
}

py::array_t<double> to_numpy(const Vector& v) {
  py::array_t<double> out(static_cast<py::ssize_t>(v.size()));
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

py::object to_py(const json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

json from_py(const py::object& o) {
  return json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

py::dict report_dict(const InvariantReport& rep) {
  py::dict items;
  for (const ReportItem& it : rep.items) {
    py::dict d;
    d["value"] = it.value;
    d["bound"] = it.bound;
    d["margin"] = it.margin;
    d["pass"] = it.pass;
    d["active"] = it.active;
    d["kind"] = it.kind == BoundKind::lower ? "lower" : "upper";
    items[py::str(it.id)] = d;
  }
  py::dict info;
  for (const auto& [key, value] : rep.info) info[py::str(key)] = value;
  py::dict out;
  out["t"] = rep.t;
  out["all_pass"] = rep.all_pass();
  out["items"] = items;
  out["info"] = info;
  return out;
}

py::dict state_dict(const LiftedState& s) {
  py::dict d;
  d["t"] = s.t;
  d["W"] = to_numpy(s.W);
  d["A"] = to_numpy(s.A);
  d["Adag"] = to_numpy(s.Adag);
  d["Q"] = to_numpy(s.Q);
  d["Wtilde"] = to_numpy(s.Wtilde);
  d["F"] = to_numpy(s.F);
  d["R"] = to_numpy(s.R);
  d["X"] = to_numpy(s.X);
  d["imbalance"] = to_numpy(s.imbalance);
  return d;
}

}  // namespace

PYBIND11_MODULE(_msense, m) {
  m.doc() = "Factorized gradient descent for matrix sensing, lifted-model monitors and experiment drivers.";

  static py::exception<Error> base(m, "Error", PyExc_RuntimeError);
  py::register_exception<ShapeMismatch>(m, "ShapeMismatch", base.ptr());
  py::register_exception<DimensionError>(m, "DimensionError", base.ptr());
  py::register_exception<InvalidArgument>(m, "InvalidArgument", base.ptr());
  py::register_exception<RankDeficient>(m, "RankDeficient", base.ptr());
  py::register_exception<RankTooHigh>(m, "RankTooHigh", base.ptr());
  py::register_exception<NotSymmetric>(m, "NotSymmetric", base.ptr());
  py::register_exception<ZeroMatrix>(m, "ZeroMatrix", base.ptr());
  py::register_exception<StepTooLarge>(m, "StepTooLarge", base.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());

  m.attr("__version__") = kVersion;

  py::class_<ProblemSpec>(m, "ProblemSpec")
      .def_readonly("m", &ProblemSpec::m)
      .def_readonly("n", &ProblemSpec::n)
      .def_readonly("r", &ProblemSpec::r)
      .def_readonly("h", &ProblemSpec::h)
      .def_readonly("normY", &ProblemSpec::normY)
      .def_readonly("Yrr", &ProblemSpec::Yrr)
      .def_readonly("kappa", &ProblemSpec::kappa)
      .def_readonly("gamma", &ProblemSpec::gamma)
      .def_readonly("alpha", &ProblemSpec::alpha)
      .def_readonly("delta", &ProblemSpec::delta)
      .def_readonly("epsilon", &ProblemSpec::epsilon)
      .def_readonly("eta", &ProblemSpec::eta)
      .def_readonly("rho_target", &ProblemSpec::rho_target)
      .def_readonly("T1", &ProblemSpec::T1)
      .def_readonly("T2", &ProblemSpec::T2)
      .def_readonly("beta20", &ProblemSpec::beta20)
      .def_readonly("beta4", &ProblemSpec::beta4)
      .def_property_readonly("monitor_delta", &ProblemSpec::monitor_delta)
      .def_property_readonly("Y", [](const ProblemSpec& s) { return to_numpy(s.Y); });

  m.def(
      "make_spec",
      [](const NdArray& y, std::size_t r, std::size_t h, double alpha, double delta, double epsilon, double eta,
         double rho_target, std::optional<double> delta_eff) {
        ProblemParams p;
        p.r = r;
        p.h = h;
        p.alpha = alpha;
        p.delta = delta;
        p.epsilon = epsilon;
        p.eta = eta;
        p.rho_target = rho_target;
        p.delta_eff = delta_eff;
        return make_spec(to_matrix(y), p);
      },
      py::arg("Y"), py::arg("r"), py::arg("h"), py::arg("alpha"), py::arg("delta"), py::arg("epsilon"),
      py::arg("eta"), py::arg("rho_target") = 0.0, py::arg("delta_eff") = std::nullopt,
      "Problem spec for a canonical (diagonal, descending) target Y.");
  m.def("with_monitor_delta", &with_monitor_delta, py::arg("spec"), py::arg("delta_eff"));
  m.def(
      "canonicalize",
      [](const NdArray& y) {
        const Canonical c = canonicalize(to_matrix(y));
        return py::make_tuple(to_numpy(c.Y), to_numpy(c.left_rot), to_numpy(c.right_rot));
      },
      py::arg("Y"), "Returns (Y, left_rot, right_rot) with Y_raw = left_rot Y right_rot^T.");

  py::class_<MeasOp>(m, "MeasOp")
      .def_property_readonly("m", &MeasOp::m)
      .def_property_readonly("n", &MeasOp::n)
      .def_property_readonly("count", &MeasOp::count)
      .def_property_readonly("kind", [](const MeasOp& op) { return to_string(op.kind()); });
  m.def("gaussian_operator", &gaussian_operator, py::arg("m"), py::arg("n"), py::arg("count"), py::arg("seed"));
  m.def("identity_operator", &identity_operator, py::arg("m"), py::arg("n"));
  m.def(
      "apply", [](const MeasOp& op, const NdArray& x) { return to_numpy(apply(op, to_matrix(x))); }, py::arg("op"),
      py::arg("X"));
  m.def(
      "adjoint",
      [](const MeasOp& op, const py::array_t<double, py::array::c_style | py::array::forcecast>& y) {
        return to_numpy(adjoint(op, std::span<const double>(y.data(), static_cast<std::size_t>(y.size()))));
      },
      py::arg("op"), py::arg("y"));
  m.def(
      "estimate_rip",
      [](const MeasOp& op, std::size_t probe_rank, std::size_t trials, std::uint64_t seed) {
        return estimate_rip(op, probe_rank, trials, seed).rho_hat;
      },
      py::arg("op"), py::arg("probe_rank"), py::arg("trials"), py::arg("seed"));

  m.def(
      "derive", [](const NdArray& w, const ProblemSpec& spec, double t) { return state_dict(derive(to_matrix(w), spec, t)); },
      py::arg("W"), py::arg("spec"), py::arg("t") = 0.0);
  m.def(
      "init_random", [](const ProblemSpec& spec, double c, std::uint64_t seed) { return to_numpy(init_random(spec, c, seed)); },
      py::arg("spec"), py::arg("C"), py::arg("seed"));
  m.def(
      "init_scaled_identity", [](const ProblemSpec& spec) { return to_numpy(init_scaled_identity(spec)); },
      py::arg("spec"));

  py::class_<StepFlow>(m, "StepFlow", "One GD step together with the exact flow through it.")
      .def(py::init([](const NdArray& w, std::size_t k, const MeasOp& op, const ProblemSpec& spec) {
             return StepFlow(gd_step_lifted(to_matrix(w), k, op, spec));
           }),
           py::arg("W"), py::arg("k"), py::arg("op"), py::arg("spec"))
      .def_property_readonly("W_before", [](const StepFlow& f) { return to_numpy(f.record().W_before); })
      .def_property_readonly("W_after", [](const StepFlow& f) { return to_numpy(f.record().W_after); })
      .def_property_readonly("Rtilde", [](const StepFlow& f) { return to_numpy(f.record().Rtilde); })
      .def_property_readonly("generator", [](const StepFlow& f) { return to_numpy(f.generator()); })
      .def("time", &StepFlow::time, py::arg("s"))
      .def("interpolate", [](const StepFlow& f, double s) { return to_numpy(f.interpolate(s)); }, py::arg("s"))
      .def(
          "perturbation", [](const StepFlow& f, double s, const ProblemSpec& spec) { return to_numpy(f.perturbation(s, spec)); },
          py::arg("s"), py::arg("spec"))
      .def("derivative_W", [](const StepFlow& f, double s) { return to_numpy(f.derivative_W(s)); }, py::arg("s"))
      .def(
          "e_bound_report",
          [](const StepFlow& f, double s, const ProblemSpec& spec) { return report_dict(e_bound_report(f, s, spec)); },
          py::arg("s"), py::arg("spec"));

  m.def(
      "dF_dt",
      [](const NdArray& w, const NdArray& e, const ProblemSpec& spec) {
        return to_numpy(dF_dt(derive(to_matrix(w), spec), to_matrix(e), spec));
      },
      py::arg("W"), py::arg("E"), py::arg("spec"));
  m.def(
      "dWtilde_dt",
      [](const NdArray& w, const NdArray& e, const ProblemSpec& spec) {
        return to_numpy(dWtilde_dt(derive(to_matrix(w), spec), to_matrix(e), spec));
      },
      py::arg("W"), py::arg("E"), py::arg("spec"));

  m.def(
      "warmup_report",
      [](const NdArray& w, const ProblemSpec& spec, double t) { return report_dict(warmup_report(derive(to_matrix(w), spec, t), spec)); },
      py::arg("W"), py::arg("spec"), py::arg("t") = 0.0);
  m.def(
      "local_report",
      [](const NdArray& w, const ProblemSpec& spec, double t) { return report_dict(local_report(derive(to_matrix(w), spec, t), spec)); },
      py::arg("W"), py::arg("spec"), py::arg("t"));
  m.def(
      "identity_suite",
      [](const NdArray& w, const ProblemSpec& spec) { return report_dict(identity_suite(derive(to_matrix(w), spec), spec)); },
      py::arg("W"), py::arg("spec"));
  m.def(
      "assumption_report",
      [](const ProblemSpec& spec, std::size_t count) { return report_dict(assumption_report(spec, count)); },
      py::arg("spec"), py::arg("op_count"));
  m.def(
      "final_error_report",
      [](const NdArray& w, const ProblemSpec& spec) { return report_dict(final_error_report(derive(to_matrix(w), spec, spec.T2), spec)); },
      py::arg("W"), py::arg("spec"));
  m.def(
      "minimal_delta_eff", [](const NdArray& w, const ProblemSpec& spec) { return minimal_delta_eff(derive(to_matrix(w), spec), spec); },
      py::arg("W0"), py::arg("spec"));

  m.def(
      "run",
      [](const py::dict& config, std::optional<std::string> out_dir) {
        const ExperimentConfig cfg = config_from_json(from_py(config));
        RunResult res;
        {
          py::gil_scoped_release release;
          res = run(cfg);
          if (out_dir) write_run(res, *out_dir);
        }
        py::dict out;
        out["csv"] = trajectory_csv(res);
        out["summary"] = to_py(res.summary);
        out["U"] = to_numpy(res.U_final);
        out["V"] = to_numpy(res.V_final);
        return out;
      },
      py::arg("config"), py::arg("out_dir") = std::nullopt,
      "Runs one experiment. Returns {csv, summary, U, V}; writes artifacts when out_dir is given.");
  m.def(
      "flow_vs_gd",
      [](const py::dict& config, std::size_t probes) { return to_py(flow_vs_gd(config_from_json(from_py(config)), probes)); },
      py::arg("config"), py::arg("probes") = 0);
  m.def(
      "check_rip",
      [](const py::dict& config, std::size_t trials) { return to_py(check_rip(config_from_json(from_py(config)), trials)); },
      py::arg("config"), py::arg("trials") = 200);
  m.def(
      "verify_derivatives",
      [](const py::dict& config, std::size_t probes) {
        return to_py(verify_derivatives(config_from_json(from_py(config)), probes));
      },
      py::arg("config"), py::arg("probes") = 20);
}
