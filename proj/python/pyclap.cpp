#include <sstream>
#include <string>
#include <vector>

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "json.hpp"

#include "clap/config.hpp"
#include "clap/error.hpp"
#include "clap/harness.hpp"
#include "clap/objective.hpp"
#include "clap/theory.hpp"
#include "clap/trainer.hpp"

namespace py = pybind11;
using nlohmann::json;

namespace {

// JSON travels as text and is decoded with the stdlib json module.
py::object to_py(const json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

clap::harness::RunConfig make_config(const std::string& text, const std::map<std::string, std::string>& overrides) {
  auto c = clap::harness::parse_config(text);
  for (const auto& [k, v] : overrides) clap::harness::set_key(c, k, v);
  return c;
}

}  // namespace

PYBIND11_MODULE(pyclap, m) {
  m.doc() = "Causal layerwise peeling: objective pieces, theory checks and the experiment runner";
  m.attr("__version__") = clap::harness::kVersion;

  // Translators are tried newest first, so the base class goes first.
  py::register_exception<clap::Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<clap::DataError>(m, "DataError", PyExc_ValueError);
  py::register_exception<clap::ConfigError>(m, "ConfigError", PyExc_ValueError);

  m.def("rho_schedule", &clap::objective::rho_schedule, py::arg("layer"), py::arg("depth"), py::arg("rho_min"),
        py::arg("rho_max"), "Target correlation of one layer (1-based).");
  m.def("rho_targets", &clap::objective::rho_targets, py::arg("depth"), py::arg("rho_min"), py::arg("rho_max"));
  m.def(
      "pearson",
      [](const std::vector<double>& c, const std::vector<double>& y, double eps) {
        return clap::objective::pearson(c, y, eps);
      },
      py::arg("c"), py::arg("y"), py::arg("eps") = 1e-8);
  m.def(
      "score",
      [](const std::vector<double>& pred, const std::vector<double>& y) {
        return to_py(clap::trainer::to_json(clap::trainer::score(pred, y)));
      },
      py::arg("predictions"), py::arg("labels"), "MAE, MSE and R^2 as a dict.");

  m.def(
      "corr_closed_form",
      [](double kappa, double alpha, double rho, double a, double b, double sigma_c, double sigma_q) {
        clap::theory::TheoryScenario s;
        s.kappa = kappa;
        s.a = a;
        s.b = b;
        s.batches = {{.alpha = alpha, .rho = rho, .sigma_c = sigma_c, .sigma_q = sigma_q, .sigma_y = 1.0}};
        s.validate();
        return clap::theory::corr_closed_form(s, 0);
      },
      py::arg("kappa"), py::arg("alpha"), py::arg("rho"), py::arg("a") = 1.0, py::arg("b") = 0.0,
      py::arg("sigma_c") = 1.0, py::arg("sigma_q") = 1.0, "Within-batch Corr(a c + b q, y).");
  m.def(
      "verify_theory",
      [](std::size_t mc_draws, std::size_t residual_samples, std::uint64_t seed) {
        clap::theory::VerifyOptions o;
        o.mc_draws = mc_draws;
        o.residual_samples = residual_samples;
        o.seed = seed;
        py::list out;
        for (const auto& c : clap::theory::verify_all(clap::theory::default_scenario(), o)) {
          py::dict d;
          d["name"] = c.name;
          d["predicted"] = c.predicted;
          d["observed"] = c.observed;
          d["tolerance"] = c.tolerance;
          d["pass"] = c.pass;
          out.append(d);
        }
        return out;
      },
      py::arg("mc_draws") = 1000000, py::arg("residual_samples") = 100000, py::arg("seed") = 0);

  m.def("commands", &clap::harness::commands);
  m.def("config_keys", &clap::harness::config_keys);
  m.def(
      "parse_config",
      [](const std::string& text, const std::map<std::string, std::string>& overrides) {
        return to_py(clap::harness::to_json(make_config(text, overrides)));
      },
      py::arg("text") = "", py::arg("overrides") = std::map<std::string, std::string>{},
      "Parse config text, apply dotted-key overrides and return the resolved config.");
  m.def(
      "run",
      [](const std::string& command, const std::string& config_text,
         const std::map<std::string, std::string>& overrides) {
        const auto c = make_config(config_text, overrides);
        std::ostringstream out;
        {
          py::gil_scoped_release release;
          clap::harness::run_command(command, c, out);
        }
        return to_py(json::parse(out.str()));
      },
      py::arg("command"), py::arg("config_text") = "", py::arg("overrides") = std::map<std::string, std::string>{},
      "Run a CLI command in-process; returns its JSON summary.");
  m.def("ablation_variants", [] {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& v : clap::harness::variants()) out.emplace_back(v.name, v.label);
    return out;
  });
  m.def("diverging_color", &clap::harness::diverging_color, py::arg("pi"));
}
