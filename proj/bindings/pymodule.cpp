// Python bindings for the shiftlab core. Matrices cross the boundary as
// lists of rows; configs and reports as JSON text (decoded on the python
// side), so the module needs no numpy and the report bytes stay identical
// to the CLI's.
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <string>
#include <vector>

#include "shiftlab/alignment.hpp"
#include "shiftlab/cumix.hpp"
#include "shiftlab/dataset.hpp"
#include "shiftlab/masks.hpp"
#include "shiftlab/mib.hpp"
#include "shiftlab/numerics.hpp"
#include "shiftlab/openworld.hpp"
#include "shiftlab/scenarios.hpp"

#ifndef SHIFTLAB_VERSION
#define SHIFTLAB_VERSION "0.1.0"
#endif

namespace py = pybind11;

namespace {

using shiftlab::Matrix;

std::vector<std::vector<double>> to_rows(const Matrix& m) {
  std::vector<std::vector<double>> rows(m.rows);
  for (std::size_t i = 0; i < m.rows; ++i) rows[i] = m.row(i);
  return rows;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "shiftlab core: domain and semantic shift adaptation";

  m.def("version", [] { return std::string(SHIFTLAB_VERSION); });

  // --- experiment runner ------------------------------------------------
  m.def("scenario_names", &shiftlab::scenario_names);
  m.def(
      "run_scenario_json",
      [](const std::string& config_json) {
        return shiftlab::report_to_json(
            shiftlab::run_scenario(shiftlab::config_from_json(config_json)));
      },
      py::arg("config_json"),
      "Run one scenario from a config JSON string; returns the report JSON.");
  m.def("format_report_json", [](const std::string& report_json) {
    return shiftlab::format_report(shiftlab::report_from_json(report_json));
  });

  // --- gradient audit -----------------------------------------------------
  m.def("gradcheck_ops", &shiftlab::gradcheck_ops);
  m.def(
      "run_gradcheck",
      [](const std::string& op, std::size_t trials, double tolerance,
         std::uint64_t seed) {
        const shiftlab::GradcheckReport r =
            shiftlab::run_gradcheck(op, trials, tolerance, seed);
        py::dict out;
        out["op"] = r.op;
        out["trials"] = r.trials;
        out["tolerance"] = r.tolerance;
        out["max_rel_error"] = r.max_rel_error;
        out["pass"] = r.pass;
        return out;
      },
      py::arg("op"), py::arg("trials") = 100, py::arg("tolerance") = 1e-6,
      py::arg("seed") = 1234);

  // --- datasets ------------------------------------------------------------
  m.def(
      "gen_synthetic_text",
      [](const std::string& spec_json, std::uint64_t seed) {
        return shiftlab::dataset_to_string(
            shiftlab::gen_synthetic(shiftlab::spec_from_json(spec_json), seed));
      },
      py::arg("spec_json") = "{}", py::arg("seed") = 0);
  m.def("parse_dataset", [](const std::string& text) {
    const shiftlab::FeatureDataset ds = shiftlab::dataset_from_string(text);
    py::dict out;
    out["dim"] = ds.dim;
    out["classes"] = shiftlab::dataset_classes(ds);
    out["domains"] = shiftlab::dataset_domains(ds);
    out["features"] = to_rows(ds.features);
    out["labels"] = ds.labels;
    out["domain_of"] = ds.domains;
    out["attributes"] = ds.attributes;
    return out;
  });

  // --- normalization -------------------------------------------------------
  m.def(
      "mda_normalize",
      [](const std::vector<std::vector<double>>& x,
         const std::vector<std::vector<double>>& w,
         const std::vector<double>& gamma, const std::vector<double>& beta) {
        const Matrix mx = shiftlab::from_rows(x);
        const Matrix mw = shiftlab::from_rows(w);
        return to_rows(shiftlab::mda_forward(
            mx, mw, shiftlab::mda_statistics(mx, mw), gamma, beta));
      },
      py::arg("x"), py::arg("weights"), py::arg("gamma"), py::arg("beta"),
      "Weighted multi-domain normalization with batch statistics.");

  // --- assorted primitives ---------------------------------------------------
  m.def("softmax", &shiftlab::softmax, py::arg("logits"));
  m.def("schedule", &shiftlab::schedule, py::arg("s"), py::arg("warmup"),
        py::arg("beta_max"));
  m.def("mix3", &shiftlab::mix3, py::arg("anchor"), py::arg("cross_domain"),
        py::arg("same_domain"), py::arg("lam"), py::arg("gamma"));
  m.def("param_overhead", &shiftlab::param_overhead, py::arg("base_params"),
        py::arg("bits_per_param"), py::arg("tasks"));
  m.def(
      "miou",
      [](const std::vector<int>& predictions, const std::vector<int>& labels,
         std::size_t classes) {
        const shiftlab::IouReport r =
            shiftlab::miou(predictions, labels, classes);
        return py::make_tuple(r.mean, r.per_class);
      },
      py::arg("predictions"), py::arg("labels"), py::arg("classes"));
  m.def(
      "owr_metrics",
      [](const std::vector<int>& closed, const std::vector<int>& closed_rej,
         const std::vector<int>& labels, const std::vector<int>& open) {
        const shiftlab::OwrReport r =
            shiftlab::owr_metrics(closed, closed_rej, labels, open);
        py::dict out;
        out["closed_acc"] = r.closed_acc;
        out["closed_rej_acc"] = r.closed_rej_acc;
        out["open_acc"] = r.open_acc;
        out["owr"] = r.owr;
        out["owr_h"] = r.owr_h;
        return out;
      },
      py::arg("closed_preds"), py::arg("closed_rej_preds"),
      py::arg("closed_labels"), py::arg("open_preds"));
  m.attr("UNKNOWN") = shiftlab::kUnknown;
}
