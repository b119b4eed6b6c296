// Python bindings: panel I/O, weight fitting, point estimates, randomization
// variances and the enumeration experiments, with numpy views of the matrices.

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "dbsc/errors.hpp"
#include "dbsc/estimate.hpp"
#include "dbsc/multitreat.hpp"
#include "dbsc/network.hpp"
#include "dbsc/panel.hpp"
#include "dbsc/randlab.hpp"
#include "dbsc/variance.hpp"
#include "dbsc/weights.hpp"

namespace py = pybind11;
using namespace dbsc;

namespace {

WeightSetSpec make_spec(const std::string& family, const std::vector<double>& propensities) {
  WeightSetSpec spec;
  spec.family = family_from_name(family);
  spec.propensities = propensities;
  return spec;
}

SolveControls make_controls(double ridge, int max_iterations, int workers) {
  SolveControls controls;
  controls.ridge = ridge;
  controls.max_iterations = max_iterations;
  controls.workers = workers;
  return controls;
}

PeriodScope make_scope(const std::optional<int>& period) {
  return period.has_value() ? PeriodScope::single(*period) : PeriodScope::all();
}

}  // namespace

PYBIND11_MODULE(_dbsc, m) {
  m.doc() = "Design-based synthetic control: weight fitting, estimates and "
            "randomization variances";

  py::register_exception<validation_error>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<solver_error>(m, "SolverError", PyExc_RuntimeError);

  py::class_<Panel>(m, "Panel")
      .def(py::init([](std::vector<std::string> units, std::vector<std::string> periods,
                       Eigen::MatrixXd y) {
             Panel panel;
             panel.units = std::move(units);
             panel.periods = std::move(periods);
             panel.y = std::move(y);
             panel.validate();
             return panel;
           }),
           py::arg("units"), py::arg("periods"), py::arg("y"))
      .def_readonly("units", &Panel::units)
      .def_readonly("periods", &Panel::periods)
      .def_readonly("y", &Panel::y)
      .def_property_readonly("n_units", &Panel::n_units)
      .def_property_readonly("n_periods", &Panel::n_periods)
      .def("unit_index", &Panel::unit_index, py::arg("label"))
      .def("period_index", &Panel::period_index, py::arg("label"),
           "Index of a period label; the keyword 'last' names the final period");

  m.def("load_panel_csv", &load_panel_csv, py::arg("path"));
  m.def("write_panel_csv", [](const Panel& panel, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw validation_error("cannot open '" + path + "' for writing");
    write_panel_csv(panel, out);
  }, py::arg("panel"), py::arg("path"));

  py::class_<WeightTensor>(m, "WeightTensor")
      .def_property_readonly("family",
                             [](const WeightTensor& t) { return family_name(t.family); })
      .def_readonly("units", &WeightTensor::units)
      .def_readonly("periods", &WeightTensor::periods)
      .def_readonly("objective", &WeightTensor::objective)
      .def_readonly("kkt", &WeightTensor::kkt)
      .def("covers", &WeightTensor::covers, py::arg("period"))
      .def("weights",
           [](const WeightTensor& t, int period) -> Eigen::MatrixXd {
             return t.w[static_cast<std::size_t>(t.slice_of(period))];
           },
           py::arg("period"), "Contrast matrix of the covered period (row = treated unit)")
      .def("intercepts",
           [](const WeightTensor& t, int period) -> Eigen::VectorXd {
             return t.intercepts[static_cast<std::size_t>(t.slice_of(period))];
           },
           py::arg("period"))
      .def("to_json", &weights_to_json);

  m.def("solve_weights",
        [](const Panel& panel, const std::string& family, const std::optional<int>& period,
           const std::vector<double>& propensities, double ridge, int max_iterations,
           int workers) {
          return solve_weights(panel, make_spec(family, propensities), make_scope(period),
                               make_controls(ridge, max_iterations, workers));
        },
        py::arg("panel"), py::arg("family") = "musc", py::arg("period") = std::nullopt,
        py::arg("propensities") = std::vector<double>{}, py::arg("ridge") = kDefaultRidge,
        py::arg("max_iterations") = kMaxIterations, py::arg("workers") = 0,
        "Fit the family's weight tensor; period=None fits every period");

  py::class_<Estimate>(m, "Estimate")
      .def_readonly("value", &Estimate::value)
      .def_readonly("counterfactual", &Estimate::counterfactual)
      .def_property_readonly("family",
                             [](const Estimate& e) { return family_name(e.family); });

  m.def("estimate",
        [](const Panel& panel, const WeightTensor& tensor, int unit, int period) {
          return gsc_estimate(panel, tensor, {unit, period});
        },
        py::arg("panel"), py::arg("tensor"), py::arg("unit"), py::arg("period"));

  m.def("exact_variance",
        [](const Eigen::MatrixXd& y0, const WeightTensor& tensor, int period) {
          return exact_variance(y0, tensor, period);
        },
        py::arg("y0"), py::arg("tensor"), py::arg("period"),
        "Randomization variance over the uniform treated-unit draw on the control schedule");

  m.def("unbiased_variance_estimate",
        [](const Panel& panel, const WeightTensor& tensor, int unit, int period,
           bool truncate_negative) {
          return unbiased_variance_estimate(panel, tensor, {unit, period}, truncate_negative);
        },
        py::arg("panel"), py::arg("tensor"), py::arg("unit"), py::arg("period"),
        py::arg("truncate_negative") = false);

  m.def("placebo_variance_estimate",
        [](const Panel& panel, const std::string& family, int unit, int period,
           const std::vector<double>& propensities) {
          return placebo_variance_estimate(panel, make_spec(family, propensities),
                                           {unit, period});
        },
        py::arg("panel"), py::arg("family"), py::arg("unit"), py::arg("period"),
        py::arg("propensities") = std::vector<double>{});

  py::class_<MultiWeightTensor>(m, "MultiWeightTensor")
      .def_property_readonly("n_subsets",
                             [](const MultiWeightTensor& mt) { return mt.index.size(); })
      .def_readonly("objective", &MultiWeightTensor::objective)
      .def_readonly("kkt", &MultiWeightTensor::kkt)
      .def_property_readonly("subsets",
                             [](const MultiWeightTensor& mt) { return mt.index.subsets; });

  m.def("solve_multi_weights",
        [](const Panel& panel, int n_treated, int period, double ridge, int max_iterations,
           int workers, int max_subsets) {
          return solve_multi_weights(panel, n_treated, PeriodScope::single(period),
                                     make_controls(ridge, max_iterations, workers), max_subsets);
        },
        py::arg("panel"), py::arg("n_treated"), py::arg("period"),
        py::arg("ridge") = kDefaultRidge, py::arg("max_iterations") = kMaxIterations,
        py::arg("workers") = 0, py::arg("max_subsets") = kMaxSubsets);

  m.def("multi_estimate",
        [](const Panel& panel, const MultiWeightTensor& mt, std::vector<int> units, int period) {
          return multi_gsc_estimate(panel, mt, units, period);
        },
        py::arg("panel"), py::arg("mt"), py::arg("units"), py::arg("period"));

  m.def("multi_unbiased_variance_estimate",
        [](const Panel& panel, const MultiWeightTensor& mt, std::vector<int> units, int period,
           bool leave_fold_out) {
          return multi_unbiased_variance_estimate(panel, mt, units, period, leave_fold_out);
        },
        py::arg("panel"), py::arg("mt"), py::arg("units"), py::arg("period"),
        py::arg("leave_fold_out") = false);

  m.def("unbiased_propensities",
        [](const WeightTensor& tensor, int period) {
          const PropensityResult result = unbiased_propensities(tensor, period);
          return py::make_tuple(Eigen::VectorXd(result.p), result.multiple_valid);
        },
        py::arg("tensor"), py::arg("period"),
        "Returns (propensity vector, multiple_valid flag)");

  m.def("eigenvector_centrality",
        [](const WeightTensor& tensor, int period) -> Eigen::VectorXd {
          return eigenvector_centrality(weights_to_network(tensor, period)).centrality;
        },
        py::arg("tensor"), py::arg("period"));

  m.def("unit_experiment_json",
        [](const Panel& panel, const std::vector<std::string>& families, int period,
           const std::vector<double>& propensities) {
          std::vector<WeightSetSpec> specs;
          specs.reserve(families.size());
          for (const std::string& family : families)
            specs.push_back(make_spec(family, propensities));
          return experiment_report_to_json(
              run_unit_randomization(zero_effect_panel(panel), specs, period));
        },
        py::arg("panel"), py::arg("families"), py::arg("period"),
        py::arg("propensities") = std::vector<double>{},
        "Enumerates every treated unit at the period on the panel taken as effect-free");

  m.def("time_experiment_json",
        [](const Panel& panel, const std::vector<std::string>& families, int unit,
           const std::vector<double>& propensities) {
          std::vector<WeightSetSpec> specs;
          specs.reserve(families.size());
          for (const std::string& family : families)
            specs.push_back(make_spec(family, propensities));
          return experiment_report_to_json(
              run_time_randomization(zero_effect_panel(panel), specs, unit));
        },
        py::arg("panel"), py::arg("families"), py::arg("unit"),
        py::arg("propensities") = std::vector<double>{});
}
