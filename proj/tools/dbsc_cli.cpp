// Command-line surface for panel fitting, variance estimation, network
// diagnostics and randomization experiments. Exit codes: 0 on success, 2 on
// validation errors (bad flags, malformed input, violated preconditions),
// 3 when the weight solver cannot certify a solution.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "dbsc/errors.hpp"
#include "dbsc/estimate.hpp"
#include "dbsc/multitreat.hpp"
#include "dbsc/network.hpp"
#include "dbsc/panel.hpp"
#include "dbsc/randlab.hpp"
#include "dbsc/variance.hpp"
#include "dbsc/weights.hpp"

namespace {

using nlohmann::ordered_json;

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> items;
  std::stringstream stream(text);
  std::string item;
  while (std::getline(stream, item, ',')) {
    if (!item.empty()) items.push_back(item);
  }
  return items;
}

std::vector<double> parse_doubles(const std::string& text) {
  std::vector<double> values;
  for (const std::string& item : split_list(text)) {
    std::size_t used = 0;
    const double value = std::stod(item, &used);
    dbsc::require(used == item.size(), "could not parse '" + item + "' as a number");
    values.push_back(value);
  }
  return values;
}

void emit_output(const std::string& path, const std::string& text) {
  if (path.empty()) {
    std::cout << text;
    if (text.empty() || text.back() != '\n') std::cout << '\n';
    return;
  }
  std::ofstream out(path);
  dbsc::require(out.good(), "cannot open output file '" + path + "'");
  out << text;
  if (text.empty() || text.back() != '\n') out << '\n';
  dbsc::require(out.good(), "failed writing output file '" + path + "'");
}

// Options shared by the single-assignment commands.
struct FitOptions {
  std::string panel_path;
  std::string family = "musc";
  std::string treated_unit;
  std::string treated_period = "last";
  std::string propensities;
  std::string control_panel_path;
  std::string output;
  std::string emit = "json";
  bool full_period_scope = false;
  bool variance = true;
  bool placebo = false;
  bool truncate_negative = false;
  double ridge = dbsc::kDefaultRidge;
  int max_iterations = dbsc::kMaxIterations;
  int workers = 0;
};

struct NetworkOptions {
  std::string panel_path;
  std::string family = "sc";
  std::string treated_period = "last";
  std::string output;
  std::string emit = "json";
  double ridge = dbsc::kDefaultRidge;
  int max_iterations = dbsc::kMaxIterations;
  int workers = 0;
};

struct SimulateOptions {
  std::string panel_path;
  bool synthetic = false;
  int adversarial_units = 0;
  int units = 8;
  int periods = 12;
  double ar = 0.0;
  std::string covariance = "identity";
  double correlation = 0.0;
  std::string design = "uniform-unit";
  std::string families = "dim,did,sc,msc,usc,musc";
  std::string treated_unit;
  std::string treated_period = "last";
  std::string propensities;
  int draws = 10000;
  std::uint64_t seed = 1;
  int n_treated = 1;
  int k_max = dbsc::kMaxSubsets;
  bool no_variance_estimates = false;
  std::string output;
  std::string emit = "table";
  double ridge = dbsc::kDefaultRidge;
  int max_iterations = dbsc::kMaxIterations;
  int workers = 0;
};

struct MultiOptions {
  std::string panel_path;
  std::string treated_units;
  std::string treated_period = "last";
  bool variance = true;
  bool leave_fold_out = false;
  bool include_weights = false;
  int k_max = dbsc::kMaxSubsets;
  std::string output;
  std::string emit = "json";
  double ridge = dbsc::kDefaultRidge;
  int max_iterations = dbsc::kMaxIterations;
  int workers = 0;
};

dbsc::SolveControls make_controls(double ridge, int max_iterations, int workers) {
  dbsc::SolveControls controls;
  controls.ridge = ridge;
  controls.max_iterations = max_iterations;
  controls.workers = workers;
  return controls;
}

dbsc::WeightSetSpec make_spec(const std::string& family, const std::string& propensities) {
  dbsc::WeightSetSpec spec;
  spec.family = dbsc::family_from_name(family);
  if (!propensities.empty()) spec.propensities = parse_doubles(propensities);
  return spec;
}

std::string format_double(double value) {
  char buffer[40];
  std::snprintf(buffer, sizeof(buffer), "%.10g", value);
  return buffer;
}

void run_fit(const FitOptions& opt) {
  const dbsc::Panel panel = dbsc::load_panel_csv(opt.panel_path);
  const dbsc::WeightSetSpec spec = make_spec(opt.family, opt.propensities);
  const dbsc::Assignment a{panel.unit_index(opt.treated_unit),
                           panel.period_index(opt.treated_period)};
  const dbsc::SolveControls controls = make_controls(opt.ridge, opt.max_iterations, opt.workers);
  const dbsc::PeriodScope scope =
      opt.full_period_scope ? dbsc::PeriodScope::all() : dbsc::PeriodScope::single(a.period);

  const dbsc::WeightTensor tensor = dbsc::solve_weights(panel, spec, scope, controls);
  const dbsc::Estimate estimate = dbsc::gsc_estimate(panel, tensor, a);

  std::optional<dbsc::VarianceReport> variance;
  dbsc::Panel control_panel;
  if (opt.variance || opt.placebo) {
    dbsc::VarianceRequest request;
    request.unbiased = opt.variance;
    request.placebo = opt.placebo;
    request.truncate_negative = opt.truncate_negative;
    if (!opt.control_panel_path.empty()) {
      control_panel = dbsc::load_panel_csv(opt.control_panel_path);
      dbsc::require(control_panel.n_units() == panel.n_units() &&
                        control_panel.n_periods() == panel.n_periods(),
                    "control panel dimensions must match the observed panel");
      request.y0 = &control_panel.y;
    }
    variance = dbsc::variance_report(panel, tensor, spec, a, request, controls);
  }

  if (opt.emit == "json") {
    ordered_json doc;
    doc["family"] = dbsc::family_name(spec.family);
    doc["treated_unit"] = opt.treated_unit;
    doc["treated_period"] = panel.periods[static_cast<std::size_t>(a.period)];
    doc["estimate"] = ordered_json::parse(dbsc::estimate_to_json(estimate, tensor));
    if (variance)
      doc["variance"] =
          ordered_json::parse(dbsc::variance_report_to_json(*variance, panel.periods));
    doc["weights"] = ordered_json::parse(dbsc::weights_to_json(tensor));
    emit_output(opt.output, doc.dump(2));
    return;
  }

  std::ostringstream out;
  out << "family:          " << dbsc::family_name(spec.family) << "\n";
  out << "treated unit:    " << opt.treated_unit << " @ "
      << panel.periods[static_cast<std::size_t>(a.period)] << "\n";
  out << "estimate:        " << format_double(estimate.value) << "\n";
  out << "counterfactual:  " << format_double(estimate.counterfactual) << "\n";
  if (variance && variance->unbiased_estimate) {
    out << "variance:        " << format_double(*variance->unbiased_estimate);
    if (variance->negative_estimate) out << " (negative estimate)";
    if (variance->truncated) out << " (truncated)";
    out << "\n";
    out << "standard error:  "
        << format_double(dbsc::standard_error(*variance->unbiased_estimate)) << "\n";
  }
  if (variance && variance->exact)
    out << "exact variance:  " << format_double(*variance->exact) << "\n";
  if (variance && variance->placebo_estimate)
    out << "placebo variance: " << format_double(*variance->placebo_estimate) << "\n";
  out << "objective:       " << format_double(tensor.objective) << "\n";
  out << "kkt residual:    " << format_double(tensor.kkt) << "\n";
  out << "weights @ " << panel.periods[static_cast<std::size_t>(a.period)] << ":\n";
  out << dbsc::weights_slice_to_csv(tensor, a.period);
  emit_output(opt.output, out.str());
}

void run_variance(const FitOptions& opt) {
  const dbsc::Panel panel = dbsc::load_panel_csv(opt.panel_path);
  const dbsc::WeightSetSpec spec = make_spec(opt.family, opt.propensities);
  const dbsc::Assignment a{panel.unit_index(opt.treated_unit),
                           panel.period_index(opt.treated_period)};
  const dbsc::SolveControls controls = make_controls(opt.ridge, opt.max_iterations, opt.workers);

  const dbsc::WeightTensor tensor =
      dbsc::solve_weights(panel, spec, dbsc::PeriodScope::single(a.period), controls);

  dbsc::VarianceRequest request;
  request.unbiased = true;
  request.placebo = opt.placebo;
  request.truncate_negative = opt.truncate_negative;
  dbsc::Panel control_panel;
  if (!opt.control_panel_path.empty()) {
    control_panel = dbsc::load_panel_csv(opt.control_panel_path);
    dbsc::require(control_panel.n_units() == panel.n_units() &&
                      control_panel.n_periods() == panel.n_periods(),
                  "control panel dimensions must match the observed panel");
    request.y0 = &control_panel.y;
  }
  const dbsc::VarianceReport report =
      dbsc::variance_report(panel, tensor, spec, a, request, controls);

  if (opt.emit == "json") {
    emit_output(opt.output, dbsc::variance_report_to_json(report, panel.periods));
    return;
  }
  std::ostringstream out;
  out << "family:          " << dbsc::family_name(report.family) << "\n";
  out << "units:           " << report.n_units << "\n";
  out << "treated period:  " << panel.periods[static_cast<std::size_t>(report.treated_period)]
      << "\n";
  if (report.unbiased_estimate) {
    out << "variance:        " << format_double(*report.unbiased_estimate);
    if (report.negative_estimate) out << " (negative estimate)";
    if (report.truncated) out << " (truncated)";
    out << "\n";
    out << "standard error:  "
        << format_double(dbsc::standard_error(*report.unbiased_estimate)) << "\n";
  }
  if (report.exact) out << "exact variance:  " << format_double(*report.exact) << "\n";
  if (report.placebo_estimate)
    out << "placebo variance: " << format_double(*report.placebo_estimate) << "\n";
  emit_output(opt.output, out.str());
}

void run_placebo(const FitOptions& opt) {
  const dbsc::Panel panel = dbsc::load_panel_csv(opt.panel_path);
  const dbsc::WeightSetSpec spec = make_spec(opt.family, opt.propensities);
  const dbsc::Assignment a{panel.unit_index(opt.treated_unit),
                           panel.period_index(opt.treated_period)};
  const dbsc::SolveControls controls = make_controls(opt.ridge, opt.max_iterations, opt.workers);
  const double placebo = dbsc::placebo_variance_estimate(panel, spec, a, controls);

  if (opt.emit == "json") {
    ordered_json doc;
    doc["family"] = dbsc::family_name(spec.family);
    doc["treated_unit"] = opt.treated_unit;
    doc["treated_period"] = panel.periods[static_cast<std::size_t>(a.period)];
    doc["placebo_variance"] = placebo;
    doc["placebo_standard_error"] = dbsc::standard_error(placebo);
    emit_output(opt.output, doc.dump(2));
    return;
  }
  std::ostringstream out;
  out << "family:           " << dbsc::family_name(spec.family) << "\n";
  out << "treated unit:     " << opt.treated_unit << " @ "
      << panel.periods[static_cast<std::size_t>(a.period)] << "\n";
  out << "placebo variance: " << format_double(placebo) << "\n";
  out << "standard error:   " << format_double(dbsc::standard_error(placebo)) << "\n";
  emit_output(opt.output, out.str());
}

void run_network(const NetworkOptions& opt) {
  const dbsc::Panel panel = dbsc::load_panel_csv(opt.panel_path);
  dbsc::WeightSetSpec spec;
  spec.family = dbsc::family_from_name(opt.family);
  const int period = panel.period_index(opt.treated_period);
  const dbsc::SolveControls controls = make_controls(opt.ridge, opt.max_iterations, opt.workers);

  const dbsc::WeightTensor tensor =
      dbsc::solve_weights(panel, spec, dbsc::PeriodScope::single(period), controls);
  const dbsc::FlowNetwork net = dbsc::weights_to_network(tensor, period);

  if (opt.emit == "dot") {
    emit_output(opt.output, dbsc::network_to_dot(net));
    return;
  }

  const Eigen::VectorXd balance = dbsc::flow_balance(net);
  const dbsc::ComponentLabels components = dbsc::strongly_connected_components(net);

  std::optional<dbsc::PropensityResult> propensities;
  std::string propensity_error;
  try {
    propensities = dbsc::unbiased_propensities(tensor, period);
  } catch (const std::exception& failure) {
    propensity_error = failure.what();
  }

  std::optional<dbsc::CentralityResult> centrality;
  std::string centrality_error;
  try {
    centrality = dbsc::eigenvector_centrality(net);
  } catch (const std::exception& failure) {
    centrality_error = failure.what();
  }

  if (opt.emit == "json") {
    ordered_json doc = ordered_json::parse(dbsc::network_to_json(net));
    doc["family"] = dbsc::family_name(spec.family);
    doc["treated_period"] = panel.periods[static_cast<std::size_t>(period)];
    doc["balance"] = ordered_json::array();
    for (int i = 0; i < balance.size(); ++i) doc["balance"].push_back(balance[i]);
    doc["components"] = components.n_components;
    doc["strongly_connected"] = components.strongly_connected;
    if (propensities) {
      doc["propensities"] = ordered_json::array();
      for (int i = 0; i < propensities->p.size(); ++i)
        doc["propensities"].push_back(propensities->p[i]);
      doc["propensities_multiple_valid"] = propensities->multiple_valid;
    } else {
      doc["propensity_error"] = propensity_error;
    }
    if (centrality) {
      doc["centrality"] = ordered_json::array();
      for (int i = 0; i < centrality->centrality.size(); ++i)
        doc["centrality"].push_back(centrality->centrality[i]);
      doc["centrality_iterations"] = centrality->iterations;
      doc["centrality_shifted"] = centrality->shifted;
    } else {
      doc["centrality_error"] = centrality_error;
    }
    emit_output(opt.output, doc.dump(2));
    return;
  }

  std::ostringstream out;
  out << "family:         " << dbsc::family_name(spec.family) << " @ "
      << panel.periods[static_cast<std::size_t>(period)] << "\n";
  out << "units:         ";
  for (const std::string& label : net.labels) out << " " << label;
  out << "\nflows (row gives weight to column):\n";
  for (int i = 0; i < net.size(); ++i) {
    out << " ";
    for (int j = 0; j < net.size(); ++j) out << " " << format_double(net.w(i, j));
    out << "\n";
  }
  out << "balance:       ";
  for (int i = 0; i < balance.size(); ++i) out << " " << format_double(balance[i]);
  out << "\ncomponents:     " << components.n_components
      << (components.strongly_connected ? " (strongly connected)" : "") << "\n";
  if (propensities) {
    out << "propensities:  ";
    for (int i = 0; i < propensities->p.size(); ++i)
      out << " " << format_double(propensities->p[i]);
    if (propensities->multiple_valid) out << " (not unique)";
    out << "\n";
  } else {
    out << "propensities:   unavailable (" << propensity_error << ")\n";
  }
  if (centrality) {
    out << "centrality:    ";
    for (int i = 0; i < centrality->centrality.size(); ++i)
      out << " " << format_double(centrality->centrality[i]);
    out << "\n";
  } else {
    out << "centrality:     unavailable (" << centrality_error << ")\n";
  }
  emit_output(opt.output, out.str());
}

void run_simulate(const SimulateOptions& opt) {
  int sources = 0;
  if (!opt.panel_path.empty()) ++sources;
  if (opt.synthetic) ++sources;
  if (opt.adversarial_units > 0) ++sources;
  dbsc::require(sources == 1,
                "choose exactly one panel source: --panel, --synthetic or --adversarial");

  dbsc::PotentialPanel pp;
  if (!opt.panel_path.empty()) {
    pp = dbsc::zero_effect_panel(dbsc::load_panel_csv(opt.panel_path));
  } else if (opt.adversarial_units > 0) {
    pp = dbsc::adversarial_bias_panel(opt.adversarial_units);
  } else {
    dbsc::SyntheticPanelSpec spec;
    spec.n_units = opt.units;
    spec.n_periods = opt.periods;
    spec.ar_coefficient = opt.ar;
    spec.cross_correlation = opt.correlation;
    spec.seed = opt.seed;
    if (opt.covariance == "identity") {
      spec.covariance = dbsc::CrossCovariance::identity;
    } else if (opt.covariance == "equicorrelated") {
      spec.covariance = dbsc::CrossCovariance::equicorrelated;
    } else if (opt.covariance == "banded") {
      spec.covariance = dbsc::CrossCovariance::banded;
    } else {
      throw dbsc::validation_error("unknown covariance '" + opt.covariance +
                                   "' (expected identity|equicorrelated|banded)");
    }
    pp = dbsc::stationary_synthetic_panel(spec);
  }

  dbsc::LabOptions lab;
  lab.controls = make_controls(opt.ridge, opt.max_iterations, opt.workers);
  lab.variance_estimates = !opt.no_variance_estimates;

  std::vector<dbsc::WeightSetSpec> families;
  for (const std::string& name : split_list(opt.families)) {
    dbsc::WeightSetSpec spec;
    spec.family = dbsc::family_from_name(name);
    if (spec.family == dbsc::WeightFamily::musc_p) {
      dbsc::require(!opt.propensities.empty(),
                    "family musc-p needs --propensities");
      spec.propensities = parse_doubles(opt.propensities);
    }
    families.push_back(std::move(spec));
  }

  const auto emit_report = [&](const dbsc::ExperimentReport& report) {
    emit_output(opt.output, opt.emit == "json" ? dbsc::experiment_report_to_json(report)
                                               : dbsc::experiment_report_to_table(report));
  };

  if (opt.design == "uniform-unit") {
    const int period = pp.control_panel().period_index(opt.treated_period);
    emit_report(dbsc::run_unit_randomization(pp, families, period, lab));
  } else if (opt.design == "uniform-time") {
    dbsc::require(!opt.treated_unit.empty(), "the time design needs --treated-unit");
    const dbsc::Panel control = pp.control_panel();
    emit_report(
        dbsc::run_time_randomization(pp, families, control.unit_index(opt.treated_unit), lab));
  } else if (opt.design == "propensity") {
    dbsc::require(!opt.propensities.empty(), "the propensity design needs --propensities");
    const std::vector<double> p = parse_doubles(opt.propensities);
    Eigen::VectorXd design_p(static_cast<Eigen::Index>(p.size()));
    for (std::size_t i = 0; i < p.size(); ++i) design_p[static_cast<Eigen::Index>(i)] = p[i];
    const dbsc::Panel control = pp.control_panel();
    const int period = control.period_index(opt.treated_period);
    const dbsc::PropensityExperiment result = dbsc::run_propensity_monte_carlo(
        pp, families, period, design_p, opt.draws, opt.seed, lab);
    if (opt.emit == "json") {
      ordered_json doc;
      doc["exact"] = ordered_json::parse(dbsc::experiment_report_to_json(result.exact));
      doc["sampled"] = ordered_json::parse(dbsc::experiment_report_to_json(result.sampled));
      emit_output(opt.output, doc.dump(2));
    } else {
      emit_output(opt.output, dbsc::experiment_report_to_table(result.exact) + "\n" +
                                  dbsc::experiment_report_to_table(result.sampled));
    }
  } else if (opt.design == "subset") {
    const dbsc::Panel control = pp.control_panel();
    const int period = control.period_index(opt.treated_period);
    emit_report(dbsc::run_subset_randomization(pp, opt.n_treated, period, lab, opt.k_max));
  } else {
    throw dbsc::validation_error("unknown design '" + opt.design +
                                 "' (expected uniform-unit|uniform-time|propensity|subset)");
  }
}

void run_multi(const MultiOptions& opt) {
  const dbsc::Panel panel = dbsc::load_panel_csv(opt.panel_path);
  const int period = panel.period_index(opt.treated_period);
  const std::vector<std::string> labels = split_list(opt.treated_units);
  dbsc::require(!labels.empty(), "--treated-units needs at least one unit label");
  std::vector<int> treated;
  treated.reserve(labels.size());
  for (const std::string& label : labels) treated.push_back(panel.unit_index(label));

  const dbsc::SolveControls controls = make_controls(opt.ridge, opt.max_iterations, opt.workers);
  const dbsc::MultiWeightTensor mt =
      dbsc::solve_multi_weights(panel, static_cast<int>(treated.size()),
                                dbsc::PeriodScope::single(period), controls, opt.k_max);
  const dbsc::Estimate estimate = dbsc::multi_gsc_estimate(panel, mt, treated, period);
  std::optional<double> variance;
  if (opt.variance)
    variance = dbsc::multi_unbiased_variance_estimate(panel, mt, treated, period,
                                                      opt.leave_fold_out);

  if (opt.emit == "json") {
    ordered_json doc;
    doc["treated_units"] = labels;
    doc["treated_period"] = panel.periods[static_cast<std::size_t>(period)];
    doc["n_subsets"] = mt.index.size();
    doc["estimate"] = estimate.value;
    doc["counterfactual"] = estimate.counterfactual;
    if (variance) {
      doc["variance_estimate"] = *variance;
      doc["standard_error"] = dbsc::standard_error(*variance);
      doc["negative_estimate"] = *variance < 0.0;
    }
    doc["objective"] = mt.objective;
    doc["kkt_residual"] = mt.kkt;
    if (opt.include_weights)
      doc["weights"] = ordered_json::parse(dbsc::multi_weights_to_json(mt));
    emit_output(opt.output, doc.dump(2));
    return;
  }
  std::ostringstream out;
  out << "treated units:  " << opt.treated_units << " @ "
      << panel.periods[static_cast<std::size_t>(period)] << "\n";
  out << "subsets:        " << mt.index.size() << "\n";
  out << "estimate:       " << format_double(estimate.value) << "\n";
  out << "counterfactual: " << format_double(estimate.counterfactual) << "\n";
  if (variance) {
    out << "variance:       " << format_double(*variance);
    if (*variance < 0.0) out << " (negative estimate)";
    out << "\n";
    out << "standard error: " << format_double(dbsc::standard_error(*variance)) << "\n";
  }
  out << "kkt residual:   " << format_double(mt.kkt) << "\n";
  emit_output(opt.output, out.str());
}

void add_solver_options(CLI::App* sub, double& ridge, int& max_iterations, int& workers) {
  sub->add_option("--ridge", ridge, "Ridge added to the least-squares objective");
  sub->add_option("--max-iterations", max_iterations, "Iteration cap for the weight solver");
  sub->add_option("--workers", workers,
                  "Worker threads (0 = DBSC_WORKERS env var, then hardware)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Design-based synthetic control estimation and diagnostics"};
  app.set_config("--config", "", "Key=value config file; command-line flags win");
  app.allow_config_extras(false);
  app.require_subcommand(1);

  FitOptions fit;
  CLI::App* fit_cmd = app.add_subcommand("fit", "Fit weights and estimate one treated cell");
  fit_cmd->configurable();
  fit_cmd->fallthrough();
  fit_cmd->add_option("--panel", fit.panel_path, "Panel CSV (unit rows, period columns)")
      ->required();
  fit_cmd->add_option("--family", fit.family, "Weight family: dim|did|sc|msc|usc|musc|musc-p");
  fit_cmd->add_option("--treated-unit", fit.treated_unit, "Treated unit label")->required();
  fit_cmd->add_option("--treated-period", fit.treated_period,
                      "Treated period label ('last' allowed)");
  fit_cmd->add_option("--propensities", fit.propensities,
                      "Comma-separated propensities (musc-p only)");
  fit_cmd->add_option("--control-panel", fit.control_panel_path,
                      "Untreated-schedule CSV enabling the exact variance");
  fit_cmd->add_flag("--full-period-scope", fit.full_period_scope,
                    "Fit weight slices for every period, not just the treated one");
  fit_cmd->add_flag("--variance,!--no-variance", fit.variance,
                    "Include the unbiased variance estimate (needs at least 4 units)");
  fit_cmd->add_flag("--placebo", fit.placebo, "Include the placebo variance estimate");
  fit_cmd->add_flag("--truncate-negative-variance", fit.truncate_negative,
                    "Floor a negative variance estimate at zero");
  fit_cmd->add_option("--emit", fit.emit, "Output format")
      ->check(CLI::IsMember({"json", "table"}));
  fit_cmd->add_option("--output", fit.output, "Write output to this file instead of stdout");
  add_solver_options(fit_cmd, fit.ridge, fit.max_iterations, fit.workers);
  fit_cmd->callback([&fit]() { run_fit(fit); });

  FitOptions var;
  CLI::App* var_cmd = app.add_subcommand("variance", "Variance estimates for one treated cell");
  var_cmd->configurable();
  var_cmd->fallthrough();
  var_cmd->add_option("--panel", var.panel_path, "Panel CSV (unit rows, period columns)")
      ->required();
  var_cmd->add_option("--family", var.family, "Weight family: dim|did|sc|msc|usc|musc|musc-p");
  var_cmd->add_option("--treated-unit", var.treated_unit, "Treated unit label")->required();
  var_cmd->add_option("--treated-period", var.treated_period,
                      "Treated period label ('last' allowed)");
  var_cmd->add_option("--propensities", var.propensities,
                      "Comma-separated propensities (musc-p only)");
  var_cmd->add_option("--control-panel", var.control_panel_path,
                      "Untreated-schedule CSV enabling the exact variance");
  var_cmd->add_flag("--placebo", var.placebo, "Include the placebo variance estimate");
  var_cmd->add_flag("--truncate-negative-variance", var.truncate_negative,
                    "Floor a negative variance estimate at zero");
  var_cmd->add_option("--emit", var.emit, "Output format")
      ->check(CLI::IsMember({"json", "table"}));
  var_cmd->add_option("--output", var.output, "Write output to this file instead of stdout");
  add_solver_options(var_cmd, var.ridge, var.max_iterations, var.workers);
  var_cmd->callback([&var]() { run_variance(var); });

  FitOptions plc;
  CLI::App* plc_cmd =
      app.add_subcommand("placebo", "Placebo variance from leave-the-treated-out refits");
  plc_cmd->configurable();
  plc_cmd->fallthrough();
  plc_cmd->add_option("--panel", plc.panel_path, "Panel CSV (unit rows, period columns)")
      ->required();
  plc_cmd->add_option("--family", plc.family, "Weight family: dim|did|sc|msc|usc|musc");
  plc_cmd->add_option("--treated-unit", plc.treated_unit, "Treated unit label")->required();
  plc_cmd->add_option("--treated-period", plc.treated_period,
                      "Treated period label ('last' allowed)");
  plc_cmd->add_option("--emit", plc.emit, "Output format")
      ->check(CLI::IsMember({"json", "table"}));
  plc_cmd->add_option("--output", plc.output, "Write output to this file instead of stdout");
  add_solver_options(plc_cmd, plc.ridge, plc.max_iterations, plc.workers);
  plc_cmd->callback([&plc]() { run_placebo(plc); });

  NetworkOptions net;
  CLI::App* net_cmd =
      app.add_subcommand("network", "Donor flow network, propensities and centrality");
  net_cmd->configurable();
  net_cmd->fallthrough();
  net_cmd->add_option("--panel", net.panel_path, "Panel CSV (unit rows, period columns)")
      ->required();
  net_cmd->add_option("--family", net.family,
                      "Intercept-free weight family for the flows (sc|usc|dim)");
  net_cmd->add_option("--treated-period", net.treated_period,
                      "Treated period label ('last' allowed)");
  net_cmd->add_option("--emit", net.emit, "Output format")
      ->check(CLI::IsMember({"json", "table", "dot"}));
  net_cmd->add_option("--output", net.output, "Write output to this file instead of stdout");
  add_solver_options(net_cmd, net.ridge, net.max_iterations, net.workers);
  net_cmd->callback([&net]() { run_network(net); });

  SimulateOptions sim;
  CLI::App* sim_cmd =
      app.add_subcommand("simulate", "Randomization experiments over a panel");
  sim_cmd->configurable();
  sim_cmd->fallthrough();
  sim_cmd->add_option("--panel", sim.panel_path,
                      "Panel CSV treated as the untreated schedule (zero effects)");
  sim_cmd->add_flag("--synthetic", sim.synthetic, "Draw a stationary Gaussian panel instead");
  sim_cmd->add_option("--adversarial", sim.adversarial_units,
                      "Use the adversarial bias panel with this many units");
  sim_cmd->add_option("--units", sim.units, "Synthetic panel: number of units");
  sim_cmd->add_option("--periods", sim.periods, "Synthetic panel: number of periods");
  sim_cmd->add_option("--ar", sim.ar, "Synthetic panel: AR(1) coefficient");
  sim_cmd->add_option("--covariance", sim.covariance,
                      "Synthetic panel: identity|equicorrelated|banded");
  sim_cmd->add_option("--correlation", sim.correlation,
                      "Synthetic panel: cross-unit correlation parameter");
  sim_cmd->add_option("--design", sim.design,
                      "Assignment design: uniform-unit|uniform-time|propensity|subset");
  sim_cmd->add_option("--families", sim.families, "Comma-separated weight families");
  sim_cmd->add_option("--treated-unit", sim.treated_unit, "Treated unit (time design)");
  sim_cmd->add_option("--treated-period", sim.treated_period,
                      "Treated period label ('last' allowed)");
  sim_cmd->add_option("--propensities", sim.propensities,
                      "Comma-separated propensities (propensity design and musc-p)");
  sim_cmd->add_option("--draws", sim.draws, "Monte Carlo draws (propensity design)");
  sim_cmd->add_option("--seed", sim.seed, "Seed for synthetic panels and Monte Carlo draws");
  sim_cmd->add_option("--nt", sim.n_treated, "Treated subset size (subset design)");
  sim_cmd->add_option("--k-max", sim.k_max, "Refuse subset enumerations larger than this");
  sim_cmd->add_flag("--no-variance-estimates", sim.no_variance_estimates,
                    "Skip the variance estimate columns");
  sim_cmd->add_option("--emit", sim.emit, "Output format")
      ->check(CLI::IsMember({"json", "table"}));
  sim_cmd->add_option("--output", sim.output, "Write output to this file instead of stdout");
  add_solver_options(sim_cmd, sim.ridge, sim.max_iterations, sim.workers);
  sim_cmd->callback([&sim]() { run_simulate(sim); });

  MultiOptions multi;
  CLI::App* multi_cmd =
      app.add_subcommand("multi", "Estimate an average effect for several treated units");
  multi_cmd->configurable();
  multi_cmd->fallthrough();
  multi_cmd->add_option("--panel", multi.panel_path, "Panel CSV (unit rows, period columns)")
      ->required();
  multi_cmd->add_option("--treated-units", multi.treated_units,
                        "Comma-separated treated unit labels")
      ->required();
  multi_cmd->add_option("--treated-period", multi.treated_period,
                        "Treated period label ('last' allowed)");
  multi_cmd->add_flag("--variance,!--no-variance", multi.variance,
                      "Include the subset-enumeration variance estimate");
  multi_cmd->add_flag("--leave-fold-out", multi.leave_fold_out,
                      "Average intercepts over disjoint subsets only");
  multi_cmd->add_flag("--weights", multi.include_weights, "Include the full weight tensor");
  multi_cmd->add_option("--k-max", multi.k_max, "Refuse subset enumerations larger than this");
  multi_cmd->add_option("--emit", multi.emit, "Output format")
      ->check(CLI::IsMember({"json", "table"}));
  multi_cmd->add_option("--output", multi.output, "Write output to this file instead of stdout");
  add_solver_options(multi_cmd, multi.ridge, multi.max_iterations, multi.workers);
  multi_cmd->callback([&multi]() { run_multi(multi); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const dbsc::solver_error& e) {
    std::cerr << "solver error: " << e.what() << "\n";
    return 3;
  } catch (const dbsc::validation_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
