#include "dbsc/randlab.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <sstream>
#include <utility>

#include <Eigen/Cholesky>
#include <nlohmann/json.hpp>

#include "dbsc/errors.hpp"
#include "dbsc/estimate.hpp"
#include "dbsc/multitreat.hpp"
#include "dbsc/parallel.hpp"
#include "dbsc/rng.hpp"
#include "dbsc/variance.hpp"

namespace dbsc {

namespace {

// Outcome of one enumerated assignment: the estimation error and, where
// defined, the variance estimate computed from the observed panel.
struct CellStats {
  double error = 0.0;
  std::optional<double> variance_estimate;
};

// Collapses per-cell outcomes into a report row under the given probability
// mass. Estimate columns appear only when every cell carries an estimate.
ExperimentRow summarize_cells(const std::string& label, const std::vector<CellStats>& cells,
                              const std::vector<double>& mass,
                              std::optional<double> exact_variance) {
  ExperimentRow row;
  row.family = label;

  double mean = 0.0;
  double mean_square = 0.0;
  bool all_estimated = !cells.empty();
  double mean_estimate = 0.0;
  double mean_se = 0.0;
  for (std::size_t c = 0; c < cells.size(); ++c) {
    mean += mass[c] * cells[c].error;
    mean_square += mass[c] * cells[c].error * cells[c].error;
    if (cells[c].variance_estimate) {
      const double estimate = *cells[c].variance_estimate;
      mean_estimate += mass[c] * estimate;
      mean_se += mass[c] * std::sqrt(std::max(estimate, 0.0));
    } else {
      all_estimated = false;
    }
  }

  row.bias = mean;
  row.rmse = std::sqrt(std::max(mean_square, 0.0));
  row.variance = std::max(mean_square - mean * mean, 0.0);
  if (all_estimated) {
    row.mean_variance_estimate = mean_estimate;
    row.avg_standard_error = mean_se;
  }
  row.exact_variance = exact_variance;
  return row;
}

// Estimates every unit-at-period assignment against the fitted tensor. The
// tensor must cover the period; variance estimates are attached when requested
// and the panel is large enough for them.
std::vector<CellStats> unit_cells(const PotentialPanel& pp, const WeightTensor& tensor,
                                  int period, const LabOptions& options) {
  const int n = pp.n_units();
  const bool want_variance = options.variance_estimates && n >= 4;
  std::vector<CellStats> cells(static_cast<std::size_t>(n));
  parallel_for(n, options.controls.workers, [&](int i) {
    const Assignment a{i, period};
    const Panel observed = pp.observed(a);
    const Estimate estimate = gsc_estimate(observed, tensor, a);
    auto& cell = cells[static_cast<std::size_t>(i)];
    cell.error = estimate.value - pp.effect(i, period);
    if (want_variance) cell.variance_estimate = unbiased_variance_estimate(observed, tensor, a);
  });
  return cells;
}

std::string period_label(const PotentialPanel& pp, int period) {
  return pp.periods[static_cast<std::size_t>(period)];
}

void require_period(const PotentialPanel& pp, int period) {
  require(period >= 0 && period < pp.n_periods(), "treated period index out of range");
}

void require_unit(const PotentialPanel& pp, int unit) {
  require(unit >= 0 && unit < pp.n_units(), "treated unit index out of range");
}

std::vector<std::string> numbered_labels(char prefix, int count) {
  std::vector<std::string> labels;
  labels.reserve(static_cast<std::size_t>(count));
  for (int i = 1; i <= count; ++i) labels.push_back(prefix + std::to_string(i));
  return labels;
}

std::string format_cell(double value) {
  char buffer[32];
  std::snprintf(buffer, sizeof(buffer), "%13.6g", value);
  return buffer;
}

}  // namespace

ExperimentReport run_unit_randomization(const PotentialPanel& pp,
                                        const std::vector<WeightSetSpec>& families,
                                        int treated_period, const LabOptions& options) {
  pp.validate();
  require_period(pp, treated_period);
  require(!families.empty(), "at least one weight family is required");

  const int n = pp.n_units();
  const Panel control = pp.control_panel();
  const std::vector<double> mass(static_cast<std::size_t>(n), 1.0 / static_cast<double>(n));

  ExperimentReport report;
  report.design = "uniform unit @ " + period_label(pp, treated_period);
  report.enumerated = true;
  report.cells = n;
  for (const WeightSetSpec& spec : families) {
    const std::string label = family_name(spec.family);
    try {
      const WeightTensor tensor =
          solve_weights(control, spec, PeriodScope::single(treated_period), options.controls);
      const std::vector<CellStats> cells = unit_cells(pp, tensor, treated_period, options);
      report.rows.push_back(
          summarize_cells(label, cells, mass, exact_variance(pp.y0, tensor, treated_period)));
    } catch (const std::exception& failure) {
      ExperimentRow row;
      row.family = label;
      row.error = failure.what();
      report.rows.push_back(std::move(row));
    }
  }
  return report;
}

ExperimentReport run_time_randomization(const PotentialPanel& pp,
                                        const std::vector<WeightSetSpec>& families,
                                        int treated_unit, const LabOptions& options) {
  pp.validate();
  require_unit(pp, treated_unit);
  require(pp.n_periods() >= 3, "time randomization needs at least 3 periods");
  require(!families.empty(), "at least one weight family is required");

  const int n = pp.n_units();
  const int t_count = pp.n_periods();
  const Panel control = pp.control_panel();
  const std::vector<double> mass(static_cast<std::size_t>(t_count),
                                 1.0 / static_cast<double>(t_count));
  const bool want_variance = options.variance_estimates && n >= 4;

  ExperimentReport report;
  report.design = "uniform period @ unit " + pp.units[static_cast<std::size_t>(treated_unit)];
  report.enumerated = true;
  report.cells = t_count;
  for (const WeightSetSpec& spec : families) {
    const std::string label = family_name(spec.family);
    try {
      const WeightTensor tensor =
          solve_weights(control, spec, PeriodScope::all(), options.controls);
      std::vector<CellStats> cells(static_cast<std::size_t>(t_count));
      std::vector<double> exact_by_period(static_cast<std::size_t>(t_count), 0.0);
      parallel_for(t_count, options.controls.workers, [&](int t) {
        const Assignment a{treated_unit, t};
        const Panel observed = pp.observed(a);
        const Estimate estimate = gsc_estimate(observed, tensor, a);
        auto& cell = cells[static_cast<std::size_t>(t)];
        cell.error = estimate.value - pp.effect(treated_unit, t);
        if (want_variance) cell.variance_estimate = unbiased_variance_estimate(observed, tensor, a);
        exact_by_period[static_cast<std::size_t>(t)] = exact_variance(pp.y0, tensor, t);
      });
      double exact_mean = 0.0;
      for (int t = 0; t < t_count; ++t)
        exact_mean += mass[static_cast<std::size_t>(t)] * exact_by_period[static_cast<std::size_t>(t)];
      report.rows.push_back(summarize_cells(label, cells, mass, exact_mean));
    } catch (const std::exception& failure) {
      ExperimentRow row;
      row.family = label;
      row.error = failure.what();
      report.rows.push_back(std::move(row));
    }
  }
  return report;
}

PropensityExperiment run_propensity_monte_carlo(const PotentialPanel& pp,
                                                const std::vector<WeightSetSpec>& families,
                                                int treated_period,
                                                const Eigen::VectorXd& propensities, int draws,
                                                std::uint64_t seed, const LabOptions& options) {
  pp.validate();
  require_period(pp, treated_period);
  require(!families.empty(), "at least one weight family is required");
  require(draws >= 1, "the Monte Carlo run needs at least one draw");

  const int n = pp.n_units();
  require(propensities.size() == n, "propensity vector length must match the unit count");
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    require(propensities[i] >= 0.0 && propensities[i] <= 1.0,
            "propensities must lie in [0, 1]");
    total += propensities[i];
  }
  require(std::abs(total - 1.0) <= 1e-9, "propensities must sum to 1");

  // One shared sequence of treated units, drawn by inverting the cumulative
  // distribution, so every family sees the same realized assignments.
  std::vector<double> cumulative(static_cast<std::size_t>(n), 0.0);
  double running = 0.0;
  for (int i = 0; i < n; ++i) {
    running += propensities[i];
    cumulative[static_cast<std::size_t>(i)] = running;
  }
  cumulative.back() = 1.0;
  Rng rng(seed);
  std::vector<int> drawn(static_cast<std::size_t>(draws), 0);
  for (int d = 0; d < draws; ++d) {
    const double u = rng.uniform();
    const auto position = std::upper_bound(cumulative.begin(), cumulative.end(), u);
    drawn[static_cast<std::size_t>(d)] =
        static_cast<int>(std::min<std::ptrdiff_t>(position - cumulative.begin(), n - 1));
  }

  std::vector<double> exact_mass(static_cast<std::size_t>(n), 0.0);
  for (int i = 0; i < n; ++i) exact_mass[static_cast<std::size_t>(i)] = propensities[i];
  const std::vector<double> draw_mass(static_cast<std::size_t>(draws),
                                      1.0 / static_cast<double>(draws));

  const Panel control = pp.control_panel();
  const std::string design = "propensity draw @ " + period_label(pp, treated_period);

  PropensityExperiment result;
  result.exact.design = design;
  result.exact.enumerated = true;
  result.exact.cells = n;
  result.sampled.design = design;
  result.sampled.enumerated = false;
  result.sampled.cells = draws;
  result.sampled.seed = seed;

  for (const WeightSetSpec& spec : families) {
    const std::string label = family_name(spec.family);
    try {
      const WeightTensor tensor =
          solve_weights(control, spec, PeriodScope::single(treated_period), options.controls);
      const std::vector<CellStats> cells = unit_cells(pp, tensor, treated_period, options);

      double exact_mse = 0.0;
      for (int i = 0; i < n; ++i)
        exact_mse += exact_mass[static_cast<std::size_t>(i)] *
                     cells[static_cast<std::size_t>(i)].error * cells[static_cast<std::size_t>(i)].error;
      result.exact.rows.push_back(summarize_cells(label, cells, exact_mass, exact_mse));

      std::vector<CellStats> sampled_cells(static_cast<std::size_t>(draws));
      for (int d = 0; d < draws; ++d)
        sampled_cells[static_cast<std::size_t>(d)] =
            cells[static_cast<std::size_t>(drawn[static_cast<std::size_t>(d)])];
      result.sampled.rows.push_back(
          summarize_cells(label, sampled_cells, draw_mass, exact_mse));
    } catch (const std::exception& failure) {
      ExperimentRow row;
      row.family = label;
      row.error = failure.what();
      result.exact.rows.push_back(row);
      result.sampled.rows.push_back(std::move(row));
    }
  }
  return result;
}

ExperimentReport run_subset_randomization(const PotentialPanel& pp, int n_treated,
                                          int treated_period, const LabOptions& options,
                                          int max_subsets) {
  pp.validate();
  require_period(pp, treated_period);

  const int n = pp.n_units();
  const Panel control = pp.control_panel();

  ExperimentReport report;
  report.design = "uniform subset of " + std::to_string(n_treated) + " @ " +
                  period_label(pp, treated_period);
  report.enumerated = true;

  ExperimentRow row;
  row.family = "musc";
  const MultiWeightTensor mt = solve_multi_weights(
      control, n_treated, PeriodScope::single(treated_period), options.controls, max_subsets);
  const int k_count = mt.index.size();
  report.cells = k_count;
  const bool want_variance = options.variance_estimates && n - n_treated >= n_treated + 2;

  std::vector<CellStats> cells(static_cast<std::size_t>(k_count));
  parallel_for(k_count, options.controls.workers, [&](int k) {
    const std::vector<int>& subset = mt.index.subsets[static_cast<std::size_t>(k)];
    const Panel observed = pp.observed_subset(subset, treated_period);
    const Estimate estimate = multi_gsc_estimate(observed, mt, subset, treated_period);
    double true_effect = 0.0;
    for (int unit : subset) true_effect += pp.effect(unit, treated_period);
    true_effect /= static_cast<double>(n_treated);
    auto& cell = cells[static_cast<std::size_t>(k)];
    cell.error = estimate.value - true_effect;
    if (want_variance)
      cell.variance_estimate =
          multi_unbiased_variance_estimate(observed, mt, subset, treated_period);
  });

  const std::vector<double> mass(static_cast<std::size_t>(k_count),
                                 1.0 / static_cast<double>(k_count));
  row = summarize_cells(row.family, cells, mass,
                        multi_exact_variance(pp.y0, mt, treated_period));
  report.rows.push_back(std::move(row));
  return report;
}

PotentialPanel adversarial_bias_panel(int n_units) {
  require(n_units >= 4, "the adversarial panel needs at least 4 units");

  const int t_count = n_units + 1;
  Panel base;
  base.units = numbered_labels('u', n_units);
  base.periods = numbered_labels('t', t_count);
  base.y = Eigen::MatrixXd::Zero(n_units, t_count);
  // Unit 1 stays flat; unit i spikes once at period i and again in the final
  // period, so the spikes never overlap and never touch another unit's.
  for (int i = 1; i < n_units; ++i) {
    base.y(i, i) = 1.0;
    base.y(i, t_count - 1) = 1.0;
  }
  return zero_effect_panel(std::move(base));
}

PlaceboExamples placebo_example_panels(double a, double b, double c, double d) {
  PlaceboExamples examples;

  Panel paired;
  paired.units = numbered_labels('u', 4);
  paired.periods = numbered_labels('t', 3);
  paired.y = Eigen::MatrixXd(4, 3);
  paired.y << a, b, 0.0,
              a, b, 1.0,
              c, d, 0.0,
              c, d, 1.0;
  examples.downward = zero_effect_panel(std::move(paired));

  Panel matched;
  matched.units = numbered_labels('u', 4);
  matched.periods = numbered_labels('t', 3);
  matched.y = Eigen::MatrixXd(4, 3);
  matched.y << 0.0, 1.0, 1.0,
               0.0, 1.0, 1.0,
               1.0, 3.0, 0.0,
               1.0, 3.0, 0.0;
  examples.upward = zero_effect_panel(std::move(matched));

  return examples;
}

void SyntheticPanelSpec::validate() const {
  require(n_units >= 1, "the synthetic panel needs at least 1 unit");
  require(n_periods >= 1, "the synthetic panel needs at least 1 period");
  require(std::abs(ar_coefficient) < 1.0, "the AR coefficient must satisfy |rho| < 1");
  switch (covariance) {
    case CrossCovariance::identity:
      break;
    case CrossCovariance::equicorrelated:
      require(cross_correlation < 1.0 &&
                  cross_correlation > (n_units > 1 ? -1.0 / (n_units - 1) : -1.0),
              "equicorrelated covariance needs correlation in (-1/(N-1), 1)");
      break;
    case CrossCovariance::banded:
      require(std::abs(cross_correlation) < 1.0,
              "banded covariance needs |correlation| < 1");
      break;
  }
}

PotentialPanel stationary_synthetic_panel(const SyntheticPanelSpec& spec) {
  spec.validate();

  const int n = spec.n_units;
  Eigen::MatrixXd sigma = Eigen::MatrixXd::Identity(n, n);
  if (spec.covariance == CrossCovariance::equicorrelated) {
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if (i != j) sigma(i, j) = spec.cross_correlation;
  } else if (spec.covariance == CrossCovariance::banded) {
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if (i != j) sigma(i, j) = std::pow(spec.cross_correlation, std::abs(i - j));
  }

  const Eigen::LLT<Eigen::MatrixXd> factor(sigma);
  require(factor.info() == Eigen::Success, "cross-unit covariance is not positive-definite");
  const Eigen::MatrixXd root = factor.matrixL();

  Panel base;
  base.units = numbered_labels('u', n);
  base.periods = numbered_labels('t', spec.n_periods);
  base.y = Eigen::MatrixXd(n, spec.n_periods);

  Rng rng(spec.seed);
  Eigen::VectorXd shock(n);
  const double rho = spec.ar_coefficient;
  const double innovation_scale = std::sqrt(1.0 - rho * rho);
  for (int t = 0; t < spec.n_periods; ++t) {
    for (int i = 0; i < n; ++i) shock[i] = rng.normal();
    if (t == 0) {
      base.y.col(0) = root * shock;
    } else {
      base.y.col(t) = rho * base.y.col(t - 1) + innovation_scale * (root * shock);
    }
  }
  return zero_effect_panel(std::move(base));
}

std::string experiment_report_to_json(const ExperimentReport& report) {
  nlohmann::ordered_json doc;
  doc["design"] = report.design;
  doc["enumerated"] = report.enumerated;
  doc["cells"] = report.cells;
  if (report.seed) doc["seed"] = *report.seed;
  doc["rows"] = nlohmann::ordered_json::array();
  for (const ExperimentRow& row : report.rows) {
    nlohmann::ordered_json entry;
    entry["family"] = row.family;
    if (row.error) {
      entry["error"] = *row.error;
    } else {
      entry["bias"] = row.bias;
      entry["rmse"] = row.rmse;
      entry["variance"] = row.variance;
      if (row.avg_standard_error) entry["avg_standard_error"] = *row.avg_standard_error;
      if (row.mean_variance_estimate)
        entry["mean_variance_estimate"] = *row.mean_variance_estimate;
      if (row.exact_variance) entry["exact_variance"] = *row.exact_variance;
    }
    doc["rows"].push_back(std::move(entry));
  }
  return doc.dump(2);
}

std::string experiment_report_to_table(const ExperimentReport& report) {
  std::ostringstream out;
  out << "design: " << report.design << " ("
      << (report.enumerated ? "enumerated" : "sampled") << ", " << report.cells << " cells";
  if (report.seed) out << ", seed " << *report.seed;
  out << ")\n";

  bool any_se = false;
  bool any_estimate = false;
  bool any_exact = false;
  for (const ExperimentRow& row : report.rows) {
    any_se = any_se || row.avg_standard_error.has_value();
    any_estimate = any_estimate || row.mean_variance_estimate.has_value();
    any_exact = any_exact || row.exact_variance.has_value();
  }

  const std::string metric_pad(24, ' ');
  auto metric_line = [&](const std::string& name,
                         const std::function<std::optional<double>(const ExperimentRow&)>& pick) {
    std::string line = name;
    line.resize(24, ' ');
    for (const ExperimentRow& row : report.rows) {
      const std::optional<double> value = row.error ? std::nullopt : pick(row);
      if (value) {
        line += format_cell(*value);
      } else {
        line += std::string(10, ' ') + "n/a";
      }
    }
    out << line << "\n";
  };

  std::string header = metric_pad;
  for (const ExperimentRow& row : report.rows) {
    char cell[32];
    std::snprintf(cell, sizeof(cell), "%13s", row.family.c_str());
    header += cell;
  }
  out << header << "\n";

  metric_line("bias", [](const ExperimentRow& row) { return std::optional<double>(row.bias); });
  metric_line("rmse", [](const ExperimentRow& row) { return std::optional<double>(row.rmse); });
  metric_line("variance",
              [](const ExperimentRow& row) { return std::optional<double>(row.variance); });
  if (any_se)
    metric_line("average standard error",
                [](const ExperimentRow& row) { return row.avg_standard_error; });
  if (any_estimate)
    metric_line("mean variance estimate",
                [](const ExperimentRow& row) { return row.mean_variance_estimate; });
  if (any_exact)
    metric_line("exact variance",
                [](const ExperimentRow& row) { return row.exact_variance; });

  for (const ExperimentRow& row : report.rows)
    if (row.error) out << "error[" << row.family << "]: " << *row.error << "\n";
  return out.str();
}

}  // namespace dbsc
