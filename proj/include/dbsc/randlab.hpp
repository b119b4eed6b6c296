#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dbsc/panel.hpp"
#include "dbsc/weights.hpp"

namespace dbsc {

// Shared knobs for the experiment pipelines.
struct LabOptions {
  SolveControls controls;          // forwarded to every weight fit
  bool variance_estimates = true;  // add variance columns where the estimator is defined (N >= 4)
};

// Summary of one estimator over an assignment distribution.
struct ExperimentRow {
  std::string family;
  double bias = 0.0;      // mean estimation error over the design
  double rmse = 0.0;      // root mean squared estimation error
  double variance = 0.0;  // variance of the error around its mean (rmse^2 = bias^2 + variance)
  std::optional<double> avg_standard_error;      // mean reported standard error (estimates floored at 0)
  std::optional<double> mean_variance_estimate;  // mean variance estimate, untruncated
  std::optional<double> exact_variance;          // mean closed-form randomization variance over the cells
  std::optional<std::string> error;              // failure message when the family could not run
};

// Experiment outcome: one row per requested family plus design metadata.
struct ExperimentReport {
  std::string design;                 // human-readable design descriptor
  bool enumerated = true;             // exact enumeration (true) or Monte Carlo sampling (false)
  int cells = 0;                      // enumeration cells or Monte Carlo draws
  std::optional<std::uint64_t> seed;  // present only on sampled runs
  std::vector<ExperimentRow> rows;
};

// Results for the propensity design, which always carries both views.
struct PropensityExperiment {
  ExperimentReport exact;    // propensity-weighted enumeration over treated units
  ExperimentReport sampled;  // seeded draws from the same design
};

// Treats each unit in turn at the given period, estimates against the true cell
// effect, and summarizes bias, RMSE and variance estimates over the uniform
// enumeration. Weights are fit once per family: slices at the treated period
// never read the treated column, so every assignment yields the same fit.
ExperimentReport run_unit_randomization(const PotentialPanel& pp,
                                        const std::vector<WeightSetSpec>& families,
                                        int treated_period, const LabOptions& options = {});

// Treats a fixed unit in each period in turn, fitting one weight slice per
// period, and summarizes the per-family error over the uniform enumeration.
// Needs at least 3 periods so every fit keeps 2 comparison periods.
ExperimentReport run_time_randomization(const PotentialPanel& pp,
                                        const std::vector<WeightSetSpec>& families,
                                        int treated_unit, const LabOptions& options = {});

// Draws the treated unit from the given propensity vector at a fixed period.
// Returns the exact propensity-weighted enumeration together with a seeded
// Monte Carlo run of the requested size; both share one set of fitted weights.
PropensityExperiment run_propensity_monte_carlo(const PotentialPanel& pp,
                                                const std::vector<WeightSetSpec>& families,
                                                int treated_period,
                                                const Eigen::VectorXd& propensities, int draws,
                                                std::uint64_t seed, const LabOptions& options = {});

// Treats every size-n_treated subset of units in turn at the given period,
// estimating the subset-average effect with the shared-intercept contrast rows,
// and summarizes the error over the uniform subset enumeration. Variance
// estimate columns need at least n_treated + 2 control units. The enumeration
// refuses to grow past max_subsets.
ExperimentReport run_subset_randomization(const PotentialPanel& pp, int n_treated,
                                          int treated_period, const LabOptions& options = {},
                                          int max_subsets = 5000);

// Zero-effect panel on which per-unit least squares is maximally misleading:
// unit 1 is flat at zero while every other unit spikes once pre-treatment and
// again in the final period. Under sc the fit matches each spiking unit to the
// flat one, so the estimator inherits the spike and the enumerated bias is
// exactly (n - 2) / n. Units n >= 4, periods n + 1, treated period last.
PotentialPanel adversarial_bias_panel(int n_units);

// The two reference panels behind the placebo bias directions, both 4 units by
// 3 periods with zero effects and the last period treated.
struct PlaceboExamples {
  PotentialPanel downward;  // paired musc panel: placebo mean falls below the exact variance
  PotentialPanel upward;    // perfectly matched sc panel: placebo mean exceeds the exact variance
};

// Parameters fill the pre-treatment pair blocks of the downward panel as rows
// (a, b) and (c, d); the blocks must differ (a - b != c - d) for the pairing
// fit to be unique. The defaults give exact variance 1 and an enumerated
// placebo mean of 0.78125.
PlaceboExamples placebo_example_panels(double a = 0.0, double b = 1.0, double c = 0.5,
                                       double d = 2.0);

// Cross-unit covariance shape for the synthetic generator.
enum class CrossCovariance { identity, equicorrelated, banded };

struct SyntheticPanelSpec {
  int n_units = 0;
  int n_periods = 0;
  double ar_coefficient = 0.0;  // AR(1) dependence over time, |rho| < 1
  CrossCovariance covariance = CrossCovariance::identity;
  double cross_correlation = 0.0;  // off-diagonal parameter of the cross-unit covariance
  std::uint64_t seed = 0;

  // Throws validation_error unless sizes are positive, |ar| < 1 and the
  // covariance parameters give a positive-definite matrix.
  void validate() const;
};

// Draws a stationary Gaussian panel: the first column from the exact stationary
// law N(0, Sigma), later columns by the AR(1) recursion with innovation
// covariance (1 - rho^2) Sigma. Zero treatment effects; same seed, same panel.
PotentialPanel stationary_synthetic_panel(const SyntheticPanelSpec& spec);

std::string experiment_report_to_json(const ExperimentReport& report);

// Fixed-width text table: one metric per line (bias, rmse, variance, then the
// estimate columns that are present), one column per family.
std::string experiment_report_to_table(const ExperimentReport& report);

}  // namespace dbsc
