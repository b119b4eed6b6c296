#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dbsc/errors.hpp"
#include "dbsc/estimate.hpp"
#include "dbsc/multitreat.hpp"
#include "dbsc/randlab.hpp"
#include "dbsc/variance.hpp"
#include "dbsc/weights.hpp"
#include "helpers.hpp"

using namespace dbsc;

namespace {

WeightSetSpec spec_of(WeightFamily family) {
  WeightSetSpec spec;
  spec.family = family;
  return spec;
}

WeightSetSpec propensity_spec(const std::vector<double>& p) {
  WeightSetSpec spec;
  spec.family = WeightFamily::musc_p;
  spec.propensities = p;
  return spec;
}

}  // namespace

TEST_CASE("uniform unit enumeration reproduces hand values on the equidistant panel") {
  const PotentialPanel pp = zero_effect_panel(testutil::equidistant_panel());
  const ExperimentReport report =
      run_unit_randomization(pp, {spec_of(WeightFamily::dim), spec_of(WeightFamily::musc)}, 2);

  CHECK(report.design == "uniform unit @ t3");
  CHECK(report.enumerated);
  CHECK(report.cells == 3);
  CHECK_FALSE(report.seed.has_value());
  REQUIRE(report.rows.size() == 2);

  // Differences in means: errors are -1.5, 0, 1.5 across the three assignments.
  const ExperimentRow& dim = report.rows[0];
  CHECK(dim.family == "dim");
  CHECK(std::abs(dim.bias) <= 1e-12);
  CHECK(dim.rmse == doctest::Approx(std::sqrt(1.5)).epsilon(1e-12));
  CHECK(dim.variance == doctest::Approx(1.5).epsilon(1e-12));
  REQUIRE(dim.exact_variance.has_value());
  CHECK(*dim.exact_variance == doctest::Approx(1.5).epsilon(1e-12));
  // Three units are too few for the variance estimator, so no estimate columns.
  CHECK_FALSE(dim.avg_standard_error.has_value());
  CHECK_FALSE(dim.mean_variance_estimate.has_value());

  // The intercept family matches the equidistant rows exactly.
  const ExperimentRow& musc = report.rows[1];
  CHECK(std::abs(musc.bias) <= 1e-9);
  CHECK(musc.rmse <= 1e-9);
  REQUIRE(musc.exact_variance.has_value());
  CHECK(*musc.exact_variance <= 1e-12);
}

TEST_CASE("uniform unit rows match a direct enumeration of the estimators") {
  const PotentialPanel pp = testutil::random_zero_effect(601, 5, 7);
  const Panel control = pp.control_panel();
  const int t = 6;

  for (const WeightFamily family : {WeightFamily::dim, WeightFamily::sc}) {
    const ExperimentReport report = run_unit_randomization(pp, {spec_of(family)}, t);
    REQUIRE(report.rows.size() == 1);
    const ExperimentRow& row = report.rows[0];
    REQUIRE_FALSE(row.error.has_value());

    const WeightTensor tensor = solve_weights(control, spec_of(family), PeriodScope::single(t));
    double mean = 0.0, mean_square = 0.0, mean_estimate = 0.0, mean_se = 0.0;
    for (int i = 0; i < 5; ++i) {
      const Assignment a{i, t};
      const double error = gsc_estimate(control, tensor, a).value;
      const double estimate = unbiased_variance_estimate(control, tensor, a);
      mean += error / 5.0;
      mean_square += error * error / 5.0;
      mean_estimate += estimate / 5.0;
      mean_se += std::sqrt(std::max(estimate, 0.0)) / 5.0;
    }

    CHECK(row.bias == doctest::Approx(mean).epsilon(1e-12));
    CHECK(row.rmse == doctest::Approx(std::sqrt(mean_square)).epsilon(1e-12));
    CHECK(row.variance == doctest::Approx(mean_square - mean * mean).epsilon(1e-9));
    REQUIRE(row.mean_variance_estimate.has_value());
    CHECK(*row.mean_variance_estimate == doctest::Approx(mean_estimate).epsilon(1e-12));
    REQUIRE(row.avg_standard_error.has_value());
    CHECK(*row.avg_standard_error == doctest::Approx(mean_se).epsilon(1e-12));
    REQUIRE(row.exact_variance.has_value());
    CHECK(*row.exact_variance == doctest::Approx(exact_variance(pp.y0, tensor, t)).epsilon(1e-12));
    // The estimate column averages back to the closed form over the enumeration.
    CHECK(*row.mean_variance_estimate == doctest::Approx(*row.exact_variance).epsilon(1e-10));
  }
}

TEST_CASE("a constant treatment effect leaves the error distribution unchanged") {
  PotentialPanel pp = testutil::random_zero_effect(602, 5, 6);
  const int t = 5;
  const ExperimentReport base = run_unit_randomization(pp, {spec_of(WeightFamily::dim)}, t);
  for (int i = 0; i < pp.n_units(); ++i) pp.y1(i, t) += 2.0;
  const ExperimentReport shifted = run_unit_randomization(pp, {spec_of(WeightFamily::dim)}, t);
  CHECK(shifted.rows[0].bias == doctest::Approx(base.rows[0].bias).epsilon(1e-12));
  CHECK(shifted.rows[0].rmse == doctest::Approx(base.rows[0].rmse).epsilon(1e-12));
}

TEST_CASE("time randomization enumerates periods against a full-scope fit") {
  const PotentialPanel pp = testutil::random_zero_effect(603, 4, 6);
  const Panel control = pp.control_panel();
  const int unit = 2;
  const ExperimentReport report = run_time_randomization(pp, {spec_of(WeightFamily::musc)}, unit);

  CHECK(report.design == "uniform period @ unit u3");
  CHECK(report.cells == 6);
  REQUIRE(report.rows.size() == 1);
  const ExperimentRow& row = report.rows[0];
  REQUIRE_FALSE(row.error.has_value());

  const WeightTensor tensor =
      solve_weights(control, spec_of(WeightFamily::musc), PeriodScope::all());
  double mean = 0.0, mean_square = 0.0, mean_estimate = 0.0, exact_mean = 0.0;
  for (int t = 0; t < 6; ++t) {
    const Assignment a{unit, t};
    const double error = gsc_estimate(control, tensor, a).value;
    mean += error / 6.0;
    mean_square += error * error / 6.0;
    mean_estimate += unbiased_variance_estimate(control, tensor, a) / 6.0;
    exact_mean += exact_variance(pp.y0, tensor, t) / 6.0;
  }
  CHECK(row.bias == doctest::Approx(mean).epsilon(1e-12));
  CHECK(row.rmse == doctest::Approx(std::sqrt(mean_square)).epsilon(1e-12));
  REQUIRE(row.mean_variance_estimate.has_value());
  CHECK(*row.mean_variance_estimate == doctest::Approx(mean_estimate).epsilon(1e-12));
  REQUIRE(row.exact_variance.has_value());
  CHECK(*row.exact_variance == doctest::Approx(exact_mean).epsilon(1e-12));

  const Panel two_periods = testutil::make_panel({{1.0, 2.0}, {3.0, 4.0}, {5.0, 6.0}});
  CHECK_THROWS_WITH_AS(
      run_time_randomization(zero_effect_panel(two_periods), {spec_of(WeightFamily::dim)}, 0),
      "time randomization needs at least 3 periods", validation_error);
}

TEST_CASE("propensity draws are seeded, reproducible and design-consistent") {
  const PotentialPanel pp = zero_effect_panel(testutil::equidistant_panel());
  const std::vector<double> p{0.5, 0.25, 0.25};
  const std::vector<WeightSetSpec> families{spec_of(WeightFamily::dim), propensity_spec(p)};
  const Eigen::VectorXd pv = Eigen::Map<const Eigen::VectorXd>(p.data(), 3);

  const PropensityExperiment first = run_propensity_monte_carlo(pp, families, 2, pv, 400, 11);
  CHECK(first.exact.enumerated);
  CHECK(first.exact.cells == 3);
  CHECK_FALSE(first.exact.seed.has_value());
  CHECK_FALSE(first.sampled.enumerated);
  CHECK(first.sampled.cells == 400);
  REQUIRE(first.sampled.seed.has_value());
  CHECK(*first.sampled.seed == 11);

  // Exact errors are -1.5, 0, 1.5; the propensity weighting makes dim biased.
  const ExperimentRow& dim = first.exact.rows[0];
  CHECK(dim.bias == doctest::Approx(-0.375).epsilon(1e-12));
  // The propensity-weighted family is design-unbiased under its own draw.
  const ExperimentRow& muscp = first.exact.rows[1];
  CHECK(muscp.family == "musc-p");
  CHECK(std::abs(muscp.bias) <= 1e-8);
  // The exact variance column carries the design MSE, so rmse^2 matches it.
  REQUIRE(dim.exact_variance.has_value());
  CHECK(dim.rmse * dim.rmse == doctest::Approx(*dim.exact_variance).epsilon(1e-12));

  const PropensityExperiment second = run_propensity_monte_carlo(pp, families, 2, pv, 400, 11);
  CHECK(experiment_report_to_json(first.sampled) == experiment_report_to_json(second.sampled));
  const PropensityExperiment reseeded = run_propensity_monte_carlo(pp, families, 2, pv, 400, 12);
  CHECK(experiment_report_to_json(first.exact) == experiment_report_to_json(reseeded.exact));
  CHECK(first.sampled.rows[0].rmse != reseeded.sampled.rows[0].rmse);

  Eigen::VectorXd short_p(2);
  short_p << 0.5, 0.5;
  CHECK_THROWS_AS(run_propensity_monte_carlo(pp, families, 2, short_p, 10, 1), validation_error);
  Eigen::VectorXd lopsided(3);
  lopsided << 0.8, 0.1, 0.2;
  CHECK_THROWS_AS(run_propensity_monte_carlo(pp, families, 2, lopsided, 10, 1), validation_error);
  CHECK_THROWS_AS(run_propensity_monte_carlo(pp, families, 2, pv, 0, 1), validation_error);
}

TEST_CASE("subset enumeration matches direct multi-treatment computation") {
  const PotentialPanel pp = testutil::random_zero_effect(604, 6, 7);
  const Panel control = pp.control_panel();
  const int t = 6, n_treated = 2;
  const ExperimentReport report = run_subset_randomization(pp, n_treated, t);

  CHECK(report.design == "uniform subset of 2 @ t7");
  CHECK(report.cells == 15);
  REQUIRE(report.rows.size() == 1);
  const ExperimentRow& row = report.rows[0];
  CHECK(row.family == "musc");
  REQUIRE_FALSE(row.error.has_value());

  const MultiWeightTensor mt =
      solve_multi_weights(control, n_treated, PeriodScope::single(t));
  double mean = 0.0, mean_square = 0.0;
  for (int k = 0; k < mt.index.size(); ++k) {
    const double error =
        multi_gsc_estimate(control, mt, mt.index.subsets[static_cast<std::size_t>(k)], t).value;
    mean += error / 15.0;
    mean_square += error * error / 15.0;
  }
  CHECK(row.bias == doctest::Approx(mean).epsilon(1e-12));
  CHECK(row.rmse == doctest::Approx(std::sqrt(mean_square)).epsilon(1e-12));
  REQUIRE(row.exact_variance.has_value());
  CHECK(*row.exact_variance == doctest::Approx(multi_exact_variance(pp.y0, mt, t)).epsilon(1e-12));
  REQUIRE(row.mean_variance_estimate.has_value());
  CHECK(*row.mean_variance_estimate == doctest::Approx(*row.exact_variance).epsilon(1e-9));

  // Five units leave only three controls, too few for the subset variance estimator.
  const ExperimentReport small = run_subset_randomization(testutil::random_zero_effect(605, 5, 6), 2, 5);
  CHECK_FALSE(small.rows[0].mean_variance_estimate.has_value());

  CHECK_THROWS_AS(run_subset_randomization(pp, n_treated, t, LabOptions{}, 5), validation_error);
}

TEST_CASE("the adversarial panel biases per-unit least squares by (n - 2) / n") {
  const PotentialPanel shape = adversarial_bias_panel(5);
  CHECK(shape.n_units() == 5);
  CHECK(shape.n_periods() == 6);
  CHECK(shape.y0 == shape.y1);
  CHECK(shape.y0.row(0).isZero());
  for (int i = 1; i < 5; ++i) {
    CHECK(shape.y0(i, i) == 1.0);
    CHECK(shape.y0(i, 5) == 1.0);
    CHECK(shape.y0.row(i).sum() == 2.0);
  }
  CHECK_THROWS_AS(adversarial_bias_panel(3), validation_error);

  for (const int n : {4, 5, 6, 8}) {
    const PotentialPanel pp = adversarial_bias_panel(n);
    const ExperimentReport report = run_unit_randomization(
        pp, {spec_of(WeightFamily::sc), spec_of(WeightFamily::musc)}, n);
    const double expected = static_cast<double>(n - 2) / static_cast<double>(n);
    CHECK(report.rows[0].bias == doctest::Approx(expected).epsilon(1e-6));
    CHECK(std::abs(report.rows[1].bias) <= 1e-8);
  }
}

TEST_CASE("the reference placebo panels reproduce both bias directions") {
  const PlaceboExamples examples = placebo_example_panels();
  CHECK(examples.downward.n_units() == 4);
  CHECK(examples.downward.n_periods() == 3);
  CHECK(examples.downward.y0 == examples.downward.y1);
  CHECK(examples.upward.y0(2, 1) == 3.0);

  const Panel down = examples.downward.control_panel();
  const WeightTensor paired =
      solve_weights(down, spec_of(WeightFamily::musc), PeriodScope::single(2));
  CHECK(exact_variance(examples.downward.y0, paired, 2) == doctest::Approx(1.0).epsilon(1e-9));

  const Panel up = examples.upward.control_panel();
  const WeightTensor matched =
      solve_weights(up, spec_of(WeightFamily::sc), PeriodScope::single(2));
  CHECK(exact_variance(examples.upward.y0, matched, 2) <= 1e-12);

  // Parameters fill the pre-treatment blocks of the paired panel row by row.
  const PlaceboExamples custom = placebo_example_panels(1.0, 2.0, 3.0, 7.0);
  CHECK(custom.downward.y0(0, 0) == 1.0);
  CHECK(custom.downward.y0(1, 1) == 2.0);
  CHECK(custom.downward.y0(2, 0) == 3.0);
  CHECK(custom.downward.y0(3, 1) == 7.0);
}

TEST_CASE("the synthetic generator is seed-deterministic with a draw-prefix property") {
  SyntheticPanelSpec spec;
  spec.n_units = 6;
  spec.n_periods = 9;
  spec.ar_coefficient = 0.6;
  spec.covariance = CrossCovariance::banded;
  spec.cross_correlation = 0.5;
  spec.seed = 99;

  const PotentialPanel first = stationary_synthetic_panel(spec);
  CHECK(first.n_units() == 6);
  CHECK(first.n_periods() == 9);
  CHECK(first.units.front() == "u1");
  CHECK(first.periods.back() == "t9");
  CHECK(first.y0 == first.y1);

  const PotentialPanel repeat = stationary_synthetic_panel(spec);
  CHECK(first.y0 == repeat.y0);

  SyntheticPanelSpec longer = spec;
  longer.n_periods = 12;
  const PotentialPanel extended = stationary_synthetic_panel(longer);
  CHECK(extended.y0.leftCols(9) == first.y0);

  SyntheticPanelSpec reseeded = spec;
  reseeded.seed = 100;
  CHECK(stationary_synthetic_panel(reseeded).y0 != first.y0);
}

TEST_CASE("synthetic specs validate sizes, stationarity and covariance bounds") {
  SyntheticPanelSpec spec;
  spec.n_units = 4;
  spec.n_periods = 5;
  CHECK_NOTHROW(spec.validate());

  SyntheticPanelSpec bad = spec;
  bad.n_units = 0;
  CHECK_THROWS_AS(bad.validate(), validation_error);
  bad = spec;
  bad.n_periods = 0;
  CHECK_THROWS_AS(bad.validate(), validation_error);
  bad = spec;
  bad.ar_coefficient = 1.0;
  CHECK_THROWS_AS(bad.validate(), validation_error);
  bad = spec;
  bad.covariance = CrossCovariance::equicorrelated;
  bad.cross_correlation = -1.0 / 3.0;
  CHECK_THROWS_AS(bad.validate(), validation_error);
  bad.cross_correlation = 0.99;
  CHECK_NOTHROW(bad.validate());
  bad = spec;
  bad.covariance = CrossCovariance::banded;
  bad.cross_correlation = 1.0;
  CHECK_THROWS_AS(bad.validate(), validation_error);
}

TEST_CASE("families that cannot run become error rows instead of sinking the report") {
  const PotentialPanel pp = testutil::random_zero_effect(606, 4, 5);
  const std::vector<WeightSetSpec> families{
      spec_of(WeightFamily::musc), propensity_spec({0.7, 0.1, 0.1, 0.1})};
  const ExperimentReport report = run_unit_randomization(pp, families, 4);
  REQUIRE(report.rows.size() == 2);
  CHECK_FALSE(report.rows[0].error.has_value());
  REQUIRE(report.rows[1].error.has_value());

  const auto doc = nlohmann::json::parse(experiment_report_to_json(report));
  CHECK_FALSE(doc.contains("seed"));
  CHECK(doc["rows"][0].contains("bias"));
  CHECK_FALSE(doc["rows"][1].contains("bias"));
  CHECK(doc["rows"][1].contains("error"));

  const std::string table = experiment_report_to_table(report);
  CHECK(table.find("(enumerated, 4 cells)") != std::string::npos);
  CHECK(table.find("n/a") != std::string::npos);
  CHECK(table.find("error[musc-p]:") != std::string::npos);
  CHECK(table.find("exact variance") != std::string::npos);
}
