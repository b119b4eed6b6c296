// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
// Each criterion pins the tolerance and, where stated, a wall-clock budget.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

#include "dbsc/estimate.hpp"
#include "dbsc/multitreat.hpp"
#include "dbsc/network.hpp"
#include "dbsc/panel.hpp"
#include "dbsc/randlab.hpp"
#include "dbsc/variance.hpp"
#include "dbsc/weights.hpp"
#include "helpers.hpp"

using namespace dbsc;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double g_max_kkt = 0.0;

void track_kkt(double kkt) {
  if (kkt > g_max_kkt) g_max_kkt = kkt;
}

std::string fmt(double value) {
  char buffer[40];
  std::snprintf(buffer, sizeof(buffer), "%.3g", value);
  return buffer;
}

WeightSetSpec spec_for(WeightFamily family, int n_units = 0) {
  WeightSetSpec spec;
  spec.family = family;
  if (family == WeightFamily::musc_p)
    spec.propensities.assign(static_cast<std::size_t>(n_units), 1.0 / n_units);
  return spec;
}

Panel seeded_panel(int k) {
  return testutil::random_panel(k, 4 + (k - 1) % 5, 5 + (k - 1) % 8);
}

// Criterion 1: enumerated bias of the balanced families vanishes.
Outcome criterion_unbiased_families() {
  double max_bias = 0.0;
  for (int k = 1; k <= 20; ++k) {
    const Panel panel = seeded_panel(k);
    const int t = panel.n_periods() - 1;
    for (const WeightFamily family :
         {WeightFamily::dim, WeightFamily::did, WeightFamily::usc, WeightFamily::musc}) {
      const WeightTensor tensor =
          solve_weights(panel, spec_for(family), PeriodScope::single(t));
      track_kkt(tensor.kkt);
      double bias = 0.0;
      for (int i = 0; i < panel.n_units(); ++i)
        bias += gsc_estimate(panel, tensor, {i, t}).value;
      bias /= static_cast<double>(panel.n_units());
      max_bias = std::max(max_bias, std::abs(bias));
    }
  }
  return {max_bias <= 1e-8, "max |bias| " + fmt(max_bias)};
}

// Criterion 2: per-unit least squares inherits the (n - 2) / n spike bias.
Outcome criterion_adversarial_bias() {
  double max_gap = 0.0;
  for (const int n : {4, 5, 6, 8}) {
    const PotentialPanel pp = adversarial_bias_panel(n);
    const Panel control = pp.control_panel();
    const int t = pp.n_periods() - 1;
    const WeightTensor tensor =
        solve_weights(control, spec_for(WeightFamily::sc), PeriodScope::single(t));
    track_kkt(tensor.kkt);
    double bias = 0.0;
    for (int i = 0; i < n; ++i) bias += gsc_estimate(control, tensor, {i, t}).value;
    bias /= static_cast<double>(n);
    max_gap = std::max(max_gap, std::abs(bias - static_cast<double>(n - 2) / n));
  }
  return {max_gap <= 1e-6, "max gap to (n-2)/n " + fmt(max_gap)};
}

// Criterion 3: the variance estimate averages back to the exact variance.
Outcome criterion_variance_unbiased() {
  double max_gap = 0.0;
  for (int k = 1; k <= 20; ++k) {
    const Panel panel = seeded_panel(k);
    const int n = panel.n_units();
    const int t = panel.n_periods() - 1;
    for (const WeightFamily family :
         {WeightFamily::dim, WeightFamily::did, WeightFamily::sc, WeightFamily::msc,
          WeightFamily::usc, WeightFamily::musc, WeightFamily::musc_p}) {
      const WeightTensor tensor =
          solve_weights(panel, spec_for(family, n), PeriodScope::single(t));
      track_kkt(tensor.kkt);
      double mean = 0.0;
      for (int i = 0; i < n; ++i)
        mean += unbiased_variance_estimate(panel, tensor, {i, t});
      mean /= static_cast<double>(n);
      max_gap = std::max(max_gap, std::abs(mean - exact_variance(panel.y, tensor, t)));
    }
  }
  return {max_gap <= 1e-9, "max |mean - exact| " + fmt(max_gap)};
}

// Criterion 4: same identity for the subset-treatment estimator.
Outcome criterion_multi_variance() {
  double max_gap = 0.0;
  const std::vector<std::pair<int, int>> cases{{6, 2}, {7, 2}, {8, 3}};
  for (std::size_t c = 0; c < cases.size(); ++c) {
    const Panel panel = testutil::random_panel(41 + static_cast<int>(c), cases[c].first, 7);
    const int t = panel.n_periods() - 1;
    const MultiWeightTensor mt =
        solve_multi_weights(panel, cases[c].second, PeriodScope::single(t));
    track_kkt(mt.kkt);
    double mean = 0.0;
    for (int k = 0; k < mt.index.size(); ++k)
      mean += multi_unbiased_variance_estimate(panel, mt,
                                               mt.index.subsets[static_cast<std::size_t>(k)], t);
    mean /= static_cast<double>(mt.index.size());
    max_gap = std::max(max_gap, std::abs(mean - multi_exact_variance(panel.y, mt, t)));
  }
  return {max_gap <= 1e-9, "max |mean - exact| " + fmt(max_gap)};
}

// Criterion 5: the placebo estimate lands on the documented side of the truth.
Outcome criterion_placebo_directions() {
  const PlaceboExamples examples = placebo_example_panels();
  const int t = 2;

  const Panel down = examples.downward.control_panel();
  const WeightSetSpec down_spec = spec_for(WeightFamily::musc);
  const WeightTensor paired = solve_weights(down, down_spec, PeriodScope::single(t));
  track_kkt(paired.kkt);
  const double down_exact = exact_variance(examples.downward.y0, paired, t);
  double down_mean = 0.0;
  for (int i = 0; i < down.n_units(); ++i)
    down_mean += placebo_variance_estimate(down, down_spec, {i, t});
  down_mean /= static_cast<double>(down.n_units());

  const Panel up = examples.upward.control_panel();
  const WeightSetSpec up_spec = spec_for(WeightFamily::sc);
  const WeightTensor matched = solve_weights(up, up_spec, PeriodScope::single(t));
  track_kkt(matched.kkt);
  const double up_exact = exact_variance(examples.upward.y0, matched, t);
  double up_mean = 0.0;
  for (int i = 0; i < up.n_units(); ++i)
    up_mean += placebo_variance_estimate(up, up_spec, {i, t});
  up_mean /= static_cast<double>(up.n_units());

  const bool pass = std::abs(down_exact - 1.0) <= 1e-9 && down_mean < down_exact - 1e-6 &&
                    up_mean > up_exact + 1e-6;
  return {pass, "downward " + fmt(down_mean) + " vs exact " + fmt(down_exact) + ", upward " +
                    fmt(up_mean) + " vs exact " + fmt(up_exact)};
}

// Criterion 6: weight, propensity and centrality goldens on the equidistant panel.
Outcome criterion_network_goldens() {
  const Panel panel = testutil::equidistant_panel();
  const int t = 2;
  const WeightTensor tensor =
      solve_weights(panel, spec_for(WeightFamily::sc), PeriodScope::single(t));
  track_kkt(tensor.kkt);

  const Eigen::MatrixXd& slice = tensor.w[static_cast<std::size_t>(tensor.slice_of(t))];
  Eigen::MatrixXd expected(3, 3);
  expected << 1.0, -1.0, 0.0,
              -0.5, 1.0, -0.5,
              0.0, -1.0, 1.0;
  double max_gap = (slice - expected).cwiseAbs().maxCoeff();

  const PropensityResult propensities = unbiased_propensities(tensor, t);
  const FlowNetwork net = weights_to_network(tensor, t);
  const CentralityResult centrality = eigenvector_centrality(net);
  Eigen::VectorXd golden(3);
  golden << 0.25, 0.5, 0.25;
  max_gap = std::max(max_gap, (propensities.p - golden).cwiseAbs().maxCoeff());
  max_gap = std::max(max_gap, (centrality.centrality - golden).cwiseAbs().maxCoeff());

  return {max_gap <= 1e-9, "max gap " + fmt(max_gap)};
}

// Criterion 7: richer weight sets never fit worse on the same panel.
Outcome criterion_objective_nesting() {
  double worst_slack = 0.0;
  for (int k = 0; k < 50; ++k) {
    const Panel panel = testutil::random_panel(100 + k, 3 + k % 6, 4 + k % 7);
    const int t = panel.n_periods() - 1;
    auto objective = [&](WeightFamily family) {
      const WeightTensor tensor =
          solve_weights(panel, spec_for(family), PeriodScope::single(t));
      track_kkt(tensor.kkt);
      return tensor.objective;
    };
    const double dim = objective(WeightFamily::dim);
    const double sc = objective(WeightFamily::sc);
    const double msc = objective(WeightFamily::msc);
    const double usc = objective(WeightFamily::usc);
    const double musc = objective(WeightFamily::musc);
    worst_slack = std::max({worst_slack, msc - musc, musc - usc, usc - dim, msc - sc, sc - usc});
  }
  return {worst_slack <= 1e-8, "worst nesting slack " + fmt(worst_slack)};
}

// Criterion 8: under time randomization on correlated panels, the regression
// family's MSE beats or matches difference in means in at least 18 of 20 seeds.
Outcome criterion_improvement_regime() {
  int wins = 0;
  double worst_ratio = 0.0;
  for (int k = 0; k < 20; ++k) {
    SyntheticPanelSpec spec;
    spec.n_units = 10;
    spec.n_periods = 200;
    spec.ar_coefficient = 0.0;
    spec.covariance = CrossCovariance::banded;
    spec.cross_correlation = 0.7;
    spec.seed = 2024 + static_cast<std::uint64_t>(k);
    const PotentialPanel pp = stationary_synthetic_panel(spec);

    const ExperimentReport report = run_time_randomization(
        pp, {spec_for(WeightFamily::dim), spec_for(WeightFamily::musc)}, 0);
    const double mse_dim = report.rows[0].rmse * report.rows[0].rmse;
    const double mse_musc = report.rows[1].rmse * report.rows[1].rmse;
    if (mse_musc <= 1.05 * mse_dim) ++wins;
    worst_ratio = std::max(worst_ratio, mse_musc / mse_dim);
  }
  return {wins >= 18,
          std::to_string(wins) + "/20 seeds, worst MSE ratio " + fmt(worst_ratio)};
}

// Criterion 9: the treated cell's outcome never reaches its own weight slice.
Outcome criterion_non_stochastic_weights() {
  for (int k = 0; k < 10; ++k) {
    Panel panel = testutil::random_panel(300 + k, 4 + k % 4, 5 + k % 5);
    const int t = panel.n_periods() - 1;
    const int unit = k % panel.n_units();
    const WeightSetSpec spec = spec_for(WeightFamily::musc);

    const WeightTensor before = solve_weights(panel, spec, PeriodScope::single(t));
    panel.y(unit, t) += 3.25;
    const WeightTensor after = solve_weights(panel, spec, PeriodScope::single(t));
    track_kkt(before.kkt);
    track_kkt(after.kkt);

    const std::size_t slice = static_cast<std::size_t>(before.slice_of(t));
    const Eigen::MatrixXd& wb = before.w[slice];
    const Eigen::MatrixXd& wa = after.w[slice];
    const Eigen::VectorXd& ib = before.intercepts[slice];
    const Eigen::VectorXd& ia = after.intercepts[slice];
    if (std::memcmp(wb.data(), wa.data(), sizeof(double) * static_cast<std::size_t>(wb.size())) !=
            0 ||
        std::memcmp(ib.data(), ia.data(), sizeof(double) * static_cast<std::size_t>(ib.size())) !=
            0)
      return {false, "slice changed on panel " + std::to_string(300 + k)};
  }
  return {true, "10 panels bit-identical"};
}

// Criterion 10: solver optimality against a simplex grid oracle, plus the
// certificate bound over every tensor this suite solved.
Outcome criterion_solver_correctness() {
  double worst_gap = 0.0;
  for (int k = 0; k < 20; ++k) {
    const Panel panel = testutil::random_panel(400 + k, 3, 5);
    const int t = panel.n_periods() - 1;
    const WeightTensor tensor =
        solve_weights(panel, spec_for(WeightFamily::sc), PeriodScope::single(t));
    track_kkt(tensor.kkt);
    const Eigen::MatrixXd& slice = tensor.w[static_cast<std::size_t>(tensor.slice_of(t))];

    for (int i = 0; i < 3; ++i) {
      const int j1 = (i + 1) % 3;
      const int j2 = (i + 2) % 3;
      auto row_objective = [&](double w1) {
        double total = 0.0;
        for (int s = 0; s < panel.n_periods(); ++s) {
          if (s == t) continue;
          const double r =
              panel.y(i, s) - w1 * panel.y(j1, s) - (1.0 - w1) * panel.y(j2, s);
          total += r * r;
        }
        return total;
      };
      double oracle = row_objective(0.0);
      for (int g = 1; g <= 1000; ++g) oracle = std::min(oracle, row_objective(g / 1000.0));
      const double solver = row_objective(-slice(i, j1));
      worst_gap = std::max(worst_gap, solver - oracle);
    }
  }
  const bool pass = worst_gap <= 1e-4 && g_max_kkt <= 1e-8;
  return {pass,
          "worst objective gap " + fmt(worst_gap) + ", max KKT residual " + fmt(g_max_kkt)};
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* label;
    double budget_seconds;  // 0 = no stated budget
    std::function<Outcome()> run;
  };

  const std::vector<Criterion> criteria{
      {1, "enumerated bias of dim/did/usc/musc <= 1e-8 on 20 seeded panels", 30.0,
       criterion_unbiased_families},
      {2, "sc bias equals (n-2)/n on the adversarial panel, n in {4,5,6,8}", 10.0,
       criterion_adversarial_bias},
      {3, "variance estimate enumerates to the exact variance, all families", 60.0,
       criterion_variance_unbiased},
      {4, "subset variance identity for (6,2), (7,2), (8,3)", 120.0, criterion_multi_variance},
      {5, "placebo variance falls below / rises above the truth as documented", 10.0,
       criterion_placebo_directions},
      {6, "equidistant-panel weight, propensity and centrality goldens", 1.0,
       criterion_network_goldens},
      {7, "objective nesting across weight families on 50 panels", 0.0,
       criterion_objective_nesting},
      {8, "time-randomized MSE(musc) <= 1.05 x MSE(dim) in >= 18/20 seeds", 300.0,
       criterion_improvement_regime},
      {9, "treated-cell perturbations leave the weight slice bit-identical", 0.0,
       criterion_non_stochastic_weights},
      {10, "sc weights match a simplex grid oracle; KKT <= 1e-8 suite-wide", 0.0,
       criterion_solver_correctness},
  };

  bool all_pass = true;
  for (const Criterion& criterion : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome outcome;
    try {
      outcome = criterion.run();
    } catch (const std::exception& error) {
      outcome = {false, std::string("exception: ") + error.what()};
    }
    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_budget = criterion.budget_seconds <= 0.0 || elapsed < criterion.budget_seconds;
    const bool pass = outcome.pass && in_budget;
    all_pass = all_pass && pass;
    std::printf("%s  criterion %2d: %s  [%s; %.2f s%s]\n", pass ? "PASS" : "FAIL", criterion.id,
                criterion.label, outcome.detail.c_str(), elapsed,
                in_budget ? "" : ", over budget");
  }
  std::printf("%s\n", all_pass ? "acceptance: all criteria passed"
                               : "acceptance: at least one criterion failed");
  return all_pass ? 0 : 1;
}
