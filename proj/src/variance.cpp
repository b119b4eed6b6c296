#include "dbsc/variance.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "dbsc/errors.hpp"
#include "dbsc/estimate.hpp"

namespace dbsc {

double exact_variance(const Eigen::MatrixXd& y0, const WeightTensor& tensor, int period) {
  const int n = tensor.n_units();
  require(y0.rows() == n, "outcome matrix rows must match the tensor's units");
  require(period >= 0 && period < y0.cols(), "treated period index out of range");
  const int slice = tensor.slice_of(period);
  const auto& w = tensor.w[static_cast<std::size_t>(slice)];
  const auto& a = tensor.intercepts[static_cast<std::size_t>(slice)];
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    double err = a[i];
    for (int j = 0; j < n; ++j) err += w(i, j) * y0(j, period);
    total += err * err;
  }
  return total / static_cast<double>(n);
}

double unbiased_variance_estimate(const Panel& panel, const WeightTensor& tensor,
                                  const Assignment& a, bool truncate_negative) {
  panel.validate();
  const int n = panel.n_units();
  require(tensor.n_units() == n, "tensor and panel disagree on the number of units");
  require(n >= 4,
          "the variance estimate needs at least 4 units (denominators N-2 and N-3)");
  require(a.unit >= 0 && a.unit < n, "treated unit index out of range");
  const int t = a.period;
  require(t >= 0 && t < panel.n_periods(), "treated period index out of range");
  const int slice = tensor.slice_of(t);
  const auto& w = tensor.w[static_cast<std::size_t>(slice)];
  const auto& m0 = tensor.intercepts[static_cast<std::size_t>(slice)];
  const int i = a.unit;

  // Leave-treated-out contrast term, its diagonal correction, and the intercept
  // cross term; contrasts use control outcomes only.
  double term_contrast = 0.0;
  double term_diagonal = 0.0;
  double term_intercept = 0.0;
  for (int k = 0; k < n; ++k) {
    if (k == i) continue;
    double contrast = 0.0;
    double cross = 0.0;
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      const double gap = panel.y(k, t) - panel.y(j, t);
      contrast += w(k, j) * gap;
      term_diagonal += w(k, j) * w(k, j) * gap * gap;
      cross += w(k, j) * (panel.y(j, t) - panel.y(k, t));
    }
    term_contrast += contrast * contrast;
    term_intercept += m0[k] * cross;
  }

  const double nd = static_cast<double>(n);
  double value = term_contrast / (nd - 3.0)
               - term_diagonal / ((nd - 2.0) * (nd - 3.0))
               + 2.0 * term_intercept / (nd - 2.0)
               + m0.squaredNorm() / nd;
  if (truncate_negative) value = std::max(value, 0.0);
  return value;
}

double placebo_variance_estimate(const Panel& panel, const WeightSetSpec& spec,
                                 const Assignment& a, const SolveControls& controls) {
  panel.validate();
  const int n = panel.n_units();
  require(n >= 3, "the placebo variance needs at least 3 units");
  require(a.unit >= 0 && a.unit < n, "treated unit index out of range");
  require(a.period >= 0 && a.period < panel.n_periods(), "treated period index out of range");
  require(spec.family != WeightFamily::musc_p,
          "the placebo refit is undefined for musc-p (no propensity vector for the "
          "reduced panel)");
  if (spec.family == WeightFamily::usc || spec.family == WeightFamily::musc) {
    require(n >= 4, "the " + family_name(spec.family) +
                        " placebo refit needs at least 4 units (the reduced fit has N-1)");
  }

  Panel reduced;
  reduced.periods = panel.periods;
  reduced.y = Eigen::MatrixXd(n - 1, panel.n_periods());
  std::vector<int> kept;
  for (int j = 0; j < n; ++j) {
    if (j == a.unit) continue;
    reduced.units.push_back(panel.units[static_cast<std::size_t>(j)]);
    reduced.y.row(static_cast<int>(kept.size())) = panel.y.row(j);
    kept.push_back(j);
  }

  const WeightTensor refit =
      solve_weights(reduced, spec, PeriodScope::single(a.period), controls);
  double total = 0.0;
  for (int j = 0; j < n - 1; ++j) {
    const Estimate pseudo = gsc_estimate(reduced, refit, Assignment{j, a.period});
    total += pseudo.value * pseudo.value;
  }
  return total / static_cast<double>(n - 1);
}

double standard_error(double variance_estimate) {
  return std::sqrt(std::max(variance_estimate, 0.0));
}

VarianceReport variance_report(const Panel& panel, const WeightTensor& tensor,
                               const WeightSetSpec& spec, const Assignment& a,
                               const VarianceRequest& request,
                               const SolveControls& controls) {
  VarianceReport report;
  report.family = tensor.family;
  report.n_units = panel.n_units();
  report.treated_period = a.period;
  if (request.y0 != nullptr) report.exact = exact_variance(*request.y0, tensor, a.period);
  if (request.unbiased) {
    const double raw = unbiased_variance_estimate(panel, tensor, a, false);
    report.negative_estimate = raw < 0.0;
    report.truncated = request.truncate_negative && raw < 0.0;
    report.unbiased_estimate = request.truncate_negative ? std::max(raw, 0.0) : raw;
  }
  if (request.placebo)
    report.placebo_estimate = placebo_variance_estimate(panel, spec, a, controls);
  return report;
}

std::string variance_report_to_json(const VarianceReport& report,
                                    const std::vector<std::string>& periods) {
  nlohmann::ordered_json j;
  j["family"] = family_name(report.family);
  j["n_units"] = report.n_units;
  j["treated_period"] = periods[static_cast<std::size_t>(report.treated_period)];
  if (report.exact) j["exact_variance"] = *report.exact;
  if (report.unbiased_estimate) {
    j["variance_estimate"] = *report.unbiased_estimate;
    j["standard_error"] = standard_error(*report.unbiased_estimate);
    j["negative_estimate"] = report.negative_estimate;
    j["truncated"] = report.truncated;
  }
  if (report.placebo_estimate) {
    j["placebo_variance"] = *report.placebo_estimate;
    j["placebo_standard_error"] = standard_error(*report.placebo_estimate);
  }
  return j.dump(2);
}

}  // namespace dbsc
