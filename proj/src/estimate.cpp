#include "dbsc/estimate.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

#include "dbsc/errors.hpp"
#include "dbsc/qp.hpp"
#include "weights_internal.hpp"

namespace dbsc {

namespace {

void check_alignment(const Panel& panel, const WeightTensor& tensor) {
  require(tensor.n_units() == panel.n_units(),
          "tensor and panel disagree on the number of units");
  require(tensor.periods.size() == panel.periods.size(),
          "tensor and panel disagree on the number of periods");
}

// Rows of the vertical fitting problem: the target is the cross-unit average
// outcome and the treated unit's column is dropped from every fit.
void vertical_data(const Panel& panel, const detail::JointLayout& layout, int treated_unit,
                   int period, Eigen::MatrixXd& g, Eigen::VectorXd& h) {
  const int n = panel.n_units();
  const int t_count = panel.n_periods();
  g = Eigen::MatrixXd::Zero(n * (t_count - 1), layout.n_vars());
  h = Eigen::VectorXd::Zero(n * (t_count - 1));
  int row = 0;
  for (int i = 0; i < n; ++i) {
    for (int s = 0; s < t_count; ++s) {
      if (s == period) continue;
      g(row, layout.intercept_index(i)) = 1.0;
      for (int j = 0; j < n; ++j) {
        if (j == i || j == treated_unit) continue;
        g(row, layout.weight_index(i, j)) = panel.y(j, s);
      }
      double target = panel.y.col(s).mean();
      if (i != treated_unit) target += panel.y(i, s);
      h[row] = -target;
      ++row;
    }
  }
}

}  // namespace

std::string estimand_name(EstimandTarget target) {
  switch (target) {
    case EstimandTarget::cell: return "cell";
    case EstimandTarget::vertical: return "vertical";
    case EstimandTarget::horizontal: return "horizontal";
    case EstimandTarget::population: return "population";
  }
  return "unknown";
}

Estimate gsc_estimate(const Panel& panel, const WeightTensor& tensor, const Assignment& a) {
  panel.validate();
  check_alignment(panel, tensor);
  require(a.unit >= 0 && a.unit < panel.n_units(), "treated unit index out of range");
  require(a.period >= 0 && a.period < panel.n_periods(), "treated period index out of range");
  require(tensor.covers(a.period),
          "weight tensor does not cover the treated period; refit with the right scope");

  const int slice = tensor.slice_of(a.period);
  const auto& w = tensor.w[static_cast<std::size_t>(slice)];
  double value = tensor.intercepts[static_cast<std::size_t>(slice)][a.unit];
  for (int j = 0; j < panel.n_units(); ++j) value += w(a.unit, j) * panel.y(j, a.period);

  Estimate out;
  out.value = value;
  out.assignment = a;
  out.family = tensor.family;
  out.target = EstimandTarget::cell;
  out.counterfactual = panel.y(a.unit, a.period) - value;
  return out;
}

Estimands true_estimands(const PotentialPanel& pp, const Assignment& a) {
  pp.validate();
  require(a.unit >= 0 && a.unit < pp.n_units(), "treated unit index out of range");
  require(a.period >= 0 && a.period < pp.n_periods(), "treated period index out of range");
  const Eigen::MatrixXd effects = pp.y1 - pp.y0;
  Estimands out;
  out.cell = effects(a.unit, a.period);
  out.vertical = effects.col(a.period).mean();
  out.horizontal = effects.row(a.unit).mean();
  out.population = effects.mean();
  return out;
}

double exact_sc_bias(const Eigen::MatrixXd& y0, const WeightTensor& tensor, int period) {
  const int n = tensor.n_units();
  require(y0.rows() == n, "outcome matrix rows must match the tensor's units");
  require(period >= 0 && period < y0.cols(), "treated period index out of range");
  const int slice = tensor.slice_of(period);
  const auto& w = tensor.w[static_cast<std::size_t>(slice)];
  const auto& a = tensor.intercepts[static_cast<std::size_t>(slice)];
  double bias = a.sum();
  for (int j = 0; j < n; ++j) bias += w.col(j).sum() * y0(j, period);
  return bias / static_cast<double>(n);
}

WeightTensor vertical_weights_uncorrelated(const Panel& panel, const Assignment& a,
                                           const SolveControls& controls) {
  panel.validate();
  require(panel.n_units() >= 3, "vertical weights need at least 3 units");
  require(a.unit >= 0 && a.unit < panel.n_units(), "treated unit index out of range");
  require(a.period >= 0 && a.period < panel.n_periods(), "treated period index out of range");

  const int n = panel.n_units();
  const detail::JointLayout layout{n, true};
  QpProblem problem =
      detail::joint_skeleton(layout, detail::ColumnConstraint::plain, {});
  Eigen::MatrixXd g;
  Eigen::VectorXd h;
  vertical_data(panel, layout, a.unit, a.period, g, h);
  detail::add_least_squares(problem, g, h, controls.ridge);

  QpOptions qp_options;
  qp_options.max_iterations = controls.max_iterations;
  qp_options.tol_kkt = controls.tol_kkt;
  const QpSolution solution = solve_qp(problem, qp_options);

  WeightTensor tensor;
  tensor.family = WeightFamily::musc;
  tensor.units = panel.units;
  tensor.periods = panel.periods;
  tensor.covered = {a.period};
  tensor.intercepts.resize(1);
  tensor.w.resize(1);
  auto& w = tensor.w[0];
  auto& intercept = tensor.intercepts[0];
  w = Eigen::MatrixXd::Zero(n, n);
  w.diagonal().setOnes();
  intercept = Eigen::VectorXd::Zero(n);
  for (int i = 0; i < n; ++i) {
    intercept[i] = solution.x[layout.intercept_index(i)];
    for (int j = 0; j < n; ++j)
      if (j != i) w(i, j) = solution.x[layout.weight_index(i, j)];
  }

  QpProblem plain = detail::joint_skeleton(layout, detail::ColumnConstraint::plain, {});
  detail::add_least_squares(plain, g, h, 0.0);
  tensor.kkt = qp_kkt_residual(plain, solution.x, solution.eq_duals, solution.bound_duals);
  tensor.objective = vertical_objective_value(panel, tensor, a);
  return tensor;
}

double vertical_objective_value(const Panel& panel, const WeightTensor& tensor,
                                const Assignment& a) {
  panel.validate();
  check_alignment(panel, tensor);
  const int n = panel.n_units();
  const int slice = tensor.slice_of(a.period);
  const auto& w = tensor.w[static_cast<std::size_t>(slice)];
  const auto& intercept = tensor.intercepts[static_cast<std::size_t>(slice)];
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    for (int s = 0; s < panel.n_periods(); ++s) {
      if (s == a.period) continue;
      double fitted = intercept[i] + panel.y.col(s).mean();
      for (int j = 0; j < n; ++j) {
        if (j == a.unit) continue;
        fitted += w(i, j) * panel.y(j, s);
      }
      total += fitted * fitted;
    }
  }
  return total;
}

std::string estimate_to_json(const Estimate& estimate, const WeightTensor& tensor) {
  nlohmann::ordered_json j;
  j["family"] = family_name(estimate.family);
  j["estimand"] = estimand_name(estimate.target);
  j["treated_unit"] = tensor.units[static_cast<std::size_t>(estimate.assignment.unit)];
  j["treated_period"] = tensor.periods[static_cast<std::size_t>(estimate.assignment.period)];
  j["estimate"] = estimate.value;
  j["counterfactual"] = estimate.counterfactual;
  return j.dump(2);
}

}  // namespace dbsc
