#include "dbsc/weights.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include <nlohmann/json.hpp>

#include "dbsc/errors.hpp"
#include "dbsc/parallel.hpp"
#include "dbsc/qp.hpp"
#include "weights_internal.hpp"

namespace dbsc {

namespace detail {

QpProblem joint_skeleton(const JointLayout& layout, ColumnConstraint columns,
                         const std::vector<double>& propensities) {
  const int n = layout.n_units;
  const int n_vars = layout.n_vars();
  const int n_cols = columns == ColumnConstraint::none ? 0 : n;

  QpProblem problem;
  problem.P = Eigen::MatrixXd::Zero(n_vars, n_vars);
  problem.q = Eigen::VectorXd::Zero(n_vars);
  problem.E = Eigen::MatrixXd::Zero(n + n_cols, n_vars);
  problem.e = Eigen::VectorXd::Zero(n + n_cols);

  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      problem.E(i, layout.weight_index(i, j)) = 1.0;
      problem.nonpositive.push_back(layout.weight_index(i, j));
    }
    problem.e[i] = -1.0;
  }
  std::sort(problem.nonpositive.begin(), problem.nonpositive.end());

  if (columns == ColumnConstraint::plain) {
    for (int j = 0; j < n; ++j) {
      for (int i = 0; i < n; ++i) {
        if (i == j) continue;
        problem.E(n + j, layout.weight_index(i, j)) = 1.0;
      }
      problem.e[n + j] = -1.0;
    }
  } else if (columns == ColumnConstraint::propensity) {
    // Rows are normalized so a uniform propensity vector reproduces the plain
    // column constraint exactly.
    for (int j = 0; j < n; ++j) {
      const double pj = propensities[static_cast<std::size_t>(j)];
      const double scale = pj > 0.0 ? 1.0 / pj : static_cast<double>(n);
      for (int i = 0; i < n; ++i) {
        if (i == j) continue;
        problem.E(n + j, layout.weight_index(i, j)) =
            scale * propensities[static_cast<std::size_t>(i)];
      }
      problem.e[n + j] = -scale * pj;
    }
  }
  return problem;
}

void add_least_squares(QpProblem& problem, const Eigen::MatrixXd& g, const Eigen::VectorXd& h,
                       double ridge) {
  problem.P += 2.0 * (g.transpose() * g);
  problem.P += (2.0 * ridge) * Eigen::MatrixXd::Identity(problem.P.rows(), problem.P.cols());
  problem.q += -2.0 * (g.transpose() * h);
}

}  // namespace detail

namespace {

using detail::ColumnConstraint;
using detail::JointLayout;

ColumnConstraint column_kind(WeightFamily family) {
  switch (family) {
    case WeightFamily::usc:
    case WeightFamily::musc:
      return ColumnConstraint::plain;
    case WeightFamily::musc_p:
      return ColumnConstraint::propensity;
    default:
      return ColumnConstraint::none;
  }
}

bool is_pinned_family(WeightFamily family) {
  return family == WeightFamily::dim || family == WeightFamily::did;
}

bool is_separable_family(WeightFamily family) {
  return family == WeightFamily::sc || family == WeightFamily::msc;
}

// Stacked least-squares rows of the joint fitting problem for the slice at `period`:
// one row per (unit, non-treated period) residual. Unit rows are scaled by
// sqrt(p_i) when the family weights residual blocks by propensity.
void joint_data(const Panel& panel, const WeightSetSpec& spec, const JointLayout& layout,
                int period, Eigen::MatrixXd& g, Eigen::VectorXd& h) {
  const int n = panel.n_units();
  const int t_count = panel.n_periods();
  const int rows = n * (t_count - 1);
  g = Eigen::MatrixXd::Zero(rows, layout.n_vars());
  h = Eigen::VectorXd::Zero(rows);
  int row = 0;
  for (int i = 0; i < n; ++i) {
    // Propensity blocks are scaled by sqrt(N p_i): a constant rescale of the
    // weighted objective that reduces to the unweighted one under uniform p.
    const double block_scale =
        spec.family == WeightFamily::musc_p
            ? std::sqrt(static_cast<double>(n) * spec.propensities[static_cast<std::size_t>(i)])
            : 1.0;
    for (int s = 0; s < t_count; ++s) {
      if (s == period) continue;
      if (layout.has_intercept) g(row, layout.intercept_index(i)) = block_scale;
      for (int j = 0; j < n; ++j) {
        if (j == i) continue;
        g(row, layout.weight_index(i, j)) = block_scale * panel.y(j, s);
      }
      h[row] = -block_scale * panel.y(i, s);
      ++row;
    }
  }
}

// Per-treated-unit problem for the separable families: variables are an optional
// intercept followed by the unit's control weights in unit order.
void row_problem(const Panel& panel, bool has_intercept, int unit, int period, double ridge,
                 QpProblem& problem, std::vector<int>& control_ids) {
  const int n = panel.n_units();
  const int t_count = panel.n_periods();
  const int n_controls = n - 1;
  const int n_vars = (has_intercept ? 1 : 0) + n_controls;

  control_ids.clear();
  for (int j = 0; j < n; ++j)
    if (j != unit) control_ids.push_back(j);

  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(t_count - 1, n_vars);
  Eigen::VectorXd h = Eigen::VectorXd::Zero(t_count - 1);
  int row = 0;
  for (int s = 0; s < t_count; ++s) {
    if (s == period) continue;
    if (has_intercept) g(row, 0) = 1.0;
    for (int c = 0; c < n_controls; ++c)
      g(row, (has_intercept ? 1 : 0) + c) = panel.y(control_ids[static_cast<std::size_t>(c)], s);
    h[row] = -panel.y(unit, s);
    ++row;
  }

  problem = QpProblem{};
  problem.P = Eigen::MatrixXd::Zero(n_vars, n_vars);
  problem.q = Eigen::VectorXd::Zero(n_vars);
  problem.E = Eigen::MatrixXd::Zero(1, n_vars);
  problem.e = Eigen::VectorXd::Constant(1, -1.0);
  for (int c = 0; c < n_controls; ++c) {
    problem.E(0, (has_intercept ? 1 : 0) + c) = 1.0;
    problem.nonpositive.push_back((has_intercept ? 1 : 0) + c);
  }
  detail::add_least_squares(problem, g, h, ridge);
}

void fill_pinned_slice(const Panel& panel, const WeightSetSpec& spec, int period,
                       Eigen::VectorXd& intercept, Eigen::MatrixXd& w) {
  const int n = panel.n_units();
  const double off = -1.0 / static_cast<double>(n - 1);
  w = Eigen::MatrixXd::Constant(n, n, off);
  w.diagonal().setOnes();
  intercept = Eigen::VectorXd::Zero(n);
  if (spec.family == WeightFamily::did) {
    // Free intercept with pinned weights has the closed-form solution: minus the
    // average pre-gap between the unit and the mean of the others.
    for (int i = 0; i < n; ++i) {
      double total = 0.0;
      for (int s = 0; s < panel.n_periods(); ++s) {
        if (s == period) continue;
        double others = 0.0;
        for (int j = 0; j < n; ++j)
          if (j != i) others += panel.y(j, s);
        total += panel.y(i, s) - others / static_cast<double>(n - 1);
      }
      intercept[i] = -total / static_cast<double>(panel.n_periods() - 1);
    }
  }
}

std::vector<int> scope_periods(const Panel& panel, const PeriodScope& scope) {
  if (scope.full) {
    std::vector<int> all(static_cast<std::size_t>(panel.n_periods()));
    std::iota(all.begin(), all.end(), 0);
    return all;
  }
  require(scope.period >= 0 && scope.period < panel.n_periods(),
          "treated period index out of range");
  return {scope.period};
}

double pinned_family_residual(const Panel& panel, const WeightTensor& tensor,
                              const WeightSetSpec& spec, int period) {
  // The weight entries are fully pinned, so only feasibility and, for the free
  // intercept, its first-order condition can be violated.
  const int n = panel.n_units();
  const int slice = tensor.slice_of(period);
  const auto& w = tensor.w[static_cast<std::size_t>(slice)];
  const auto& a = tensor.intercepts[static_cast<std::size_t>(slice)];
  const double off = -1.0 / static_cast<double>(n - 1);
  double r = 0.0;
  for (int i = 0; i < n; ++i) {
    r = std::max(r, std::abs(w(i, i) - 1.0));
    for (int j = 0; j < n; ++j)
      if (j != i) r = std::max(r, std::abs(w(i, j) - off));
  }
  if (spec.family == WeightFamily::dim) {
    for (int i = 0; i < n; ++i) r = std::max(r, std::abs(a[i]));
  } else {
    for (int i = 0; i < n; ++i) {
      double foc = 0.0;
      for (int s = 0; s < panel.n_periods(); ++s) {
        if (s == period) continue;
        double fitted = a[i] + panel.y(i, s);
        for (int j = 0; j < n; ++j)
          if (j != i) fitted += w(i, j) * panel.y(j, s);
        foc += 2.0 * fitted;
      }
      r = std::max(r, std::abs(foc));
    }
  }
  return r;
}

}  // namespace

std::string family_name(WeightFamily family) {
  switch (family) {
    case WeightFamily::dim: return "dim";
    case WeightFamily::did: return "did";
    case WeightFamily::sc: return "sc";
    case WeightFamily::msc: return "msc";
    case WeightFamily::usc: return "usc";
    case WeightFamily::musc: return "musc";
    case WeightFamily::musc_p: return "musc-p";
  }
  return "unknown";
}

WeightFamily family_from_name(const std::string& name) {
  if (name == "dim") return WeightFamily::dim;
  if (name == "did") return WeightFamily::did;
  if (name == "sc") return WeightFamily::sc;
  if (name == "msc") return WeightFamily::msc;
  if (name == "usc") return WeightFamily::usc;
  if (name == "musc") return WeightFamily::musc;
  if (name == "musc-p" || name == "musc_p") return WeightFamily::musc_p;
  throw validation_error("unknown weight family '" + name +
                         "' (expected dim|did|sc|msc|usc|musc|musc-p)");
}

void WeightSetSpec::validate(int n_units) const {
  require(n_units >= 2, "weight fitting needs at least 2 units");
  if (family == WeightFamily::usc || family == WeightFamily::musc ||
      family == WeightFamily::musc_p) {
    require(n_units >= 3, family_name(family) + " needs at least 3 units");
  }
  if (family == WeightFamily::musc_p) {
    require(static_cast<int>(propensities.size()) == n_units,
            "musc-p propensity vector length must equal the number of units");
    double total = 0.0;
    double max_p = 0.0;
    for (double p : propensities) {
      require(p >= 0.0 && p <= 1.0, "propensities must lie in [0, 1]");
      total += p;
      max_p = std::max(max_p, p);
    }
    require(std::abs(total - 1.0) <= 1e-9, "propensities must sum to 1");
    // The weighted column identity needs sum_{i != j} p_i |w_ij| = p_j with every
    // |w_ij| <= 1, which is achievable exactly when no propensity exceeds 1/2.
    require(max_p <= 0.5 + 1e-12,
            "musc-p is infeasible when any propensity exceeds 1/2 (got " +
                std::to_string(max_p) + ")");
  } else {
    require(propensities.empty(), "propensities are only valid for musc-p");
  }
}

bool WeightTensor::covers(int period) const {
  return std::find(covered.begin(), covered.end(), period) != covered.end();
}

int WeightTensor::slice_of(int period) const {
  for (std::size_t k = 0; k < covered.size(); ++k)
    if (covered[k] == period) return static_cast<int>(k);
  throw validation_error("weight tensor has no slice for period index " + std::to_string(period));
}

WeightTensor closed_form_weights(const Panel& panel, WeightFamily family,
                                 const PeriodScope& scope) {
  require(is_pinned_family(family), "closed forms exist only for dim and did");
  return solve_weights(panel, WeightSetSpec{family, {}}, scope);
}

WeightTensor solve_weights(const Panel& panel, const WeightSetSpec& spec,
                           const PeriodScope& scope, const SolveControls& controls) {
  panel.validate();
  spec.validate(panel.n_units());
  const int n = panel.n_units();
  const auto periods = scope_periods(panel, scope);

  WeightTensor tensor;
  tensor.family = spec.family;
  tensor.propensities = spec.propensities;
  tensor.units = panel.units;
  tensor.periods = panel.periods;
  tensor.covered = periods;
  tensor.intercepts.resize(periods.size());
  tensor.w.resize(periods.size());

  const int n_slices = static_cast<int>(periods.size());
  std::vector<double> slice_kkt(periods.size(), 0.0);

  if (is_pinned_family(spec.family)) {
    for (int k = 0; k < n_slices; ++k)
      fill_pinned_slice(panel, spec, periods[static_cast<std::size_t>(k)],
                        tensor.intercepts[static_cast<std::size_t>(k)],
                        tensor.w[static_cast<std::size_t>(k)]);
  } else if (is_separable_family(spec.family)) {
    const bool has_intercept = spec.has_intercept();
    for (int k = 0; k < n_slices; ++k) {
      auto& w = tensor.w[static_cast<std::size_t>(k)];
      auto& a = tensor.intercepts[static_cast<std::size_t>(k)];
      w = Eigen::MatrixXd::Zero(n, n);
      w.diagonal().setOnes();
      a = Eigen::VectorXd::Zero(n);
    }
    std::vector<double> task_kkt(static_cast<std::size_t>(n_slices * n), 0.0);
    parallel_for(n_slices * n, controls.workers, [&](int task) {
      const int k = task / n;
      const int i = task % n;
      const int t = periods[static_cast<std::size_t>(k)];
      QpProblem problem;
      std::vector<int> control_ids;
      row_problem(panel, has_intercept, i, t, controls.ridge, problem, control_ids);
      QpOptions qp_options;
      qp_options.max_iterations = controls.max_iterations;
      qp_options.tol_kkt = controls.tol_kkt;
      const QpSolution solution = solve_qp(problem, qp_options);
      auto& w = tensor.w[static_cast<std::size_t>(k)];
      auto& a = tensor.intercepts[static_cast<std::size_t>(k)];
      if (has_intercept) a[i] = solution.x[0];
      for (std::size_t c = 0; c < control_ids.size(); ++c)
        w(i, control_ids[c]) = solution.x[(has_intercept ? 1 : 0) + static_cast<int>(c)];
      // Residual of the unridged problem at the ridged optimum; the gap is O(ridge).
      QpProblem plain;
      std::vector<int> unused;
      row_problem(panel, has_intercept, i, t, 0.0, plain, unused);
      task_kkt[static_cast<std::size_t>(task)] =
          qp_kkt_residual(plain, solution.x, solution.eq_duals, solution.bound_duals);
    });
    for (int k = 0; k < n_slices; ++k) {
      double worst = 0.0;
      for (int i = 0; i < n; ++i)
        worst = std::max(worst, task_kkt[static_cast<std::size_t>(k * n + i)]);
      slice_kkt[static_cast<std::size_t>(k)] = worst;
    }
  } else {
    const JointLayout layout{n, spec.has_intercept()};
    parallel_for(n_slices, controls.workers, [&](int k) {
      const int t = periods[static_cast<std::size_t>(k)];
      QpProblem problem = detail::joint_skeleton(layout, column_kind(spec.family),
                                                 spec.propensities);
      Eigen::MatrixXd g;
      Eigen::VectorXd h;
      joint_data(panel, spec, layout, t, g, h);
      detail::add_least_squares(problem, g, h, controls.ridge);
      QpOptions qp_options;
      qp_options.max_iterations = controls.max_iterations;
      qp_options.tol_kkt = controls.tol_kkt;
      const QpSolution solution = solve_qp(problem, qp_options);

      auto& w = tensor.w[static_cast<std::size_t>(k)];
      auto& a = tensor.intercepts[static_cast<std::size_t>(k)];
      w = Eigen::MatrixXd::Zero(n, n);
      w.diagonal().setOnes();
      a = Eigen::VectorXd::Zero(n);
      for (int i = 0; i < n; ++i) {
        if (layout.has_intercept) a[i] = solution.x[layout.intercept_index(i)];
        for (int j = 0; j < n; ++j)
          if (j != i) w(i, j) = solution.x[layout.weight_index(i, j)];
      }
      QpProblem plain = detail::joint_skeleton(layout, column_kind(spec.family),
                                               spec.propensities);
      detail::add_least_squares(plain, g, h, 0.0);
      slice_kkt[static_cast<std::size_t>(k)] =
          qp_kkt_residual(plain, solution.x, solution.eq_duals, solution.bound_duals);
    });
  }

  if (is_pinned_family(spec.family)) {
    for (int k = 0; k < n_slices; ++k)
      slice_kkt[static_cast<std::size_t>(k)] =
          pinned_family_residual(panel, tensor, spec, periods[static_cast<std::size_t>(k)]);
  }

  tensor.objective = objective_value(panel, tensor);
  tensor.kkt = slice_kkt.empty() ? 0.0 : *std::max_element(slice_kkt.begin(), slice_kkt.end());
  return tensor;
}

double objective_value(const Panel& panel, const WeightTensor& tensor, int period) {
  panel.validate();
  const int n = panel.n_units();
  require(tensor.n_units() == n, "tensor and panel disagree on the number of units");
  const std::size_t k = static_cast<std::size_t>(tensor.slice_of(period));
  const auto& w = tensor.w[k];
  const auto& a = tensor.intercepts[k];
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    const double block =
        tensor.family == WeightFamily::musc_p
            ? tensor.propensities[static_cast<std::size_t>(i)]
            : 1.0;
    for (int s = 0; s < panel.n_periods(); ++s) {
      if (s == period) continue;
      double fitted = a[i];
      for (int j = 0; j < n; ++j) fitted += w(i, j) * panel.y(j, s);
      total += block * fitted * fitted;
    }
  }
  return total;
}

double objective_value(const Panel& panel, const WeightTensor& tensor) {
  double total = 0.0;
  for (int t : tensor.covered) total += objective_value(panel, tensor, t);
  return total;
}

double kkt_residual(const Panel& panel, const WeightTensor& tensor, const WeightSetSpec& spec,
                    int period) {
  panel.validate();
  spec.validate(panel.n_units());
  const int n = panel.n_units();
  require(tensor.n_units() == n, "tensor and panel disagree on the number of units");
  const int slice = tensor.slice_of(period);

  if (is_pinned_family(spec.family)) return pinned_family_residual(panel, tensor, spec, period);

  if (is_separable_family(spec.family)) {
    const bool has_intercept = spec.has_intercept();
    double worst = 0.0;
    for (int i = 0; i < n; ++i) {
      QpProblem problem;
      std::vector<int> control_ids;
      row_problem(panel, has_intercept, i, period, 0.0, problem, control_ids);
      Eigen::VectorXd x(problem.P.rows());
      if (has_intercept) x[0] = tensor.intercepts[static_cast<std::size_t>(slice)][i];
      for (std::size_t c = 0; c < control_ids.size(); ++c)
        x[(has_intercept ? 1 : 0) + static_cast<Eigen::Index>(c)] =
            tensor.w[static_cast<std::size_t>(slice)](i, control_ids[c]);
      worst = std::max(worst, qp_point_residual(problem, x));
    }
    return worst;
  }

  const JointLayout layout{n, spec.has_intercept()};
  QpProblem problem = detail::joint_skeleton(layout, column_kind(spec.family), spec.propensities);
  Eigen::MatrixXd g;
  Eigen::VectorXd h;
  joint_data(panel, spec, layout, period, g, h);
  detail::add_least_squares(problem, g, h, 0.0);
  Eigen::VectorXd x(layout.n_vars());
  for (int i = 0; i < n; ++i) {
    if (layout.has_intercept)
      x[layout.intercept_index(i)] = tensor.intercepts[static_cast<std::size_t>(slice)][i];
    for (int j = 0; j < n; ++j)
      if (j != i)
        x[layout.weight_index(i, j)] = tensor.w[static_cast<std::size_t>(slice)](i, j);
  }
  return qp_point_residual(problem, x);
}

double kkt_residual(const Panel& panel, const WeightTensor& tensor, const WeightSetSpec& spec) {
  double worst = 0.0;
  for (int t : tensor.covered) worst = std::max(worst, kkt_residual(panel, tensor, spec, t));
  return worst;
}

MembershipReport check_membership(const WeightTensor& tensor, const WeightSetSpec& spec,
                                  int period, double tol) {
  const int n = tensor.n_units();
  spec.validate(n);
  const int slice = tensor.slice_of(period);
  const auto& w = tensor.w[static_cast<std::size_t>(slice)];
  const auto& a = tensor.intercepts[static_cast<std::size_t>(slice)];

  MembershipReport report;
  double base = 0.0;
  for (int i = 0; i < n; ++i) {
    base = std::max(base, std::abs(w(i, i) - 1.0));
    double row_sum = 0.0;
    for (int j = 0; j < n; ++j) {
      row_sum += w(i, j);
      if (j != i) base = std::max(base, std::max(w(i, j), 0.0));
    }
    base = std::max(base, std::abs(row_sum));
  }
  report.in_base_set = base <= tol;

  double fam = 0.0;
  const bool zero_intercept = spec.family == WeightFamily::dim ||
                              spec.family == WeightFamily::sc ||
                              spec.family == WeightFamily::usc;
  if (zero_intercept)
    for (int i = 0; i < n; ++i) fam = std::max(fam, std::abs(a[i]));
  if (is_pinned_family(spec.family)) {
    const double off = -1.0 / static_cast<double>(n - 1);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if (j != i) fam = std::max(fam, std::abs(w(i, j) - off));
  }
  if (spec.family == WeightFamily::usc || spec.family == WeightFamily::musc) {
    for (int j = 0; j < n; ++j) {
      double col = 0.0;
      for (int i = 0; i < n; ++i) col += w(i, j);
      fam = std::max(fam, std::abs(col));
    }
  }
  if (spec.family == WeightFamily::musc_p) {
    for (int j = 0; j < n; ++j) {
      double col = 0.0;
      for (int i = 0; i < n; ++i)
        col += spec.propensities[static_cast<std::size_t>(i)] * w(i, j);
      fam = std::max(fam, std::abs(col));
    }
  }
  report.family_ok = fam <= tol;
  report.max_violation = std::max(base, fam);
  return report;
}

std::string weights_to_json(const WeightTensor& tensor) {
  nlohmann::ordered_json j;
  j["family"] = family_name(tensor.family);
  if (!tensor.propensities.empty()) j["propensities"] = tensor.propensities;
  j["units"] = tensor.units;
  auto covered = nlohmann::ordered_json::array();
  for (int t : tensor.covered) covered.push_back(tensor.periods[static_cast<std::size_t>(t)]);
  j["covered_periods"] = std::move(covered);
  auto slices = nlohmann::ordered_json::array();
  for (std::size_t k = 0; k < tensor.covered.size(); ++k) {
    nlohmann::ordered_json slice;
    slice["period"] = tensor.periods[static_cast<std::size_t>(tensor.covered[k])];
    auto intercept = nlohmann::ordered_json::array();
    for (Eigen::Index i = 0; i < tensor.intercepts[k].size(); ++i)
      intercept.push_back(tensor.intercepts[k][i]);
    slice["intercept"] = std::move(intercept);
    auto rows = nlohmann::ordered_json::array();
    for (Eigen::Index i = 0; i < tensor.w[k].rows(); ++i) {
      auto row = nlohmann::ordered_json::array();
      for (Eigen::Index c = 0; c < tensor.w[k].cols(); ++c) row.push_back(tensor.w[k](i, c));
      rows.push_back(std::move(row));
    }
    slice["w"] = std::move(rows);
    slices.push_back(std::move(slice));
  }
  j["slices"] = std::move(slices);
  j["objective"] = tensor.objective;
  j["kkt_residual"] = tensor.kkt;
  return j.dump(2);
}

std::string weights_slice_to_csv(const WeightTensor& tensor, int period) {
  const std::size_t k = static_cast<std::size_t>(tensor.slice_of(period));
  const int n = tensor.n_units();
  std::string out = "unit,intercept";
  for (const auto& u : tensor.units) out += "," + u;
  out += "\n";
  char buf[64];
  for (int i = 0; i < n; ++i) {
    out += tensor.units[static_cast<std::size_t>(i)];
    std::snprintf(buf, sizeof(buf), ",%.17g", tensor.intercepts[k][i]);
    out += buf;
    for (int j = 0; j < n; ++j) {
      std::snprintf(buf, sizeof(buf), ",%.17g", tensor.w[k](i, j));
      out += buf;
    }
    out += "\n";
  }
  return out;
}

}  // namespace dbsc
