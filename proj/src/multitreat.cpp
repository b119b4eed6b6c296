#include "dbsc/multitreat.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <nlohmann/json.hpp>

#include "dbsc/errors.hpp"
#include "dbsc/parallel.hpp"
#include "dbsc/qp.hpp"

namespace dbsc {

namespace {

// Variable block per subset: intercept, then the subset's control weights in
// ascending unit order.
struct MultiLayout {
  int k_count = 0;
  int n_controls = 0;

  int block(int k) const { return k * (1 + n_controls); }
  int intercept_index(int k) const { return block(k); }
  int weight_index(int k, int c) const { return block(k) + 1 + c; }
  int n_vars() const { return k_count * (1 + n_controls); }
};

// Control units of subset k in ascending order, with their positions.
std::vector<int> control_units(const SubsetIndex& index, int k) {
  std::vector<int> controls;
  controls.reserve(static_cast<std::size_t>(index.n - index.n_treated));
  for (int j = 0; j < index.n; ++j)
    if (!index.contains_unit(k, j)) controls.push_back(j);
  return controls;
}

QpProblem multi_skeleton(const SubsetIndex& index, const MultiLayout& layout) {
  const int k_count = index.size();
  const int n = index.n;
  QpProblem problem;
  problem.P = Eigen::MatrixXd::Zero(layout.n_vars(), layout.n_vars());
  problem.q = Eigen::VectorXd::Zero(layout.n_vars());
  problem.E = Eigen::MatrixXd::Zero(k_count + n, layout.n_vars());
  problem.e = Eigen::VectorXd::Zero(k_count + n);

  for (int k = 0; k < k_count; ++k) {
    const auto controls = control_units(index, k);
    for (std::size_t c = 0; c < controls.size(); ++c) {
      const int var = layout.weight_index(k, static_cast<int>(c));
      problem.E(k, var) = 1.0;
      problem.nonpositive.push_back(var);
      problem.E(k_count + controls[c], var) = 1.0;
    }
    problem.e[k] = -1.0;
  }

  // Each unit belongs to C(n-1, n_t-1) subsets, contributing 1/n_t apiece, so
  // its control weights across the remaining subsets must absorb that mass.
  const double member_mass =
      static_cast<double>(binomial(n - 1, index.n_treated - 1)) /
      static_cast<double>(index.n_treated);
  for (int j = 0; j < n; ++j) problem.e[k_count + j] = -member_mass;
  return problem;
}

void multi_data(const Panel& panel, const SubsetIndex& index, const MultiLayout& layout,
                int period, Eigen::MatrixXd& g, Eigen::VectorXd& h) {
  const int k_count = index.size();
  const int t_count = panel.n_periods();
  g = Eigen::MatrixXd::Zero(k_count * (t_count - 1), layout.n_vars());
  h = Eigen::VectorXd::Zero(k_count * (t_count - 1));
  int row = 0;
  for (int k = 0; k < k_count; ++k) {
    const auto controls = control_units(index, k);
    for (int s = 0; s < t_count; ++s) {
      if (s == period) continue;
      g(row, layout.intercept_index(k)) = 1.0;
      for (std::size_t c = 0; c < controls.size(); ++c)
        g(row, layout.weight_index(k, static_cast<int>(c))) = panel.y(controls[c], s);
      double member_mean = 0.0;
      for (int j : index.subsets[static_cast<std::size_t>(k)]) member_mean += panel.y(j, s);
      h[row] = -member_mean / static_cast<double>(index.n_treated);
      ++row;
    }
  }
}

void add_ls(QpProblem& problem, const Eigen::MatrixXd& g, const Eigen::VectorXd& h,
            double ridge) {
  problem.P += 2.0 * (g.transpose() * g);
  problem.P += (2.0 * ridge) * Eigen::MatrixXd::Identity(problem.P.rows(), problem.P.cols());
  problem.q += -2.0 * (g.transpose() * h);
}

double slice_objective(const Panel& panel, const MultiWeightTensor& mt, int period) {
  const std::size_t slice = static_cast<std::size_t>(mt.slice_of(period));
  double total = 0.0;
  for (int k = 0; k < mt.index.size(); ++k) {
    for (int s = 0; s < panel.n_periods(); ++s) {
      if (s == period) continue;
      double fitted = mt.intercepts[slice][k];
      for (int j = 0; j < panel.n_units(); ++j) fitted += mt.w[slice](k, j) * panel.y(j, s);
      total += fitted * fitted;
    }
  }
  return total;
}

}  // namespace

std::uint64_t binomial(int n, int k) {
  require(n >= 0 && k >= 0 && k <= n, "binomial coefficient needs 0 <= k <= n");
  k = std::min(k, n - k);
  std::uint64_t result = 1;
  for (int step = 1; step <= k; ++step) {
    const std::uint64_t numer = static_cast<std::uint64_t>(n - k + step);
    require(result <= std::numeric_limits<std::uint64_t>::max() / numer,
            "binomial coefficient overflows 64 bits");
    result = result * numer / static_cast<std::uint64_t>(step);
  }
  return result;
}

int SubsetIndex::find(const std::vector<int>& sorted_units) const {
  const auto it = std::lower_bound(subsets.begin(), subsets.end(), sorted_units);
  if (it == subsets.end() || *it != sorted_units) return -1;
  return static_cast<int>(it - subsets.begin());
}

bool SubsetIndex::contains_unit(int k, int unit) const {
  const auto& subset = subsets[static_cast<std::size_t>(k)];
  return std::binary_search(subset.begin(), subset.end(), unit);
}

SubsetIndex enumerate_subsets(int n, int n_treated, int max_subsets) {
  require(n >= 2, "subset enumeration needs at least 2 units");
  require(n_treated >= 1 && n_treated <= n - 1,
          "the treated count must lie between 1 and N-1");
  require(max_subsets >= 1, "the subset limit must be positive");
  const std::uint64_t k_count = binomial(n, n_treated);
  require(k_count <= static_cast<std::uint64_t>(max_subsets),
          "C(" + std::to_string(n) + ", " + std::to_string(n_treated) + ") = " +
              std::to_string(k_count) + " subsets exceed the limit of " +
              std::to_string(max_subsets));

  SubsetIndex index;
  index.n = n;
  index.n_treated = n_treated;
  index.subsets.reserve(static_cast<std::size_t>(k_count));
  std::vector<int> current(static_cast<std::size_t>(n_treated));
  for (int i = 0; i < n_treated; ++i) current[static_cast<std::size_t>(i)] = i;
  while (true) {
    index.subsets.push_back(current);
    int pos = n_treated - 1;
    while (pos >= 0 && current[static_cast<std::size_t>(pos)] == n - n_treated + pos) --pos;
    if (pos < 0) break;
    ++current[static_cast<std::size_t>(pos)];
    for (int i = pos + 1; i < n_treated; ++i)
      current[static_cast<std::size_t>(i)] = current[static_cast<std::size_t>(i - 1)] + 1;
  }
  return index;
}

bool MultiWeightTensor::covers(int period) const {
  return std::find(covered.begin(), covered.end(), period) != covered.end();
}

int MultiWeightTensor::slice_of(int period) const {
  for (std::size_t k = 0; k < covered.size(); ++k)
    if (covered[k] == period) return static_cast<int>(k);
  throw validation_error("multi-weight tensor has no slice for period index " +
                         std::to_string(period));
}

MultiWeightTensor solve_multi_weights(const Panel& panel, int n_treated,
                                      const PeriodScope& scope,
                                      const SolveControls& controls, int max_subsets) {
  panel.validate();
  const int n = panel.n_units();
  require(n - n_treated >= 2, "need at least 2 control units");
  const SubsetIndex index = enumerate_subsets(n, n_treated, max_subsets);
  const MultiLayout layout{index.size(), n - n_treated};

  std::vector<int> periods;
  if (scope.full) {
    periods.resize(static_cast<std::size_t>(panel.n_periods()));
    for (int t = 0; t < panel.n_periods(); ++t) periods[static_cast<std::size_t>(t)] = t;
  } else {
    require(scope.period >= 0 && scope.period < panel.n_periods(),
            "treated period index out of range");
    periods = {scope.period};
  }

  MultiWeightTensor mt;
  mt.index = index;
  mt.units = panel.units;
  mt.periods = panel.periods;
  mt.covered = periods;
  mt.intercepts.resize(periods.size());
  mt.w.resize(periods.size());
  std::vector<double> slice_kkt(periods.size(), 0.0);

  parallel_for(static_cast<int>(periods.size()), controls.workers, [&](int slice) {
    const int t = periods[static_cast<std::size_t>(slice)];
    QpProblem problem = multi_skeleton(index, layout);
    Eigen::MatrixXd g;
    Eigen::VectorXd h;
    multi_data(panel, index, layout, t, g, h);
    add_ls(problem, g, h, controls.ridge);
    QpOptions qp_options;
    qp_options.max_iterations = controls.max_iterations;
    qp_options.tol_kkt = controls.tol_kkt;
    const QpSolution solution = solve_qp(problem, qp_options);

    auto& w = mt.w[static_cast<std::size_t>(slice)];
    auto& intercept = mt.intercepts[static_cast<std::size_t>(slice)];
    w = Eigen::MatrixXd::Zero(index.size(), n);
    intercept = Eigen::VectorXd::Zero(index.size());
    const double member_weight = 1.0 / static_cast<double>(n_treated);
    for (int k = 0; k < index.size(); ++k) {
      intercept[k] = solution.x[layout.intercept_index(k)];
      for (int j : index.subsets[static_cast<std::size_t>(k)]) w(k, j) = member_weight;
      const auto controls_k = control_units(index, k);
      for (std::size_t c = 0; c < controls_k.size(); ++c)
        w(k, controls_k[c]) = solution.x[layout.weight_index(k, static_cast<int>(c))];
    }

    QpProblem plain = multi_skeleton(index, layout);
    add_ls(plain, g, h, 0.0);
    slice_kkt[static_cast<std::size_t>(slice)] =
        qp_kkt_residual(plain, solution.x, solution.eq_duals, solution.bound_duals);
  });

  mt.objective = 0.0;
  for (int t : mt.covered) mt.objective += slice_objective(panel, mt, t);
  mt.kkt = *std::max_element(slice_kkt.begin(), slice_kkt.end());
  return mt;
}

Estimate multi_gsc_estimate(const Panel& panel, const MultiWeightTensor& mt,
                            const std::vector<int>& treated_units, int period) {
  panel.validate();
  require(mt.n_units() == panel.n_units(), "tensor and panel disagree on the number of units");
  require(mt.covers(period), "multi-weight tensor does not cover the treated period");
  std::vector<int> sorted = treated_units;
  std::sort(sorted.begin(), sorted.end());
  const int k = mt.index.find(sorted);
  require(k >= 0, "treated subset is not a valid size-" +
                      std::to_string(mt.index.n_treated) + " subset of the units");

  const std::size_t slice = static_cast<std::size_t>(mt.slice_of(period));
  double value = mt.intercepts[slice][k];
  for (int j = 0; j < panel.n_units(); ++j) value += mt.w[slice](k, j) * panel.y(j, period);

  Estimate out;
  out.value = value;
  out.assignment = Assignment{sorted.front(), period};
  out.family = WeightFamily::musc;
  out.target = EstimandTarget::cell;
  out.counterfactual = 0.0;
  for (int j : sorted) out.counterfactual += panel.y(j, period);
  out.counterfactual = out.counterfactual / static_cast<double>(sorted.size()) - value;
  return out;
}

double multi_exact_variance(const Eigen::MatrixXd& y0, const MultiWeightTensor& mt,
                            int period) {
  const int n = mt.n_units();
  require(y0.rows() == n, "outcome matrix rows must match the tensor's units");
  require(period >= 0 && period < y0.cols(), "treated period index out of range");
  const std::size_t slice = static_cast<std::size_t>(mt.slice_of(period));
  double total = 0.0;
  for (int k = 0; k < mt.index.size(); ++k) {
    double err = mt.intercepts[slice][k];
    for (int j = 0; j < n; ++j) err += mt.w[slice](k, j) * y0(j, period);
    total += err * err;
  }
  return total / static_cast<double>(mt.index.size());
}

double multi_unbiased_variance_estimate(const Panel& panel, const MultiWeightTensor& mt,
                                        const std::vector<int>& treated_units, int period,
                                        bool leave_fold_out) {
  panel.validate();
  const int n = panel.n_units();
  const int n_treated = mt.index.n_treated;
  const int n_controls = n - n_treated;
  require(mt.n_units() == n, "tensor and panel disagree on the number of units");
  require(n_controls >= n_treated + 2,
          "the variance estimate needs N_C >= N_T + 2 (binomial C(N_C-2, N_T))");

  std::vector<int> sorted = treated_units;
  std::sort(sorted.begin(), sorted.end());
  const int k = mt.index.find(sorted);
  require(k >= 0, "treated subset is not in the index");

  const std::size_t slice = static_cast<std::size_t>(mt.slice_of(period));
  const auto& w = mt.w[slice];
  const auto& m0 = mt.intercepts[slice];
  std::vector<bool> treated(static_cast<std::size_t>(n), false);
  for (int j : sorted) treated[static_cast<std::size_t>(j)] = true;

  const double denom_sq = static_cast<double>(binomial(n_controls - 2, n_treated));
  const double denom_diag = static_cast<double>(n_controls - 1) * denom_sq;
  const double denom_cross = static_cast<double>(binomial(n_controls - 1, n_treated));
  const double k_count = static_cast<double>(mt.index.size());

  double value = 0.0;
  double disjoint_intercepts = 0.0;
  std::uint64_t n_disjoint = 0;
  for (int kp = 0; kp < mt.index.size(); ++kp) {
    bool disjoint = true;
    for (int j : mt.index.subsets[static_cast<std::size_t>(kp)])
      if (treated[static_cast<std::size_t>(j)]) { disjoint = false; break; }
    if (!disjoint) continue;
    ++n_disjoint;
    disjoint_intercepts += m0[kp] * m0[kp];

    double subset_mean = 0.0;
    for (int j : mt.index.subsets[static_cast<std::size_t>(kp)]) subset_mean += panel.y(j, period);
    subset_mean /= static_cast<double>(n_treated);

    // Contrasts run over units outside both the realized treated set and the
    // subset k' itself; member terms are zero by construction.
    double contrast = 0.0;
    double diagonal = 0.0;
    for (int j = 0; j < n; ++j) {
      if (treated[static_cast<std::size_t>(j)] || mt.index.contains_unit(kp, j)) continue;
      const double gap = panel.y(j, period) - subset_mean;
      contrast += w(kp, j) * gap;
      diagonal += w(kp, j) * w(kp, j) * gap * gap;
    }
    value += contrast * contrast / denom_sq;
    value -= static_cast<double>(n_treated) * diagonal / denom_diag;
    value += 2.0 * m0[kp] * contrast / denom_cross;
  }

  if (leave_fold_out) {
    value += disjoint_intercepts / static_cast<double>(n_disjoint);
  } else {
    value += m0.squaredNorm() / k_count;
  }
  return value;
}

std::string multi_weights_to_json(const MultiWeightTensor& mt) {
  nlohmann::ordered_json j;
  j["n_treated"] = mt.index.n_treated;
  j["units"] = mt.units;
  auto subsets = nlohmann::ordered_json::array();
  for (const auto& subset : mt.index.subsets) {
    auto labels = nlohmann::ordered_json::array();
    for (int u : subset) labels.push_back(mt.units[static_cast<std::size_t>(u)]);
    subsets.push_back(std::move(labels));
  }
  j["subsets"] = std::move(subsets);
  auto covered = nlohmann::ordered_json::array();
  for (int t : mt.covered) covered.push_back(mt.periods[static_cast<std::size_t>(t)]);
  j["covered_periods"] = std::move(covered);
  auto slices = nlohmann::ordered_json::array();
  for (std::size_t s = 0; s < mt.covered.size(); ++s) {
    nlohmann::ordered_json slice;
    slice["period"] = mt.periods[static_cast<std::size_t>(mt.covered[s])];
    auto intercept = nlohmann::ordered_json::array();
    for (Eigen::Index k = 0; k < mt.intercepts[s].size(); ++k)
      intercept.push_back(mt.intercepts[s][k]);
    slice["intercept"] = std::move(intercept);
    auto rows = nlohmann::ordered_json::array();
    for (Eigen::Index k = 0; k < mt.w[s].rows(); ++k) {
      auto row = nlohmann::ordered_json::array();
      for (Eigen::Index c = 0; c < mt.w[s].cols(); ++c) row.push_back(mt.w[s](k, c));
      rows.push_back(std::move(row));
    }
    slice["w"] = std::move(rows);
    slices.push_back(std::move(slice));
  }
  j["slices"] = std::move(slices);
  j["objective"] = mt.objective;
  j["kkt_residual"] = mt.kkt;
  return j.dump(2);
}

}  // namespace dbsc
