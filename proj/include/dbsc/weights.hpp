#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "dbsc/panel.hpp"

namespace dbsc {

// Weight families, ordered from fully pinned to fully free:
//   dim     zero intercept, every control weighted equally
//   did     free intercept, every control weighted equally
//   sc      zero intercept, convex control weights per treated unit
//   msc     free intercept, convex control weights
//   usc     zero intercept, convex weights plus column adding-up (each unit's
//           use as a control sums to one across treated units)
//   musc    free intercept plus column adding-up
//   musc_p  free intercept plus propensity-weighted column adding-up
enum class WeightFamily { dim, did, sc, msc, usc, musc, musc_p };

std::string family_name(WeightFamily family);
WeightFamily family_from_name(const std::string& name);

struct WeightSetSpec {
  WeightFamily family = WeightFamily::musc;
  std::vector<double> propensities;  // musc_p only: length N, sums to 1, max <= 1/2

  void validate(int n_units) const;
  bool has_intercept() const {
    return family == WeightFamily::did || family == WeightFamily::msc ||
           family == WeightFamily::musc || family == WeightFamily::musc_p;
  }
};

// Which periods get a fitted slice. Each covered period t is fit on all periods s != t.
struct PeriodScope {
  bool full = false;
  int period = -1;

  static PeriodScope single(int t) { return PeriodScope{false, t}; }
  static PeriodScope all() { return PeriodScope{true, -1}; }
};

inline constexpr double kDefaultRidge = 1e-10;
inline constexpr double kTolKkt = 1e-8;
inline constexpr double kTolFeas = 1e-9;
inline constexpr int kMaxIterations = 100000;

struct SolveControls {
  double ridge = kDefaultRidge;
  double tol_kkt = kTolKkt;
  int max_iterations = kMaxIterations;
  int workers = 0;  // 0 = DBSC_WORKERS env or hardware count
};

// Fitted weights for the covered periods. Slice t holds an N-vector of intercepts and
// an N x N matrix with unit diagonal and nonpositive off-diagonal entries; row i is
// the contrast applied when unit i is treated in period t.
struct WeightTensor {
  WeightFamily family = WeightFamily::musc;
  std::vector<double> propensities;
  std::vector<std::string> units;
  std::vector<std::string> periods;
  std::vector<int> covered;
  std::vector<Eigen::VectorXd> intercepts;
  std::vector<Eigen::MatrixXd> w;
  double objective = 0.0;
  double kkt = 0.0;

  int n_units() const { return static_cast<int>(units.size()); }
  bool covers(int period) const;
  int slice_of(int period) const;  // throws validation_error when not covered
  double intercept(int i, int period) const { return intercepts[slice_of(period)][i]; }
  double weight(int i, int j, int period) const { return w[slice_of(period)](i, j); }
};

// Fits the family's weights by constrained least squares on the non-treated periods.
WeightTensor solve_weights(const Panel& panel, const WeightSetSpec& spec,
                           const PeriodScope& scope, const SolveControls& controls = {});

// Exact solutions for the pinned families (no solver involved).
WeightTensor closed_form_weights(const Panel& panel, WeightFamily family,
                                 const PeriodScope& scope);

// Least-squares objective of the tensor over its covered slices (no ridge term).
double objective_value(const Panel& panel, const WeightTensor& tensor);

// Same, restricted to one covered slice.
double objective_value(const Panel& panel, const WeightTensor& tensor, int period);

// Max KKT violation of the slice as a solution of the family's fitting problem.
double kkt_residual(const Panel& panel, const WeightTensor& tensor, const WeightSetSpec& spec,
                    int period);

// Max KKT violation across every covered slice.
double kkt_residual(const Panel& panel, const WeightTensor& tensor, const WeightSetSpec& spec);

struct MembershipReport {
  bool in_base_set = false;   // unit diagonal, nonpositive off-diagonal, row sums zero
  bool family_ok = false;     // family-specific pins and column constraints
  double max_violation = 0.0;
};

MembershipReport check_membership(const WeightTensor& tensor, const WeightSetSpec& spec,
                                  int period, double tol = kTolFeas);

std::string weights_to_json(const WeightTensor& tensor);

// One covered slice as a CSV matrix: unit, intercept, then the weight row.
std::string weights_slice_to_csv(const WeightTensor& tensor, int period);

}  // namespace dbsc
