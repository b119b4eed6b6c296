#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dbsc/estimate.hpp"
#include "dbsc/panel.hpp"
#include "dbsc/weights.hpp"

namespace dbsc {

inline constexpr int kMaxSubsets = 5000;

// Exact binomial coefficient; throws on overflow past 64 bits.
std::uint64_t binomial(int n, int k);

// All size-n_treated subsets of {0..n-1} in lexicographic order.
struct SubsetIndex {
  int n = 0;
  int n_treated = 0;
  std::vector<std::vector<int>> subsets;

  int size() const { return static_cast<int>(subsets.size()); }
  // Position of a sorted unit list, or -1.
  int find(const std::vector<int>& sorted_units) const;
  bool contains_unit(int k, int unit) const;
};

SubsetIndex enumerate_subsets(int n, int n_treated, int max_subsets = kMaxSubsets);

// Weights indexed by treated subset: row k applies when subset k is treated.
// Members carry 1/N_T each; control entries are nonpositive, sum to -1 per row,
// and balance across subsets column by column.
struct MultiWeightTensor {
  SubsetIndex index;
  std::vector<std::string> units;
  std::vector<std::string> periods;
  std::vector<int> covered;
  std::vector<Eigen::VectorXd> intercepts;  // K per slice
  std::vector<Eigen::MatrixXd> w;           // K x N per slice
  double objective = 0.0;
  double kkt = 0.0;

  int n_units() const { return static_cast<int>(units.size()); }
  bool covers(int period) const;
  int slice_of(int period) const;
};

MultiWeightTensor solve_multi_weights(const Panel& panel, int n_treated,
                                      const PeriodScope& scope,
                                      const SolveControls& controls = {},
                                      int max_subsets = kMaxSubsets);

// Average effect over the treated subset, read off the subset's contrast row.
Estimate multi_gsc_estimate(const Panel& panel, const MultiWeightTensor& mt,
                            const std::vector<int>& treated_units, int period);

// Randomization variance over the uniform subset draw, on the untreated schedule.
double multi_exact_variance(const Eigen::MatrixXd& y0, const MultiWeightTensor& mt, int period);

// Unbiased estimate of the randomization variance from the observed panel: sums
// the contrast corrections over subsets disjoint from the realized treated set.
// The leave_fold_out variant averages squared intercepts over the disjoint
// subsets only instead of over all subsets.
double multi_unbiased_variance_estimate(const Panel& panel, const MultiWeightTensor& mt,
                                        const std::vector<int>& treated_units, int period,
                                        bool leave_fold_out = false);

std::string multi_weights_to_json(const MultiWeightTensor& mt);

}  // namespace dbsc
