#pragma once

#include <Eigen/Dense>

#include "dbsc/panel.hpp"
#include "dbsc/weights.hpp"

namespace dbsc {

enum class EstimandTarget { cell, vertical, horizontal, population };

std::string estimand_name(EstimandTarget target);

// Treatment effect read off one treated cell through the fitted contrast row.
struct Estimate {
  double value = 0.0;
  Assignment assignment;
  WeightFamily family = WeightFamily::musc;
  EstimandTarget target = EstimandTarget::cell;
  double counterfactual = 0.0;  // implied untreated outcome at the treated cell
};

// Applies the treated unit's contrast row at the treated period:
// intercept + observed outcome + weighted control outcomes.
Estimate gsc_estimate(const Panel& panel, const WeightTensor& tensor, const Assignment& a);

// The four effect summaries computable when both outcome schedules are known.
struct Estimands {
  double cell = 0.0;        // effect at the treated cell
  double vertical = 0.0;    // unit-average effect at the treated period
  double horizontal = 0.0;  // period-average effect for the treated unit
  double population = 0.0;  // grand average effect
};

Estimands true_estimands(const PotentialPanel& pp, const Assignment& a);

// Bias of the estimator when the treated unit is uniform over all units at the
// given period, evaluated on the untreated schedule: the intercept average plus
// the column-sum-weighted average of untreated outcomes. Zero whenever the
// tensor's columns balance and its intercepts average out.
double exact_sc_bias(const Eigen::MatrixXd& y0, const WeightTensor& tensor, int period);

// Weights for estimating the unit-average effect at the treated period when the
// treated unit is already known: same constraint set as musc, but every fit drops
// the treated unit's outcomes and targets the cross-unit average instead.
WeightTensor vertical_weights_uncorrelated(const Panel& panel, const Assignment& a,
                                           const SolveControls& controls = {});

// The objective minimized above, evaluated for an arbitrary tensor slice.
double vertical_objective_value(const Panel& panel, const WeightTensor& tensor,
                                const Assignment& a);

std::string estimate_to_json(const Estimate& estimate, const WeightTensor& tensor);

}  // namespace dbsc
