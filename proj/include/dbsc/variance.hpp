#pragma once

#include <optional>
#include <string>

#include <Eigen/Dense>

#include "dbsc/panel.hpp"
#include "dbsc/weights.hpp"

namespace dbsc {

// Randomization variance of the estimator when the treated unit is uniform over
// all units at the given period, evaluated on the untreated outcome schedule.
double exact_variance(const Eigen::MatrixXd& y0, const WeightTensor& tensor, int period);

// Estimates the randomization variance from the observed panel alone. Unbiased
// over the uniform treated-unit draw for any fixed tensor; the value itself can
// be negative (never for dim). Needs at least 4 units.
double unbiased_variance_estimate(const Panel& panel, const WeightTensor& tensor,
                                  const Assignment& a, bool truncate_negative = false);

// Drops the treated unit, refits the family on the remaining units, and averages
// the squared pseudo-effects of the controls at the treated period. Biased in
// either direction depending on the outcome schedule.
double placebo_variance_estimate(const Panel& panel, const WeightSetSpec& spec,
                                 const Assignment& a, const SolveControls& controls = {});

double standard_error(double variance_estimate);

struct VarianceReport {
  WeightFamily family = WeightFamily::musc;
  int n_units = 0;
  int treated_period = 0;
  std::optional<double> exact;             // needs the untreated schedule
  std::optional<double> unbiased_estimate;
  bool negative_estimate = false;          // estimate fell below zero, reported as-is
  bool truncated = false;
  std::optional<double> placebo_estimate;
};

struct VarianceRequest {
  bool unbiased = true;
  bool placebo = false;
  bool truncate_negative = false;
  const Eigen::MatrixXd* y0 = nullptr;  // untreated schedule, when known
};

VarianceReport variance_report(const Panel& panel, const WeightTensor& tensor,
                               const WeightSetSpec& spec, const Assignment& a,
                               const VarianceRequest& request,
                               const SolveControls& controls = {});

std::string variance_report_to_json(const VarianceReport& report,
                                    const std::vector<std::string>& periods);

}  // namespace dbsc
