#pragma once

#include <Eigen/Dense>
#include <vector>

#include "dbsc/qp.hpp"

namespace dbsc::detail {

// Variable layout of the joint per-period problem: intercepts (optional) first,
// then off-diagonal weights row by row with the diagonal skipped.
struct JointLayout {
  int n_units = 0;
  bool has_intercept = false;

  int n_intercepts() const { return has_intercept ? n_units : 0; }
  int n_vars() const { return n_intercepts() + n_units * (n_units - 1); }
  int intercept_index(int i) const { return i; }
  int weight_index(int i, int j) const {
    return n_intercepts() + i * (n_units - 1) + (j < i ? j : j - 1);
  }
};

enum class ColumnConstraint { none, plain, propensity };

// Equality rows and sign bounds shared by every weight family: row adding-up for all
// units, plus the requested column adding-up variant. Objective terms left zero.
QpProblem joint_skeleton(const JointLayout& layout, ColumnConstraint columns,
                         const std::vector<double>& propensities);

// Adds 2 * (G'G + ridge I) and -2 G'h to problem.P / problem.q for stacked
// least-squares rows G x = h.
void add_least_squares(QpProblem& problem, const Eigen::MatrixXd& g, const Eigen::VectorXd& h,
                       double ridge);

}  // namespace dbsc::detail
