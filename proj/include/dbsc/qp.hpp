#pragma once

#include <Eigen/Dense>
#include <optional>
#include <vector>

namespace dbsc {

// Convex quadratic program
//   minimize   0.5 x'Px + q'x
//   subject to E x = e,   x_j <= 0 for j in `nonpositive`.
// P must be symmetric positive definite (callers add a small ridge when the
// least-squares Hessian is only semidefinite). E may contain redundant rows.
struct QpProblem {
  Eigen::MatrixXd P;
  Eigen::VectorXd q;
  Eigen::MatrixXd E;
  Eigen::VectorXd e;
  std::vector<int> nonpositive;
};

struct QpWarmStart {
  Eigen::VectorXd x;
  Eigen::VectorXd z;
  Eigen::VectorXd y;
};

struct QpOptions {
  int max_iterations = 100000;
  // Accept an iterate/polish certificate once its KKT residual is below this.
  double tol_kkt = 1e-8;
  // Operator-splitting parameters.
  double sigma = 1e-6;
  double rho_bound = 0.1;
  double rho_equality = 100.0;
  double relaxation = 1.6;
  std::optional<QpWarmStart> warm;
};

struct QpSolution {
  Eigen::VectorXd x;
  Eigen::VectorXd eq_duals;      // one per row of E
  Eigen::VectorXd bound_duals;   // one per entry of `nonpositive`, >= 0
  double kkt_residual = 0.0;
  int iterations = 0;
  bool polished = false;
  // Internal ADMM state for warm-starting a neighboring problem.
  Eigen::VectorXd z_state;
  Eigen::VectorXd y_state;
};

// Splitting iteration with periodic active-set polishing. The returned point carries
// an explicitly verified KKT certificate; throws solver_error if none is found
// within max_iterations.
QpSolution solve_qp(const QpProblem& problem, const QpOptions& options = {});

// Max violation of stationarity, feasibility, dual sign and complementarity at (x, duals).
double qp_kkt_residual(const QpProblem& problem, const Eigen::VectorXd& x,
                       const Eigen::VectorXd& eq_duals, const Eigen::VectorXd& bound_duals);

// Residual for a bare point: multipliers are estimated by least squares over the
// constraints active at x, with bound duals clamped to be nonnegative.
double qp_point_residual(const QpProblem& problem, const Eigen::VectorXd& x);

}  // namespace dbsc
