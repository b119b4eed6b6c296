#include "dbsc/qp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dbsc/errors.hpp"

namespace dbsc {

namespace {

struct Certificate {
  Eigen::VectorXd x;
  Eigen::VectorXd eq_duals;
  Eigen::VectorXd bound_duals;
  double residual = std::numeric_limits<double>::infinity();
};

double problem_scale(const QpProblem& p) {
  double s = 1.0;
  if (p.P.size() > 0) s = std::max(s, p.P.cwiseAbs().maxCoeff());
  if (p.q.size() > 0) s = std::max(s, p.q.cwiseAbs().maxCoeff());
  if (p.e.size() > 0) s = std::max(s, p.e.cwiseAbs().maxCoeff());
  return s;
}

// Solves the equality-constrained subproblem fixing the guessed active bounds at zero,
// then checks the full KKT conditions of the original program at that point.
bool try_polish(const QpProblem& p, const std::vector<char>& active, double accept_tol,
                Certificate& best) {
  const int n = static_cast<int>(p.P.rows());
  const int m_eq = static_cast<int>(p.E.rows());
  int m_act = 0;
  for (char a : active)
    if (a) ++m_act;

  const int m = m_eq + m_act;
  Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(n + m, n + m);
  kkt.topLeftCorner(n, n) = p.P;
  if (m_eq > 0) {
    kkt.block(n, 0, m_eq, n) = p.E;
    kkt.block(0, n, n, m_eq) = p.E.transpose();
  }
  int row = n + m_eq;
  for (std::size_t k = 0; k < p.nonpositive.size(); ++k) {
    if (!active[k]) continue;
    const int j = p.nonpositive[k];
    kkt(row, j) = 1.0;
    kkt(j, row) = 1.0;
    ++row;
  }

  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n + m);
  rhs.head(n) = -p.q;
  if (m_eq > 0) rhs.segment(n, m_eq) = p.e;

  // Complete orthogonal decomposition tolerates the redundant rows that show up when
  // adding-up constraints overlap with pinned variables.
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(kkt);
  Eigen::VectorXd sol = cod.solve(rhs);
  // One step of iterative refinement tightens the certificate.
  sol += cod.solve(rhs - kkt * sol);

  Eigen::VectorXd x = sol.head(n);
  Eigen::VectorXd eq_duals = m_eq > 0 ? sol.segment(n, m_eq).eval() : Eigen::VectorXd();
  Eigen::VectorXd bound_duals = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p.nonpositive.size()));
  row = m_eq;
  for (std::size_t k = 0; k < p.nonpositive.size(); ++k) {
    if (!active[k]) continue;
    bound_duals[static_cast<Eigen::Index>(k)] = sol[n + row];
    ++row;
  }

  const double residual = qp_kkt_residual(p, x, eq_duals, bound_duals);
  if (residual < best.residual) {
    best.x = std::move(x);
    best.eq_duals = std::move(eq_duals);
    best.bound_duals = std::move(bound_duals);
    best.residual = residual;
  }
  return residual <= accept_tol;
}

}  // namespace

double qp_kkt_residual(const QpProblem& p, const Eigen::VectorXd& x,
                       const Eigen::VectorXd& eq_duals, const Eigen::VectorXd& bound_duals) {
  Eigen::VectorXd stationarity = p.P * x + p.q;
  if (p.E.rows() > 0) stationarity += p.E.transpose() * eq_duals;
  for (std::size_t k = 0; k < p.nonpositive.size(); ++k)
    stationarity[p.nonpositive[k]] += bound_duals[static_cast<Eigen::Index>(k)];

  double r = stationarity.cwiseAbs().maxCoeff();
  if (p.E.rows() > 0) r = std::max(r, (p.E * x - p.e).cwiseAbs().maxCoeff());
  for (std::size_t k = 0; k < p.nonpositive.size(); ++k) {
    const double xj = x[p.nonpositive[k]];
    const double mu = bound_duals[static_cast<Eigen::Index>(k)];
    r = std::max(r, xj);        // primal feasibility x_j <= 0
    r = std::max(r, -mu);       // dual feasibility mu >= 0
    r = std::max(r, std::abs(mu * xj));
  }
  return r;
}

double qp_point_residual(const QpProblem& p, const Eigen::VectorXd& x) {
  const int n = static_cast<int>(p.P.rows());
  const int m_eq = static_cast<int>(p.E.rows());
  const double scale = problem_scale(p);
  const double active_tol = 1e-7 * scale;

  std::vector<int> active;
  for (std::size_t k = 0; k < p.nonpositive.size(); ++k)
    if (x[p.nonpositive[k]] >= -active_tol) active.push_back(static_cast<int>(k));

  const int m = m_eq + static_cast<int>(active.size());
  Eigen::VectorXd eq_duals = Eigen::VectorXd::Zero(m_eq);
  Eigen::VectorXd bound_duals = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p.nonpositive.size()));
  if (m > 0) {
    Eigen::MatrixXd at(n, m);
    for (int r = 0; r < m_eq; ++r) at.col(r) = p.E.row(r).transpose();
    for (std::size_t k = 0; k < active.size(); ++k) {
      at.col(m_eq + static_cast<int>(k)).setZero();
      at(p.nonpositive[static_cast<std::size_t>(active[k])], m_eq + static_cast<Eigen::Index>(k)) = 1.0;
    }
    const Eigen::VectorXd gradient = p.P * x + p.q;
    Eigen::VectorXd multipliers =
        at.completeOrthogonalDecomposition().solve((-gradient).eval());
    eq_duals = multipliers.head(m_eq);
    for (std::size_t k = 0; k < active.size(); ++k) {
      const double mu = multipliers[m_eq + static_cast<Eigen::Index>(k)];
      bound_duals[static_cast<Eigen::Index>(active[k])] = std::max(mu, 0.0);
    }
  }
  return qp_kkt_residual(p, x, eq_duals, bound_duals);
}

QpSolution solve_qp(const QpProblem& p_in, const QpOptions& options) {
  const int n = static_cast<int>(p_in.P.rows());
  require(n > 0, "QP has no variables");
  require(p_in.q.size() == n, "QP gradient size mismatch");
  const int m_eq = static_cast<int>(p_in.E.rows());
  require(m_eq == 0 || p_in.E.cols() == n, "QP constraint width mismatch");
  require(p_in.e.size() == m_eq, "QP constraint vector mismatch");
  const int m_bd = static_cast<int>(p_in.nonpositive.size());
  for (int j : p_in.nonpositive) require(j >= 0 && j < n, "QP bound index out of range");
  const int m = m_eq + m_bd;

  // Normalize the objective to unit magnitude: the minimizer is unchanged, the
  // splitting penalties act on curvature of a known scale, and the duals of the
  // original program are the scaled ones multiplied back by the factor. The
  // certificate tolerance is measured against the normalized problem, so for
  // objectives with entries above one it acts relative to their magnitude;
  // stationarity below machine precision times the data scale is not a
  // certificate any floating-point method can promise in absolute terms.
  const double obj_scale = std::max(1.0, std::max(p_in.P.cwiseAbs().maxCoeff(),
                                                  p_in.q.size() > 0
                                                      ? p_in.q.cwiseAbs().maxCoeff()
                                                      : 0.0));
  QpProblem p = p_in;
  p.P /= obj_scale;
  p.q /= obj_scale;

  const double scale = problem_scale(p);
  const double accept_tol = std::min(options.tol_kkt, std::max(1e-10 * scale, 1e-12));

  if (m == 0) {
    QpSolution out;
    out.x = p.P.ldlt().solve(-p.q);
    out.kkt_residual = qp_kkt_residual(p_in, out.x, Eigen::VectorXd(), Eigen::VectorXd());
    if (out.kkt_residual > options.tol_kkt * obj_scale)
      throw solver_error("unconstrained solve did not reach certificate tolerance",
                         out.kkt_residual);
    out.iterations = 0;
    out.polished = true;
    return out;
  }

  // Stacked constraint matrix: equality rows first, then one selector row per bound.
  // The splitting matrix uses per-row penalties, large on equalities.
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(m, n);
  if (m_eq > 0) A.topRows(m_eq) = p.E;
  for (int k = 0; k < m_bd; ++k) A(m_eq + k, p.nonpositive[static_cast<std::size_t>(k)]) = 1.0;

  Eigen::VectorXd rho(m), rho_inv(m);
  for (int r = 0; r < m; ++r) {
    rho[r] = r < m_eq ? options.rho_equality : options.rho_bound;
    rho_inv[r] = 1.0 / rho[r];
  }

  Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(n + m, n + m);
  kkt.topLeftCorner(n, n) = p.P + options.sigma * Eigen::MatrixXd::Identity(n, n);
  if (m > 0) {
    kkt.block(n, 0, m, n) = A;
    kkt.block(0, n, n, m) = A.transpose();
    kkt.bottomRightCorner(m, m) = (-rho_inv).asDiagonal();
  }
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(kkt);

  Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd z = Eigen::VectorXd::Zero(m);
  Eigen::VectorXd y = Eigen::VectorXd::Zero(m);
  if (options.warm && options.warm->x.size() == n && options.warm->z.size() == m &&
      options.warm->y.size() == m) {
    x = options.warm->x;
    z = options.warm->z;
    y = options.warm->y;
  } else if (m > 0) {
    z = A * x;
    for (int r = m_eq; r < m; ++r) z[r] = std::min(z[r], 0.0);
    if (m_eq > 0) z.head(m_eq) = p.e;
  }

  Certificate best;
  Eigen::VectorXd rhs(n + m), zp(m), z_relaxed(m);
  const double alpha = options.relaxation;
  int iteration = 0;

  auto attempt_polish = [&]() -> bool {
    const double dual_eps = 1e-10 * scale;
    std::vector<char> active_a(static_cast<std::size_t>(m_bd)), active_b(static_cast<std::size_t>(m_bd));
    bool differ = false;
    for (int k = 0; k < m_bd; ++k) {
      const int r = m_eq + k;
      active_a[static_cast<std::size_t>(k)] = y[r] > dual_eps;
      active_b[static_cast<std::size_t>(k)] = (y[r] > dual_eps) || (z[r] >= -1e-8 * scale);
      differ = differ || (active_a[static_cast<std::size_t>(k)] != active_b[static_cast<std::size_t>(k)]);
    }
    if (try_polish(p, active_a, accept_tol, best)) return true;
    if (differ && try_polish(p, active_b, accept_tol, best)) return true;
    return false;
  };

  bool certified = false;
  // Polish attempts cost a dense factorization, so their spacing backs off
  // geometrically while the active-set guess is still drifting.
  int next_polish = 10;
  int polish_gap = 15;
  while (iteration < options.max_iterations) {
    ++iteration;
    rhs.head(n) = options.sigma * x - p.q;
    for (int r = 0; r < m; ++r) rhs[n + r] = z[r] - rho_inv[r] * y[r];
    Eigen::VectorXd sol = lu.solve(rhs);
    const Eigen::VectorXd x_tilde = sol.head(n);
    const Eigen::VectorXd nu = sol.tail(m);
    for (int r = 0; r < m; ++r) zp[r] = z[r] + rho_inv[r] * (nu[r] - y[r]);
    z_relaxed = alpha * zp + (1.0 - alpha) * z;
    x = alpha * x_tilde + (1.0 - alpha) * x;
    for (int r = 0; r < m; ++r) {
      const double raw = z_relaxed[r] + rho_inv[r] * y[r];
      const double projected = r < m_eq ? p.e[r] : std::min(raw, 0.0);
      y[r] = y[r] + rho[r] * (z_relaxed[r] - projected);
      z[r] = projected;
    }

    if (iteration == next_polish) {
      certified = attempt_polish();
      if (certified) break;
      polish_gap = std::min(polish_gap * 2, 500);
      next_polish = iteration + polish_gap;
    }
  }

  if (!certified) {
    attempt_polish();
    // Fall back to the raw iterate before giving up.
    Eigen::VectorXd raw_bound_duals = Eigen::VectorXd::Zero(m_bd);
    for (int k = 0; k < m_bd; ++k) raw_bound_duals[k] = std::max(y[m_eq + k], 0.0);
    Eigen::VectorXd raw_eq = m_eq > 0 ? y.head(m_eq).eval() : Eigen::VectorXd();
    const double raw_residual = qp_kkt_residual(p, x, raw_eq, raw_bound_duals);
    if (raw_residual < best.residual) {
      best.x = x;
      best.eq_duals = raw_eq;
      best.bound_duals = raw_bound_duals;
      best.residual = raw_residual;
    }
  }

  QpSolution out;
  out.x = best.x;
  out.eq_duals =
      best.eq_duals.size() == m_eq ? (best.eq_duals * obj_scale).eval() : Eigen::VectorXd::Zero(m_eq);
  out.bound_duals = best.bound_duals.size() == m_bd ? (best.bound_duals * obj_scale).eval()
                                                    : Eigen::VectorXd::Zero(m_bd);
  out.kkt_residual = qp_kkt_residual(p_in, out.x, out.eq_duals, out.bound_duals);
  if (out.kkt_residual > options.tol_kkt * obj_scale)
    throw solver_error("weight solve did not reach certificate tolerance (best residual " +
                           std::to_string(out.kkt_residual) + ")",
                       out.kkt_residual);
  out.iterations = iteration;
  out.polished = true;
  out.z_state = z;
  out.y_state = y;
  return out;
}

}  // namespace dbsc
