#pragma once

// Dense convex QP solver
//
//   minimize    1/2 x'Hx + f'x
//   subject to  a_eq x = b_eq,  a_in x <= b_in,  lb <= x <= ub
//
// Operator splitting (ADMM) with adaptive penalty, followed by an
// equality-constrained polish on the detected active set. The solver keeps
// its workspace and the last dual iterate for warm starts; use one instance
// per thread.

#include <iosfwd>
#include <optional>

#include "jetvtol/common.hpp"

namespace jetvtol {

struct QpProblem {
  MatX h;
  VecX f;
  MatX a_eq;
  VecX b_eq;
  MatX a_in;
  VecX b_in;
  VecX lb;
  VecX ub;

  Eigen::Index num_vars() const { return f.size(); }
  /// Builds an unconstrained problem of dimension n (infinite bounds).
  static QpProblem unconstrained(const MatX& h, const VecX& f);
  /// Throws DomainError on shape mismatch, asymmetric H, p > n or lb > ub.
  void validate() const;
  double objective(const VecX& x) const { return 0.5 * x.dot(h * x) + f.dot(x); }
};

enum class QpStatus { Optimal, MaxIter, Infeasible };

const char* to_string(QpStatus s);

struct QpSettings {
  double tol = 1e-6;
  int max_iter = 4000;
  double rho = 0.1;
  double sigma = 1e-6;
  double relaxation = 1.6;
  int adapt_interval = 25;
  double divergence_threshold = 1e6;
};

struct QpSolution {
  VecX x;
  /// Multipliers: equality rows, then inequality rows, then variable bounds.
  VecX y_eq;
  VecX y_in;
  VecX y_box;
  QpStatus status = QpStatus::MaxIter;
  int iterations = 0;
  double primal_residual = 0.0;
  double dual_residual = 0.0;
  double complementarity = 0.0;
  bool polished = false;
  double objective = 0.0;
};

/// KKT residuals (infinity norm) of a candidate primal/dual pair.
struct KktResiduals {
  double stationarity = 0.0;
  double primal = 0.0;
  double complementarity = 0.0;
  double dual_sign = 0.0;
};

KktResiduals kkt_residuals(const QpProblem& p, const VecX& x, const VecX& y_eq, const VecX& y_in,
                           const VecX& y_box);

class QpSolver {
 public:
  explicit QpSolver(QpSettings settings = {}) : settings_(settings) {}

  QpSolution solve(const QpProblem& p, const std::optional<VecX>& warm_start = std::nullopt);

  const QpSettings& settings() const { return settings_; }
  QpSettings& settings() { return settings_; }

 private:
  QpSettings settings_;
  // Duals from the previous solve, reused when a warm start is given.
  VecX last_y_;
  VecX last_rho_;
};

/// Convenience wrapper around a fresh QpSolver.
QpSolution qp_solve(const QpProblem& p, const std::optional<VecX>& warm_start = std::nullopt,
                    double tol = 1e-6, int max_iter = 4000);

/// Text dump: "n p m" line, then H, f, a_eq, b_eq, a_in, b_in, lb, ub, each
/// matrix row-major one row per line ("inf"/"-inf" allowed).
void write_qp_text(std::ostream& os, const QpProblem& p);
QpProblem read_qp_text(std::istream& is);

}  // namespace jetvtol
