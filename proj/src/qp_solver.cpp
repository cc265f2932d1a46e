#include "jetvtol/qp_solver.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace jetvtol {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kEqRhoScale = 1e3;
constexpr double kRhoMin = 1e-6;
constexpr double kRhoMax = 1e6;
constexpr double kPolishTrigger = 1e-3;
constexpr double kInfeasibilityEps = 1e-6;
constexpr int kCheckInterval = 5;
constexpr int kMaxActiveSetPasses = 25;

double inf_norm(const VecX& v) { return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff(); }

// All constraints as l <= C x <= u. Rows: equalities, inequalities, then one
// row per variable with at least one finite bound.
struct Stacked {
  MatX c;
  VecX l;
  VecX u;
  Eigen::Index n_eq = 0;
  Eigen::Index n_in = 0;
  std::vector<Eigen::Index> box_var;

  Eigen::Index rows() const { return c.rows(); }
  bool is_equality(Eigen::Index i) const { return l(i) == u(i); }
};

Stacked stack(const QpProblem& p) {
  Stacked s;
  const Eigen::Index n = p.num_vars();
  s.n_eq = p.a_eq.rows();
  s.n_in = p.a_in.rows();
  for (Eigen::Index i = 0; i < n; ++i) {
    if (std::isfinite(p.lb(i)) || std::isfinite(p.ub(i))) s.box_var.push_back(i);
  }
  const auto nb = static_cast<Eigen::Index>(s.box_var.size());
  const Eigen::Index m = s.n_eq + s.n_in + nb;
  s.c = MatX::Zero(m, n);
  s.l.resize(m);
  s.u.resize(m);
  if (s.n_eq > 0) {
    s.c.topRows(s.n_eq) = p.a_eq;
    s.l.head(s.n_eq) = p.b_eq;
    s.u.head(s.n_eq) = p.b_eq;
  }
  if (s.n_in > 0) {
    s.c.middleRows(s.n_eq, s.n_in) = p.a_in;
    s.l.segment(s.n_eq, s.n_in).setConstant(-kInf);
    s.u.segment(s.n_eq, s.n_in) = p.b_in;
  }
  for (Eigen::Index k = 0; k < nb; ++k) {
    const Eigen::Index row = s.n_eq + s.n_in + k;
    const Eigen::Index var = s.box_var[static_cast<std::size_t>(k)];
    s.c(row, var) = 1.0;
    s.l(row) = p.lb(var);
    s.u(row) = p.ub(var);
  }
  return s;
}

void split_duals(const Stacked& s, const VecX& y, Eigen::Index n, QpSolution& sol) {
  sol.y_eq = y.head(s.n_eq);
  sol.y_in = y.segment(s.n_eq, s.n_in);
  sol.y_box = VecX::Zero(n);
  for (std::size_t k = 0; k < s.box_var.size(); ++k) {
    sol.y_box(s.box_var[k]) = y(s.n_eq + s.n_in + static_cast<Eigen::Index>(k));
  }
}

VecX project(const VecX& v, const VecX& l, const VecX& u) { return v.cwiseMax(l).cwiseMin(u); }

enum class Activity : std::uint8_t { Inactive, Lower, Upper, Equality };

struct PolishResult {
  VecX x;
  VecX y;
  bool ok = false;
};

// Solves the equality-constrained KKT system for a given active set with
// regularisation and iterative refinement. The primal block is proximal
// around `anchor`, which pins directions where H is singular.
bool solve_active_kkt(const QpProblem& p, const Stacked& s, const std::vector<Activity>& act,
                      const VecX& anchor, VecX& x, VecX& y) {
  const Eigen::Index n = p.num_vars();
  std::vector<Eigen::Index> rows;
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    if (act[static_cast<std::size_t>(i)] != Activity::Inactive) rows.push_back(i);
  }
  const auto k = static_cast<Eigen::Index>(rows.size());
  MatX kkt = MatX::Zero(n + k, n + k);
  VecX rhs(n + k);
  kkt.topLeftCorner(n, n) = p.h;
  rhs.head(n) = -p.f;
  for (Eigen::Index j = 0; j < k; ++j) {
    const Eigen::Index i = rows[static_cast<std::size_t>(j)];
    kkt.block(n + j, 0, 1, n) = s.c.row(i);
    kkt.block(0, n + j, n, 1) = s.c.row(i).transpose();
    const Activity a = act[static_cast<std::size_t>(i)];
    rhs(n + j) = a == Activity::Lower ? s.l(i) : s.u(i);
  }
  const double scale = std::max(1.0, p.h.cwiseAbs().maxCoeff());
  const double delta = 1e-9 * scale;
  kkt.topLeftCorner(n, n).diagonal().array() += delta;
  MatX reg = kkt;
  reg.bottomRightCorner(k, k).diagonal().array() -= delta;
  Eigen::PartialPivLU<MatX> lu(reg);
  // A few proximal-point passes re-anchored at the last solution: converges
  // quickly along well-conditioned directions, leaves null directions alone.
  VecX sol = VecX::Zero(n + k);
  sol.head(n) = anchor;
  for (int pass = 0; pass < 4; ++pass) {
    VecX b = rhs;
    b.head(n) += delta * sol.head(n);
    for (int it = 0; it < 10; ++it) {
      const VecX res = b - kkt * sol;
      if (inf_norm(res) < 1e-14 * (1.0 + inf_norm(b))) break;
      sol += lu.solve(res);
    }
  }
  if (!sol.allFinite()) return false;
  x = sol.head(n);
  y = VecX::Zero(s.rows());
  for (Eigen::Index j = 0; j < k; ++j) y(rows[static_cast<std::size_t>(j)]) = sol(n + j);
  return true;
}

PolishResult polish(const QpProblem& p, const Stacked& s, const VecX& x_admm, const VecX& z, const VecX& y_admm,
                    double tol) {
  const Eigen::Index m = s.rows();
  std::vector<Activity> act(static_cast<std::size_t>(m), Activity::Inactive);
  for (Eigen::Index i = 0; i < m; ++i) {
    auto& a = act[static_cast<std::size_t>(i)];
    if (s.is_equality(i)) {
      a = Activity::Equality;
    } else if (z(i) - s.l(i) < -y_admm(i)) {
      a = Activity::Lower;
    } else if (s.u(i) - z(i) < y_admm(i)) {
      a = Activity::Upper;
    }
  }

  PolishResult best;
  VecX x, y;
  for (int pass = 0; pass < kMaxActiveSetPasses; ++pass) {
    if (!solve_active_kkt(p, s, act, x_admm, x, y)) return best;
    const VecX cx = s.c * x;
    bool changed = false;
    // Drop constraints whose multiplier has the wrong sign, most negative first.
    double worst = tol;
    Eigen::Index drop = -1;
    for (Eigen::Index i = 0; i < m; ++i) {
      const Activity a = act[static_cast<std::size_t>(i)];
      const double wrong = a == Activity::Upper ? -y(i) : a == Activity::Lower ? y(i) : 0.0;
      if (wrong > worst) {
        worst = wrong;
        drop = i;
      }
    }
    // Add every violated inactive constraint.
    for (Eigen::Index i = 0; i < m; ++i) {
      auto& a = act[static_cast<std::size_t>(i)];
      if (a != Activity::Inactive) continue;
      const double viol_hi = cx(i) - s.u(i);
      const double viol_lo = s.l(i) - cx(i);
      if (viol_hi > tol * 0.1) {
        a = Activity::Upper;
        changed = true;
      } else if (viol_lo > tol * 0.1) {
        a = Activity::Lower;
        changed = true;
      }
    }
    if (!changed && drop >= 0) {
      act[static_cast<std::size_t>(drop)] = Activity::Inactive;
      changed = true;
    }
    if (!changed) {
      best.x = x;
      best.y = y;
      best.ok = true;
      return best;
    }
  }
  return best;
}

}  // namespace

const char* to_string(QpStatus s) {
  switch (s) {
    case QpStatus::Optimal: return "Optimal";
    case QpStatus::MaxIter: return "MaxIter";
    case QpStatus::Infeasible: return "Infeasible";
  }
  return "?";
}

QpProblem QpProblem::unconstrained(const MatX& h, const VecX& f) {
  QpProblem p;
  const Eigen::Index n = f.size();
  p.h = h;
  p.f = f;
  p.a_eq = MatX::Zero(0, n);
  p.b_eq = VecX::Zero(0);
  p.a_in = MatX::Zero(0, n);
  p.b_in = VecX::Zero(0);
  p.lb = VecX::Constant(n, -kInf);
  p.ub = VecX::Constant(n, kInf);
  return p;
}

void QpProblem::validate() const {
  const Eigen::Index n = f.size();
  if (h.rows() != n || h.cols() != n) throw DomainError("QpProblem: H must be n x n");
  if (a_eq.cols() != n || a_eq.rows() != b_eq.size()) throw DomainError("QpProblem: equality block shape");
  if (a_in.cols() != n || a_in.rows() != b_in.size()) throw DomainError("QpProblem: inequality block shape");
  if (lb.size() != n || ub.size() != n) throw DomainError("QpProblem: bound vectors must have length n");
  if (a_eq.rows() > n) throw DomainError("QpProblem: more equalities than variables");
  if (n > 0 && (h - h.transpose()).cwiseAbs().maxCoeff() > 1e-10 * std::max(1.0, h.cwiseAbs().maxCoeff())) {
    throw DomainError("QpProblem: H must be symmetric");
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    if (lb(i) > ub(i)) throw DomainError("QpProblem: lb > ub at index " + std::to_string(i));
  }
  if (!h.allFinite() || !f.allFinite() || !a_eq.allFinite() || !b_eq.allFinite() || !a_in.allFinite()) {
    throw DomainError("QpProblem: non-finite data");
  }
}

KktResiduals kkt_residuals(const QpProblem& p, const VecX& x, const VecX& y_eq, const VecX& y_in,
                           const VecX& y_box) {
  KktResiduals r;
  VecX grad = p.h * x + p.f + y_box;
  if (p.a_eq.rows() > 0) grad += p.a_eq.transpose() * y_eq;
  if (p.a_in.rows() > 0) grad += p.a_in.transpose() * y_in;
  r.stationarity = inf_norm(grad);
  if (p.a_eq.rows() > 0) r.primal = std::max(r.primal, inf_norm(p.a_eq * x - p.b_eq));
  if (p.a_in.rows() > 0) {
    const VecX slack = p.b_in - p.a_in * x;
    for (Eigen::Index i = 0; i < slack.size(); ++i) {
      r.primal = std::max(r.primal, -slack(i));
      r.dual_sign = std::max(r.dual_sign, -y_in(i));
      r.complementarity = std::max(r.complementarity, std::abs(y_in(i) * slack(i)));
    }
  }
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    r.primal = std::max({r.primal, p.lb(i) - x(i), x(i) - p.ub(i)});
    const double yi = y_box(i);
    if (yi > 0.0) {
      if (std::isfinite(p.ub(i))) {
        r.complementarity = std::max(r.complementarity, yi * std::abs(p.ub(i) - x(i)));
      } else {
        r.dual_sign = std::max(r.dual_sign, yi);
      }
    } else if (yi < 0.0) {
      if (std::isfinite(p.lb(i))) {
        r.complementarity = std::max(r.complementarity, -yi * std::abs(x(i) - p.lb(i)));
      } else {
        r.dual_sign = std::max(r.dual_sign, -yi);
      }
    }
  }
  return r;
}

QpSolution QpSolver::solve(const QpProblem& p, const std::optional<VecX>& warm_start) {
  p.validate();
  const QpSettings& st = settings_;
  const Eigen::Index n = p.num_vars();
  const Stacked s = stack(p);
  const Eigen::Index m = s.rows();

  const auto accept = [&](const VecX& x, const VecX& y, QpSolution& sol) {
    split_duals(s, y, n, sol);
    const auto r = kkt_residuals(p, x, sol.y_eq, sol.y_in, sol.y_box);
    sol.x = x;
    sol.primal_residual = r.primal;
    sol.dual_residual = std::max(r.stationarity, r.dual_sign);
    sol.complementarity = r.complementarity;
    sol.objective = p.objective(x);
    return r.stationarity <= st.tol && r.primal <= st.tol && r.complementarity <= st.tol &&
           r.dual_sign <= st.tol;
  };

  VecX x = warm_start && warm_start->size() == n ? *warm_start : VecX::Zero(n);
  VecX z = project(s.c * x, s.l, s.u);
  VecX y = VecX::Zero(m);
  VecX rho_base = VecX::Constant(m, st.rho);
  if (warm_start && last_y_.size() == m) {
    y = last_y_;
    rho_base = last_rho_;
  }
  for (Eigen::Index i = 0; i < m; ++i) {
    if (s.is_equality(i)) rho_base(i) = std::clamp(rho_base(i), st.rho * kEqRhoScale, kRhoMax);
  }
  VecX rho = rho_base;

  const double scale = 1.0 + inf_norm(p.f) + (n > 0 ? p.h.cwiseAbs().maxCoeff() : 0.0);
  Eigen::LLT<MatX> llt;
  const auto factor = [&]() {
    MatX k = p.h;
    k.diagonal().array() += st.sigma;
    if (m > 0) k += s.c.transpose() * rho.asDiagonal() * s.c;
    llt.compute(k);
    if (llt.info() != Eigen::Success) throw NumericError("qp_solve: KKT factorization failed");
  };
  factor();

  QpSolution sol;
  sol.x = x;
  int last_polish = -1000;
  int adapt_wait = st.adapt_interval;
  int next_adapt = st.adapt_interval;
  int iter = 0;
  for (iter = 1; iter <= st.max_iter; ++iter) {
    const VecX y_prev = y;
    VecX rhs = st.sigma * x - p.f;
    if (m > 0) rhs += s.c.transpose() * (rho.cwiseProduct(z) - y);
    const VecX xt = llt.solve(rhs);
    const VecX zt = s.c * xt;
    const double a = st.relaxation;
    x = a * xt + (1.0 - a) * x;
    const VecX zr = a * zt + (1.0 - a) * z;
    const VecX z_new = project(zr + y.cwiseQuotient(rho), s.l, s.u);
    y = y + rho.cwiseProduct(zr - z_new);
    z = z_new;

    if (!x.allFinite() || !y.allFinite()) throw NumericError("qp_solve: iterate became non-finite");

    const bool check = iter == 1 || iter % kCheckInterval == 0 || iter == st.max_iter;
    if (!check) continue;

    const VecX cx = s.c * x;
    const double r_prim = m > 0 ? inf_norm(cx - z) : 0.0;
    const VecX px = p.h * x;
    const VecX cty = m > 0 ? VecX(s.c.transpose() * y) : VecX::Zero(n);
    const double r_dual = inf_norm(px + p.f + cty);
    const double prim_scale = std::max(inf_norm(cx), inf_norm(z));
    const double dual_scale = std::max({inf_norm(px), inf_norm(cty), inf_norm(p.f)});

    // Primal infeasibility certificate on the dual increment, plus a hard cap
    // on dual iterate growth.
    if (m > 0) {
      const VecX dy = y - y_prev;
      const double dy_norm = inf_norm(dy);
      if (dy_norm > 1e-12) {
        const double ctdy = inf_norm(s.c.transpose() * dy);
        double support = 0.0;
        bool unbounded = false;
        for (Eigen::Index i = 0; i < m; ++i) {
          if (dy(i) > kInfeasibilityEps * dy_norm) {
            if (!std::isfinite(s.u(i))) unbounded = true;
            else support += s.u(i) * dy(i);
          } else if (dy(i) < -kInfeasibilityEps * dy_norm) {
            if (!std::isfinite(s.l(i))) unbounded = true;
            else support += s.l(i) * dy(i);
          }
        }
        if (!unbounded && ctdy <= kInfeasibilityEps * dy_norm && support < -kInfeasibilityEps * dy_norm) {
          sol.status = QpStatus::Infeasible;
          break;
        }
      }
      if (inf_norm(y) > st.divergence_threshold * scale) {
        sol.status = QpStatus::Infeasible;
        break;
      }
    }

    if (accept(x, y, sol)) {
      sol.status = QpStatus::Optimal;
      break;
    }

    const bool coarse = r_prim <= kPolishTrigger * (1.0 + prim_scale) &&
                        r_dual <= kPolishTrigger * (1.0 + dual_scale);
    if (coarse && iter - last_polish >= st.adapt_interval) {
      last_polish = iter;
      const auto pol = polish(p, s, x, z, y, st.tol);
      if (pol.ok) {
        QpSolution candidate = sol;
        if (accept(pol.x, pol.y, candidate)) {
          sol = candidate;
          sol.polished = true;
          sol.status = QpStatus::Optimal;
          y = pol.y;
          break;
        }
      }
    }

    // Each rho change doubles the wait before the next one, so the penalty
    // eventually settles; ADMM only converges once rho stops moving.
    if (m > 0 && iter >= next_adapt) {
      next_adapt = iter + adapt_wait;
      const double num = r_prim / (prim_scale + 1e-12);
      const double den = r_dual / (dual_scale + 1e-12);
      if (num > 0.0 && den > 0.0) {
        const double factor_change = std::sqrt(num / den);
        if (factor_change > 5.0 || factor_change < 0.2) {
          rho = (rho * factor_change).cwiseMax(kRhoMin).cwiseMin(kRhoMax);
          factor();
          adapt_wait *= 2;
          next_adapt = iter + adapt_wait;
        }
      }
    }
  }
  sol.iterations = std::min(iter, st.max_iter);
  if (sol.status == QpStatus::MaxIter) accept(x, y, sol);
  if (sol.status != QpStatus::Infeasible) {
    last_y_ = y;
    last_rho_ = rho;
  } else {
    last_y_.resize(0);
  }
  return sol;
}

QpSolution qp_solve(const QpProblem& p, const std::optional<VecX>& warm_start, double tol, int max_iter) {
  QpSettings settings;
  settings.tol = tol;
  settings.max_iter = max_iter;
  QpSolver solver(settings);
  return solver.solve(p, warm_start);
}

namespace {

void write_matrix(std::ostream& os, const MatX& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) os << (j ? " " : "") << m(i, j);
    os << '\n';
  }
}

void write_vector(std::ostream& os, const VecX& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) os << (i ? " " : "") << v(i);
  os << '\n';
}

double parse_number(const std::string& tok) {
  if (tok == "inf" || tok == "+inf") return kInf;
  if (tok == "-inf") return -kInf;
  std::size_t used = 0;
  const double v = std::stod(tok, &used);
  if (used != tok.size()) throw DomainError("qp text: bad number '" + tok + "'");
  return v;
}

MatX read_matrix(std::istream& is, Eigen::Index rows, Eigen::Index cols) {
  MatX m(rows, cols);
  std::string tok;
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) {
      if (!(is >> tok)) throw DomainError("qp text: truncated input");
      m(i, j) = parse_number(tok);
    }
  }
  return m;
}

}  // namespace

void write_qp_text(std::ostream& os, const QpProblem& p) {
  os << std::setprecision(17);
  os << p.num_vars() << ' ' << p.a_eq.rows() << ' ' << p.a_in.rows() << '\n';
  write_matrix(os, p.h);
  write_vector(os, p.f);
  write_matrix(os, p.a_eq);
  write_vector(os, p.b_eq);
  write_matrix(os, p.a_in);
  write_vector(os, p.b_in);
  write_vector(os, p.lb);
  write_vector(os, p.ub);
}

QpProblem read_qp_text(std::istream& is) {
  Eigen::Index n = 0, pe = 0, mi = 0;
  if (!(is >> n >> pe >> mi) || n < 0 || pe < 0 || mi < 0) throw DomainError("qp text: bad dimensions line");
  QpProblem p;
  p.h = read_matrix(is, n, n);
  p.f = read_matrix(is, n, 1);
  p.a_eq = read_matrix(is, pe, n);
  p.b_eq = read_matrix(is, pe, 1);
  p.a_in = read_matrix(is, mi, n);
  p.b_in = read_matrix(is, mi, 1);
  p.lb = read_matrix(is, n, 1);
  p.ub = read_matrix(is, n, 1);
  return p;
}

}  // namespace jetvtol
