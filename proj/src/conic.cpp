#include "gridmarket/conic.hpp"

#include <Eigen/Cholesky>
#include <Eigen/LU>

#include <cmath>

namespace gridmarket {

namespace {

double objective_value(const ConicProblem& pb, const VectorXd& x) {
  return 0.5 * x.dot(pb.p_diag.cwiseProduct(x)) + pb.q.dot(x) + pb.obj_const;
}

VectorXd objective_grad(const ConicProblem& pb, const VectorXd& x) {
  return pb.p_diag.cwiseProduct(x) + pb.q;
}

int barrier_degree(const ConicProblem& pb) {
  int m = 0;
  for (int i = 0; i < pb.n; ++i) {
    if (std::isfinite(pb.lo[i])) ++m;
    if (std::isfinite(pb.hi[i])) ++m;
  }
  m += 2 * static_cast<int>(pb.cones.size());
  return m;
}

// gradient and Hessian of the log-barrier; false if x leaves the strict domain
bool barrier_eval(const ConicProblem& pb, const VectorXd& x, VectorXd& grad, MatrixXd& hess) {
  grad.setZero(pb.n);
  hess.setZero(pb.n, pb.n);
  for (int i = 0; i < pb.n; ++i) {
    if (std::isfinite(pb.lo[i])) {
      double s = x[i] - pb.lo[i];
      if (s <= 0) return false;
      grad[i] -= 1.0 / s;
      hess(i, i) += 1.0 / (s * s);
    }
    if (std::isfinite(pb.hi[i])) {
      double s = pb.hi[i] - x[i];
      if (s <= 0) return false;
      grad[i] += 1.0 / s;
      hess(i, i) += 1.0 / (s * s);
    }
  }
  for (const auto& cone : pb.cones) {
    const int k = static_cast<int>(cone.vars.size());
    VectorXd xl(k);
    for (int j = 0; j < k; ++j) xl[j] = x[cone.vars[j]];
    VectorXd u = cone.u_loc * xl + cone.u0;
    double w = cone.g_loc.dot(xl) + cone.w0;
    double s = w * w - u.squaredNorm();
    if (w <= 0 || s <= 0) return false;
    VectorXd ds = 2.0 * w * cone.g_loc - 2.0 * (cone.u_loc.transpose() * u);
    MatrixXd d2s = 2.0 * (cone.g_loc * cone.g_loc.transpose()) -
                   2.0 * (cone.u_loc.transpose() * cone.u_loc);
    VectorXd gl = -ds / s;
    MatrixXd hl = (ds * ds.transpose()) / (s * s) - d2s / s;
    for (int j = 0; j < k; ++j) {
      grad[cone.vars[j]] += gl[j];
      for (int j2 = 0; j2 < k; ++j2) hess(cone.vars[j], cone.vars[j2]) += hl(j, j2);
    }
  }
  return true;
}

// smallest positive root of a*t^2 + b*t + c = 0, +inf if none
double smallest_pos_root(double a, double b, double c) {
  const double big = inf();
  if (std::abs(a) < 1e-300) {
    if (b >= 0) return big;
    return -c / b;
  }
  double disc = b * b - 4 * a * c;
  if (disc < 0) return a > 0 ? big : 0.0;  // a<0 with disc<0 cannot happen when c>0
  double sq = std::sqrt(disc);
  double q = b >= 0 ? -0.5 * (b + sq) : -0.5 * (b - sq);
  double r1 = q / a, r2 = (q != 0.0) ? c / q : big;
  double best = big;
  if (r1 > 0) best = std::min(best, r1);
  if (r2 > 0) best = std::min(best, r2);
  return best;
}

// largest step keeping x + a*dx strictly inside the barrier domain
double max_domain_step(const ConicProblem& pb, const VectorXd& x, const VectorXd& dx) {
  double a = inf();
  for (int i = 0; i < pb.n; ++i) {
    if (std::isfinite(pb.lo[i]) && dx[i] < 0) a = std::min(a, (pb.lo[i] - x[i]) / dx[i]);
    if (std::isfinite(pb.hi[i]) && dx[i] > 0) a = std::min(a, (pb.hi[i] - x[i]) / dx[i]);
  }
  for (const auto& cone : pb.cones) {
    const int k = static_cast<int>(cone.vars.size());
    VectorXd xl(k), dl(k);
    for (int j = 0; j < k; ++j) {
      xl[j] = x[cone.vars[j]];
      dl[j] = dx[cone.vars[j]];
    }
    VectorXd u = cone.u_loc * xl + cone.u0;
    VectorXd du = cone.u_loc * dl;
    double w = cone.g_loc.dot(xl) + cone.w0;
    double dw = cone.g_loc.dot(dl);
    // keep w > 0
    if (dw < 0) a = std::min(a, -w / dw);
    // keep w^2 - |u|^2 > 0
    double c0 = w * w - u.squaredNorm();
    double b1 = 2.0 * (w * dw - u.dot(du));
    double a2 = dw * dw - du.squaredNorm();
    a = std::min(a, smallest_pos_root(a2, b1, c0));
  }
  return a;
}

struct NewtonWork {
  MatrixXd kkt;
  VectorXd rhs, sol;
  VectorXd bgrad;
  MatrixXd bhess;
};

ConicResult run_barrier(const ConicProblem& pb, const VectorXd& x0, const ConicSettings& st,
                        bool allow_phase1);

// elastic feasibility problem: min s subject to the relaxed constraint system
ConicResult certify_phase1(const ConicProblem& pb, const ConicSettings& st) {
  const int n = pb.n;
  ConicProblem p1;
  p1.n = n + 1;
  const int si = n;
  p1.p_diag = VectorXd::Zero(p1.n);
  p1.q = VectorXd::Zero(p1.n);
  p1.q[si] = 1.0;
  const int m = static_cast<int>(pb.A.rows());
  p1.A = MatrixXd::Zero(m, p1.n);
  p1.A.leftCols(n) = pb.A;
  p1.b = pb.b;
  p1.lo = VectorXd::Constant(p1.n, -inf());
  p1.hi = VectorXd::Constant(p1.n, inf());

  auto linear_cone = [&](const std::vector<int>& vars, const VectorXd& g, double w0) {
    SocCone c;
    c.vars = vars;
    c.u_loc = MatrixXd::Zero(0, static_cast<int>(vars.size()));
    c.u0 = VectorXd::Zero(0);
    c.g_loc = g;
    c.w0 = w0;
    p1.cones.push_back(std::move(c));
  };
  for (int i = 0; i < n; ++i) {
    if (std::isfinite(pb.lo[i])) {
      VectorXd g(2);
      g << 1.0, 1.0;
      linear_cone({i, si}, g, -pb.lo[i]);
    }
    if (std::isfinite(pb.hi[i])) {
      VectorXd g(2);
      g << -1.0, 1.0;
      linear_cone({i, si}, g, pb.hi[i]);
    }
  }
  for (const auto& cone : pb.cones) {
    SocCone c = cone;
    c.vars.push_back(si);
    MatrixXd u = MatrixXd::Zero(cone.u_loc.rows(), cone.u_loc.cols() + 1);
    u.leftCols(cone.u_loc.cols()) = cone.u_loc;
    c.u_loc = u;
    VectorXd g(cone.g_loc.size() + 1);
    g.head(cone.g_loc.size()) = cone.g_loc;
    g[cone.g_loc.size()] = 1.0;
    c.g_loc = g;
    p1.cones.push_back(std::move(c));
  }

  // minimum-norm point on the affine set, then a slack making it interior
  VectorXd x_ls = VectorXd::Zero(n);
  if (m > 0) {
    Eigen::LLT<MatrixXd> llt(pb.A * pb.A.transpose() +
                             1e-12 * MatrixXd::Identity(m, m));
    x_ls = pb.A.transpose() * llt.solve(pb.b);
  }
  double viol = 0.0;
  for (int i = 0; i < n; ++i) {
    if (std::isfinite(pb.lo[i])) viol = std::max(viol, pb.lo[i] - x_ls[i]);
    if (std::isfinite(pb.hi[i])) viol = std::max(viol, x_ls[i] - pb.hi[i]);
  }
  for (const auto& cone : pb.cones) {
    const int k = static_cast<int>(cone.vars.size());
    VectorXd xl(k);
    for (int j = 0; j < k; ++j) xl[j] = x_ls[cone.vars[j]];
    viol = std::max(viol, (cone.u_loc * xl + cone.u0).norm() - (cone.g_loc.dot(xl) + cone.w0));
  }
  double s0 = viol + 1.0;
  p1.hi[si] = s0 + 10.0;
  p1.lo[si] = -1e4 * (1.0 + std::abs(s0));

  VectorXd x1(p1.n);
  x1.head(n) = x_ls;
  x1[si] = s0;

  ConicSettings st1 = st;
  st1.certify_infeasible = false;
  st1.tol_gap_rel = 1e-10;
  return run_barrier(p1, x1, st1, false);
}

ConicResult run_barrier(const ConicProblem& pb, const VectorXd& x0, const ConicSettings& st,
                        bool allow_phase1) {
  ConicResult res;
  const int n = pb.n;
  const int m = static_cast<int>(pb.A.rows());
  const int deg = barrier_degree(pb);

  VectorXd x = x0;
  VectorXd nu = VectorXd::Zero(m);
  NewtonWork w;
  w.kkt.resize(n + m, n + m);
  w.rhs.resize(n + m);

  if (!barrier_eval(pb, x, w.bgrad, w.bhess)) {
    res.status = ConicStatus::NumericalFailure;
    return res;
  }

  double fg_norm = objective_grad(pb, x).norm();
  double t = deg == 0 ? 1.0 : std::clamp(w.bgrad.norm() / std::max(fg_norm, 1e-8), 1e-2, 1e4);
  double obj_scale = std::max(1.0, std::abs(objective_value(pb, x)));
  const double b_scale = 1.0 + (m > 0 ? pb.b.cwiseAbs().maxCoeff() : 0.0);

  int total_steps = 0;
  bool stalled = false;

  while (true) {
    // center at the current t
    for (int it = 0; it < st.max_newton_stage; ++it) {
      VectorXd rd = t * objective_grad(pb, x) + w.bgrad;
      if (m > 0) rd += pb.A.transpose() * nu;
      VectorXd rp = m > 0 ? VectorXd(pb.A * x - pb.b) : VectorXd::Zero(0);

      double r_scale = 1.0 + t * objective_grad(pb, x).cwiseAbs().maxCoeff() +
                       w.bgrad.cwiseAbs().maxCoeff();
      bool rd_ok = rd.cwiseAbs().maxCoeff() <= 1e-10 * r_scale;
      bool rp_ok = m == 0 || rp.cwiseAbs().maxCoeff() <= st.tol_feas * b_scale;
      if (rd_ok && rp_ok) break;

      w.kkt.setZero();
      w.kkt.topLeftCorner(n, n) = w.bhess;
      for (int i = 0; i < n; ++i) w.kkt(i, i) += t * pb.p_diag[i] + 1e-13;
      if (m > 0) {
        w.kkt.topRightCorner(n, m) = pb.A.transpose();
        w.kkt.bottomLeftCorner(m, n) = pb.A;
        for (int i = 0; i < m; ++i) w.kkt(n + i, n + i) = -1e-13;
      }
      w.rhs.head(n) = -rd;
      w.rhs.tail(m) = -rp;

      Eigen::PartialPivLU<MatrixXd> lu(w.kkt);
      w.sol = lu.solve(w.rhs);
      // one pass of iterative refinement
      VectorXd resid = w.rhs - w.kkt * w.sol;
      w.sol += lu.solve(resid);
      if (!w.sol.allFinite()) {
        res.status = ConicStatus::NumericalFailure;
        stalled = true;
        break;
      }

      VectorXd dx = w.sol.head(n);
      VectorXd dnu = w.sol.tail(m);

      double alpha = std::min(1.0, 0.99 * max_domain_step(pb, x, dx));
      double merit0 = std::sqrt(rd.squaredNorm() + rp.squaredNorm());
      VectorXd xn, g2;
      MatrixXd h2;
      bool accepted = false;
      for (int ls = 0; ls < 60; ++ls) {
        xn = x + alpha * dx;
        if (barrier_eval(pb, xn, g2, h2)) {
          VectorXd nun = nu + alpha * dnu;
          VectorXd rd2 = t * objective_grad(pb, xn) + g2;
          if (m > 0) rd2 += pb.A.transpose() * nun;
          VectorXd rp2 = m > 0 ? VectorXd(pb.A * xn - pb.b) : VectorXd::Zero(0);
          double merit2 = std::sqrt(rd2.squaredNorm() + rp2.squaredNorm());
          if (merit2 <= (1.0 - 0.01 * alpha) * merit0) {
            x = xn;
            nu += alpha * dnu;
            w.bgrad = g2;
            w.bhess = h2;
            accepted = true;
            break;
          }
        }
        alpha *= 0.5;
      }
      ++total_steps;
      if (!accepted) {
        stalled = true;
        break;
      }
      if (total_steps >= st.max_newton_total) break;
    }

    obj_scale = std::max(obj_scale, std::abs(objective_value(pb, x)));
    double gap = deg / std::max(t, 1e-300);
    double rp_inf = m > 0 ? (pb.A * x - pb.b).cwiseAbs().maxCoeff() : 0.0;
    if (std::getenv("GM_CONIC_TRACE")) {
      VectorXd rd_dbg = t * objective_grad(pb, x) + w.bgrad + (m > 0 ? VectorXd(pb.A.transpose() * nu) : VectorXd::Zero(n));
      std::fprintf(stderr, "[conic] t=%.3e steps=%d gap=%.3e rp=%.3e rd=%.3e stalled=%d obj=%.6e\n",
                   t, total_steps, gap, rp_inf, rd_dbg.cwiseAbs().maxCoeff(), int(stalled),
                   objective_value(pb, x));
    }

    if (!stalled && gap <= st.tol_gap_rel * obj_scale && rp_inf <= st.tol_feas * b_scale) {
      res.status = ConicStatus::Optimal;
      res.gap_bound = gap;
      break;
    }
    if (stalled || total_steps >= st.max_newton_total) {
      // equality residual stuck away from zero points at an empty interior
      if (allow_phase1 && st.certify_infeasible) {
        ConicResult p1 = certify_phase1(pb, st);
        if (p1.status == ConicStatus::Optimal) {
          res.infeas_margin = p1.objective;
          if (p1.objective > -1e-9) {
            res.status = ConicStatus::Infeasible;
            res.x = x;
            res.newton_steps = total_steps + p1.newton_steps;
            res.objective = objective_value(pb, x);
            res.eq_residual = rp_inf;
            return res;
          }
          // strictly feasible point recovered; restart once from it
          ConicSettings st2 = st;
          st2.certify_infeasible = false;
          ConicResult retry = run_barrier(pb, p1.x.head(n), st2, false);
          retry.newton_steps += total_steps + p1.newton_steps;
          retry.infeas_margin = p1.objective;
          return retry;
        }
      }
      res.status = stalled ? ConicStatus::NumericalFailure : ConicStatus::MaxIterations;
      res.gap_bound = gap;
      break;
    }
    t *= st.barrier_mu;
    stalled = false;
  }

  res.x = x;
  res.objective = objective_value(pb, x);
  res.eq_residual = m > 0 ? (pb.A * x - pb.b).cwiseAbs().maxCoeff() : 0.0;
  res.newton_steps = total_steps;
  return res;
}

}  // namespace

ConicResult solve_conic(const ConicProblem& pb, const VectorXd& x0, const ConicSettings& st) {
  if (pb.p_diag.size() != pb.n || pb.q.size() != pb.n || pb.lo.size() != pb.n ||
      pb.hi.size() != pb.n || pb.A.cols() != pb.n || pb.A.rows() != pb.b.size())
    throw SolverError("solve_conic: inconsistent problem dimensions");
  for (int i = 0; i < pb.n; ++i)
    if (pb.lo[i] >= pb.hi[i]) throw SolverError("solve_conic: empty box on variable");
  if (pb.p_diag.minCoeff() < 0) throw SolverError("solve_conic: nonconvex quadratic");
  return run_barrier(pb, x0, st, true);
}

}  // namespace gridmarket
