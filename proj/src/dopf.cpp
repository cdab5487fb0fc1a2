#include "gridmarket/dopf.hpp"

#include <chrono>
#include <cmath>

namespace gridmarket {

DopfSolver::DopfSolver(const NetworkTopology& topo, double v_slack_setpoint_pu2)
    : topo_(topo), v_slack_pu2_(v_slack_setpoint_pu2) {
  const int nb = topo_.n_bus();
  const int nl = topo_.n_line();
  const int ng = static_cast<int>(topo_.generators().size());

  for (int i = 0; i < nb; ++i)
    if (topo_.buses()[i].p2p_cap_kw > 0) capped_buses_.push_back(i);
  const int na = static_cast<int>(capped_buses_.size());

  iv_ = 0;
  ic_ = nb;
  ip_ = nb + nl;
  iq_ = nb + 2 * nl;
  ig_ = nb + 3 * nl;
  igq_ = ig_ + ng;
  ia_ = igq_ + ng;
  const int n = ia_ + na;

  base_.n = n;
  base_.p_diag = VectorXd::Zero(n);
  base_.q = VectorXd::Zero(n);
  base_.lo = VectorXd::Constant(n, -inf());
  base_.hi = VectorXd::Constant(n, inf());

  const double s_kw = topo_.s_base_mva() * 1000.0;
  for (int i = 0; i < nb; ++i) {
    base_.lo[iv_ + i] = topo_.buses()[i].v_min;
    base_.hi[iv_ + i] = topo_.buses()[i].v_max;
  }
  for (int l = 0; l < nl; ++l) {
    base_.lo[ic_ + l] = 0.0;
    base_.hi[ic_ + l] = topo_.lines()[l].c_max_pu;
  }
  for (int g = 0; g < ng; ++g) {
    const auto& gen = topo_.generators()[g];
    base_.lo[ig_ + g] = gen.p_min_mw / topo_.s_base_mva();
    base_.hi[ig_ + g] = gen.p_max_mw / topo_.s_base_mva();
    base_.lo[igq_ + g] = gen.q_min_mvar / topo_.s_base_mva();
    base_.hi[igq_ + g] = gen.q_max_mvar / topo_.s_base_mva();
  }
  for (int a = 0; a < na; ++a) {
    double cap = topo_.buses()[capped_buses_[a]].p2p_cap_kw / s_kw;
    base_.lo[ia_ + a] = -cap;
    base_.hi[ia_ + a] = cap;
  }

  // equalities: P balance (nb), Q balance (nb), voltage drop (nl), slack pin
  const int m = 2 * nb + nl + 1;
  base_.A = MatrixXd::Zero(m, n);
  base_.b = VectorXd::Zero(m);

  for (int i = 0; i < nb; ++i) {
    int bus_id = topo_.buses()[i].id;
    for (int li : topo_.children_lines(bus_id)) {
      base_.A(i, ip_ + li) = 1.0;
      base_.A(nb + i, iq_ + li) = 1.0;
    }
    auto par = topo_.parent_line(bus_id);
    if (par) {
      base_.A(i, ip_ + *par) = -1.0;
      base_.A(i, ic_ + *par) = topo_.lines()[*par].r_pu;
      base_.A(nb + i, iq_ + *par) = -1.0;
      base_.A(nb + i, ic_ + *par) = topo_.lines()[*par].x_pu;
    }
  }
  for (int g = 0; g < ng; ++g) {
    int bi = topo_.bus_index(topo_.generators()[g].bus);
    base_.A(bi, ig_ + g) = -1.0;
    base_.A(nb + bi, igq_ + g) = -1.0;
  }
  for (int a = 0; a < na; ++a) base_.A(capped_buses_[a], ia_ + a) = -1.0;

  for (int l = 0; l < nl; ++l) {
    const auto& ln = topo_.lines()[l];
    int o = topo_.bus_index(ln.from_bus);
    int r = topo_.bus_index(ln.to_bus);
    int row = 2 * nb + l;
    base_.A(row, iv_ + o) = 1.0;
    base_.A(row, iv_ + r) = -1.0;
    base_.A(row, ip_ + l) = -2.0 * ln.r_pu;
    base_.A(row, iq_ + l) = -2.0 * ln.x_pu;
    base_.A(row, ic_ + l) = ln.r_pu * ln.r_pu + ln.x_pu * ln.x_pu;
  }
  base_.A(2 * nb + nl, iv_ + topo_.slack_index()) = 1.0;
  base_.b[2 * nb + nl] = v_slack_pu2_;

  // cone per line: ||(2P, 2Q, v_o - c)|| <= v_o + c
  for (int l = 0; l < nl; ++l) {
    int o = topo_.bus_index(topo_.lines()[l].from_bus);
    SocCone cone;
    cone.vars = {iv_ + o, ic_ + l, ip_ + l, iq_ + l};
    cone.u_loc = MatrixXd::Zero(3, 4);
    cone.u_loc(0, 2) = 2.0;
    cone.u_loc(1, 3) = 2.0;
    cone.u_loc(2, 0) = 1.0;
    cone.u_loc(2, 1) = -1.0;
    cone.u0 = VectorXd::Zero(3);
    cone.g_loc = VectorXd::Zero(4);
    cone.g_loc[0] = 1.0;
    cone.g_loc[1] = 1.0;
    cone.w0 = 0.0;
    base_.cones.push_back(std::move(cone));
  }

  // strictly interior start
  x0_ = VectorXd::Zero(n);
  for (int i = 0; i < nb; ++i) {
    const auto& b = topo_.buses()[i];
    x0_[iv_ + i] = (b.v_min < 1.0 && 1.0 < b.v_max) ? 1.0 : 0.5 * (b.v_min + b.v_max);
  }
  for (int l = 0; l < nl; ++l) x0_[ic_ + l] = std::min(0.1, 0.5 * topo_.lines()[l].c_max_pu);
  for (int g = 0; g < ng; ++g) {
    x0_[ig_ + g] = 0.5 * (base_.lo[ig_ + g] + base_.hi[ig_ + g]);
    x0_[igq_ + g] = 0.5 * (base_.lo[igq_ + g] + base_.hi[igq_ + g]);
  }
}

DopfSolution DopfSolver::solve(const InjectionRequest& req, const DopfParams& params) const {
  auto tic = std::chrono::steady_clock::now();
  const int nb = topo_.n_bus();
  const int nl = topo_.n_line();
  const int ng = static_cast<int>(topo_.generators().size());
  const int na = static_cast<int>(capped_buses_.size());
  const double s_kw = topo_.s_base_mva() * 1000.0;

  if (req.p_net_kw.size() != nb || req.p_load_kw.size() != nb || req.q_load_kvar.size() != nb)
    throw DataError("solve_dopf: request vector size mismatch");
  if (params.lambda_corr <= 0) throw DataError("solve_dopf: lambda_corr must be positive");
  if (params.c_ls < 0) throw DataError("solve_dopf: negative c_ls");

  ConicProblem pb = base_;
  const double c_ls_int = params.c_ls * s_kw;
  const double lam_int = params.lambda_corr * s_kw * s_kw;

  for (int l = 0; l < nl; ++l) pb.q[ic_ + l] = c_ls_int * topo_.lines()[l].r_pu;
  for (int a = 0; a < na; ++a) {
    double net_pu = req.p_net_kw[capped_buses_[a]] / s_kw;
    pb.p_diag[ia_ + a] = 2.0 * lam_int;
    pb.q[ia_ + a] = -2.0 * lam_int * net_pu;
    pb.obj_const += lam_int * net_pu * net_pu;
  }
  // proposals at uncapped buses can only be rejected; they enter as constants
  for (int i = 0; i < nb; ++i) {
    if (topo_.buses()[i].p2p_cap_kw <= 0 && req.p_net_kw[i] != 0.0) {
      double net_pu = req.p_net_kw[i] / s_kw;
      pb.obj_const += lam_int * net_pu * net_pu;
    }
  }
  for (int i = 0; i < nb; ++i) {
    pb.b[i] = -req.p_load_kw[i] / s_kw;
    pb.b[nb + i] = -req.q_load_kvar[i] / (topo_.s_base_mva() * 1000.0);
  }

  ConicSettings cs;
  cs.tol_gap_rel = 1e-10;
  cs.tol_feas = 1e-11;
  ConicResult r = solve_conic(pb, x0_, cs);

  DopfSolution sol;
  sol.newton_steps = r.newton_steps;
  sol.gap_bound = r.gap_bound;
  switch (r.status) {
    case ConicStatus::Optimal:
      sol.status = DopfStatus::Optimal;
      break;
    case ConicStatus::Infeasible:
      sol.status = DopfStatus::Infeasible;
      break;
    default:
      sol.status = DopfStatus::NumericalFailure;
      break;
  }
  if (sol.status == DopfStatus::Optimal) {
    sol.v_pu2 = r.x.segment(iv_, nb);
    sol.c_pu = r.x.segment(ic_, nl);
    sol.p_flow_pu = r.x.segment(ip_, nl);
    sol.q_flow_pu = r.x.segment(iq_, nl);
    sol.gen_p_mw = r.x.segment(ig_, ng) * topo_.s_base_mva();
    sol.gen_q_mvar = r.x.segment(igq_, ng) * topo_.s_base_mva();
    sol.p_acc_kw = VectorXd::Zero(nb);
    for (int a = 0; a < na; ++a) sol.p_acc_kw[capped_buses_[a]] = r.x[ia_ + a] * s_kw;
    double loss_pu = 0.0;
    for (int l = 0; l < nl; ++l) loss_pu += topo_.lines()[l].r_pu * sol.c_pu[l];
    sol.losses_kw = loss_pu * s_kw;
    sol.objective_rs = r.objective;
    sol.exactness_residual = VectorXd::Zero(nl);
    for (int l = 0; l < nl; ++l) {
      int o = topo_.bus_index(topo_.lines()[l].from_bus);
      sol.exactness_residual[l] =
          sol.c_pu[l] - (sol.p_flow_pu[l] * sol.p_flow_pu[l] + sol.q_flow_pu[l] * sol.q_flow_pu[l]) /
                            sol.v_pu2[o];
    }
  }
  sol.solve_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - tic).count();
  return sol;
}

DopfSolution solve_dopf(const NetworkTopology& topo, const InjectionRequest& req,
                        const DopfParams& params) {
  DopfSolver solver(topo);
  return solver.solve(req, params);
}

ExactnessReport check_exactness(const DopfSolution& sol, double tol) {
  ExactnessReport rep;
  if (sol.status != DopfStatus::Optimal)
    throw SolverError("check_exactness: solution is not optimal");
  rep.max_residual = 0.0;
  for (int l = 0; l < sol.exactness_residual.size(); ++l) {
    rep.max_residual = std::max(rep.max_residual, sol.exactness_residual[l]);
    if (sol.exactness_residual[l] > tol) rep.flagged_lines.push_back(l);
  }
  rep.exact = rep.flagged_lines.empty();
  return rep;
}

VectorXd project(const NetworkTopology& topo, const VectorXd& p_net_kw,
                 const InjectionRequest& context, const DopfParams& params) {
  DopfParams pure = params;
  // nearest feasible point in the correction metric; the vanishing loss cost
  // keeps the cone relaxation tight without biasing the projection
  pure.c_ls = 1e-6;
  InjectionRequest req = context;
  req.p_net_kw = p_net_kw;
  DopfSolution sol = solve_dopf(topo, req, pure);
  if (sol.status == DopfStatus::Infeasible)
    throw SolverError("project: network constraints are infeasible");
  if (sol.status != DopfStatus::Optimal) throw SolverError("project: solver failure");
  return sol.p_acc_kw;
}

}  // namespace gridmarket
