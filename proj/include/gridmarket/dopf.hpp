#pragma once

#include "gridmarket/conic.hpp"
#include "gridmarket/network.hpp"

namespace gridmarket {

struct DopfParams {
  double c_ls = 1.5;         // loss cost, Rs per kW of losses
  double lambda_corr = 2.0;  // correction penalty, Rs per kW^2 of deviation
  double solver_tol = 1e-4;  // feasibility/KKT tolerance in per-unit terms
};

struct InjectionRequest {
  VectorXd p_net_kw;     // proposed P2P injection per bus (positive = inject)
  VectorXd p_load_kw;    // underlying bus load
  VectorXd q_load_kvar;
};

enum class DopfStatus { Optimal, Infeasible, NumericalFailure };

struct DopfSolution {
  DopfStatus status = DopfStatus::NumericalFailure;
  VectorXd p_acc_kw;   // accepted injection per bus
  VectorXd v_pu2;      // squared voltages
  VectorXd p_flow_pu;  // per line, sending end
  VectorXd q_flow_pu;
  VectorXd c_pu;
  VectorXd gen_p_mw;  // per generator
  VectorXd gen_q_mvar;
  double losses_kw = 0.0;
  double objective_rs = 0.0;
  VectorXd exactness_residual;  // per line: c - (P^2+Q^2)/v_send
  double gap_bound = 0.0;
  int newton_steps = 0;
  double solve_seconds = 0.0;
};

struct ExactnessReport {
  bool exact = false;
  double max_residual = 0.0;
  std::vector<int> flagged_lines;  // line indices with residual > tol
};

// Branch-flow SOCP: minimize c_ls * losses + lambda_corr * ||p_acc - p_net||^2
// over DistFlow balance, voltage-drop and cone constraints with box limits.
// The slack bus voltage is pinned at v_slack_setpoint (squared p.u.).
//
// Matrices depending only on the topology are assembled once; each solve only
// refreshes load/injection vectors. A solver instance is immutable after
// construction and safe to share across threads.
class DopfSolver {
 public:
  explicit DopfSolver(const NetworkTopology& topo, double v_slack_setpoint_pu2 = 1.0);

  DopfSolution solve(const InjectionRequest& req, const DopfParams& params) const;

  const NetworkTopology& topology() const { return topo_; }

 private:
  NetworkTopology topo_;
  double v_slack_pu2_;
  std::vector<int> capped_buses_;  // bus indices carrying a p_acc variable
  ConicProblem base_;              // A, cones, boxes; q/b refreshed per solve
  VectorXd x0_;
  int iv_, ic_, ip_, iq_, ig_, igq_, ia_;  // variable block offsets
};

DopfSolution solve_dopf(const NetworkTopology& topo, const InjectionRequest& req,
                        const DopfParams& params);

ExactnessReport check_exactness(const DopfSolution& sol, double tol);

// Pure feasibility projection: the correction objective alone (the loss term
// dropped), so that feasible proposals are fixed points and the map is
// idempotent. Throws SolverError when the network is infeasible.
VectorXd project(const NetworkTopology& topo, const VectorXd& p_net_kw,
                 const InjectionRequest& context, const DopfParams& params);

}  // namespace gridmarket
