#pragma once

#include "gridmarket/network.hpp"

namespace gridmarket {

// Exact radial power flow (forward/backward sweep on the DistFlow recursion,
// no relaxation). Used to audit market outcomes and to cross-check the SOCP.
struct PfResult {
  VectorXd v_pu2;      // squared voltage per bus
  VectorXd p_flow_pu;  // sending-end active flow per line
  VectorXd q_flow_pu;
  VectorXd c_pu;  // squared current per line
  double losses_kw = 0.0;
  double slack_p_pu = 0.0;  // net injection drawn from the slack source
  double slack_q_pu = 0.0;
  int iterations = 0;
  bool converged = false;
};

// p_inj/q_inj: net injection per bus index in p.u. (generation minus load);
// the slack entry is ignored and balances the system. v_slack_pu2 roots the
// sweep.
PfResult sweep_power_flow(const NetworkTopology& topo, const VectorXd& p_inj_pu,
                          const VectorXd& q_inj_pu, double v_slack_pu2 = 1.0,
                          double tol = 1e-13, int max_iter = 200);

}  // namespace gridmarket
