#include "gridmarket/power_flow.hpp"

#include <cmath>

namespace gridmarket {

PfResult sweep_power_flow(const NetworkTopology& topo, const VectorXd& p_inj_pu,
                          const VectorXd& q_inj_pu, double v_slack_pu2, double tol, int max_iter) {
  const int nb = topo.n_bus();
  const int nl = topo.n_line();
  if (p_inj_pu.size() != nb || q_inj_pu.size() != nb)
    throw DataError("sweep_power_flow: injection vector size mismatch");

  PfResult res;
  res.v_pu2 = VectorXd::Constant(nb, v_slack_pu2);
  res.p_flow_pu = VectorXd::Zero(nl);
  res.q_flow_pu = VectorXd::Zero(nl);
  res.c_pu = VectorXd::Zero(nl);

  const auto& order = topo.dfs_order();
  const auto& lines = topo.lines();

  for (int it = 0; it < max_iter; ++it) {
    // backward: aggregate flows toward the root using lagged line losses
    for (int oi = nb - 1; oi >= 0; --oi) {
      int n = order[oi];
      int bus_id = topo.buses()[n].id;
      double p = -p_inj_pu[n];
      double q = -q_inj_pu[n];
      for (int li : topo.children_lines(bus_id)) {
        p += res.p_flow_pu[li];
        q += res.q_flow_pu[li];
      }
      auto par = topo.parent_line(bus_id);
      if (par) {
        int li = *par;
        res.p_flow_pu[li] = p + lines[li].r_pu * res.c_pu[li];
        res.q_flow_pu[li] = q + lines[li].x_pu * res.c_pu[li];
      } else {
        res.slack_p_pu = p;
        res.slack_q_pu = q;
      }
    }
    // forward: update voltages and squared currents
    double delta = 0.0;
    for (int oi = 0; oi < nb; ++oi) {
      int n = order[oi];
      int bus_id = topo.buses()[n].id;
      if (bus_id == topo.slack_bus()) {
        res.v_pu2[n] = v_slack_pu2;
        continue;
      }
      int li = *topo.parent_line(bus_id);
      const auto& l = lines[li];
      int o = topo.bus_index(l.from_bus);
      double vo = res.v_pu2[o];
      double c = (res.p_flow_pu[li] * res.p_flow_pu[li] + res.q_flow_pu[li] * res.q_flow_pu[li]) / vo;
      double vn = vo - 2.0 * (l.r_pu * res.p_flow_pu[li] + l.x_pu * res.q_flow_pu[li]) +
                  (l.r_pu * l.r_pu + l.x_pu * l.x_pu) * c;
      if (vn <= 0) throw SolverError("sweep_power_flow: voltage collapse");
      delta = std::max(delta, std::abs(vn - res.v_pu2[n]));
      delta = std::max(delta, std::abs(c - res.c_pu[li]));
      res.v_pu2[n] = vn;
      res.c_pu[li] = c;
    }
    res.iterations = it + 1;
    if (delta < tol) {
      res.converged = true;
      break;
    }
  }

  double loss_pu = 0.0;
  for (int li = 0; li < nl; ++li) loss_pu += lines[li].r_pu * res.c_pu[li];
  res.losses_kw = from_per_unit_kw(topo, loss_pu);
  return res;
}

}  // namespace gridmarket
