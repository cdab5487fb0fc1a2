#include <doctest.h>

#include "gridmarket/power_flow.hpp"

using namespace gridmarket;

namespace {
const std::string kCase = std::string(GM_DATA_DIR) + "/ieee33.case";

VectorXd load_injections(const NetworkTopology& topo, bool reactive) {
  VectorXd v(topo.n_bus());
  const double s_kw = topo.s_base_mva() * 1000.0;
  for (int i = 0; i < topo.n_bus(); ++i)
    v[i] = -(reactive ? topo.buses()[i].q_load_kvar : topo.buses()[i].p_load_kw) / s_kw;
  return v;
}
}  // namespace

TEST_CASE("nominal feeder matches the canonical solution") {
  NetworkTopology topo = load_network(kCase);
  PfResult pf = sweep_power_flow(topo, load_injections(topo, false), load_injections(topo, true));
  REQUIRE(pf.converged);
  // the fully loaded feeder bottoms out near 0.9131 pu at bus 18
  double vmin = pf.v_pu2.cwiseSqrt().minCoeff();
  int argmin = 0;
  pf.v_pu2.minCoeff(&argmin);
  CHECK(topo.buses()[argmin].id == 18);
  CHECK(vmin == doctest::Approx(0.9131).epsilon(2e-3));
  // total losses for this case are about 202.7 kW in the literature
  CHECK(pf.losses_kw == doctest::Approx(202.7).epsilon(0.02));
  CHECK(pf.slack_p_pu == doctest::Approx((3715.0 + pf.losses_kw) / 1000.0).epsilon(1e-6));
}

TEST_CASE("two-bus line drop matches the closed-form quadratic") {
  // v2 = v1 - 2(rP + xQ) + (r^2+x^2)c with c = (P^2+Q^2)/v1 at the exact
  // solution of the DistFlow recursion; solve the scalar fixed point here
  std::string text = R"([system]
s_base MVA 1.0
v_base kV 12.66
slack  id  1
[buses]
1 0.90 1.10 0 0 0
2 0.90 1.10 500 300 0
[lines]
1 1 2 1.6032 1.6032 300
[generators]
1 6.0 0.0 4.0 -4.0
)";
  NetworkTopology topo = parse_network(text);
  VectorXd p(2), q(2);
  p << 0.0, -0.5;
  q << 0.0, -0.3;
  PfResult pf = sweep_power_flow(topo, p, q, 1.0);
  REQUIRE(pf.converged);
  double r = topo.lines()[0].r_pu, x = topo.lines()[0].x_pu;
  // scalar reference: iterate P = 0.5 + r c, Q = 0.3 + x c, c = (P^2+Q^2)/1
  double c = 0;
  for (int it = 0; it < 200; ++it) c = (std::pow(0.5 + r * c, 2) + std::pow(0.3 + x * c, 2)) / 1.0;
  double pr = 0.5 + r * c, qr = 0.3 + x * c;
  double v2 = 1.0 - 2 * (r * pr + x * qr) + (r * r + x * x) * c;
  CHECK(pf.c_pu[0] == doctest::Approx(c).epsilon(1e-10));
  CHECK(pf.v_pu2[1] == doctest::Approx(v2).epsilon(1e-10));
}

TEST_CASE("injection at a bus raises its voltage") {
  NetworkTopology topo = load_network(kCase);
  VectorXd p = load_injections(topo, false), q = load_injections(topo, true);
  PfResult base = sweep_power_flow(topo, p, q);
  VectorXd p2 = p;
  p2[topo.bus_index(18)] += 1.0;  // 1 MW at the weakest bus
  PfResult boosted = sweep_power_flow(topo, p2, q);
  CHECK(boosted.v_pu2[topo.bus_index(18)] > base.v_pu2[topo.bus_index(18)] + 0.01);
  CHECK(boosted.losses_kw < base.losses_kw);
}

TEST_CASE("unloaded feeder stays flat") {
  NetworkTopology topo = load_network(kCase);
  VectorXd z = VectorXd::Zero(33);
  PfResult pf = sweep_power_flow(topo, z, z, 1.021);
  REQUIRE(pf.converged);
  CHECK((pf.v_pu2.array() - 1.021).abs().maxCoeff() < 1e-12);
  CHECK(pf.losses_kw == doctest::Approx(0.0));
}
