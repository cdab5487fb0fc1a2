#include <doctest.h>

#include <chrono>

#include "gridmarket/dopf.hpp"
#include "gridmarket/power_flow.hpp"

using namespace gridmarket;

namespace {
const std::string kCase = std::string(GM_DATA_DIR) + "/ieee33.case";

// two-bus feeder with r = x = 0.01 pu and a capped trading bus
NetworkTopology two_bus(double cap_kw) {
  std::string text = R"([system]
s_base MVA 1.0
v_base kV 12.66
slack  id  1
[buses]
1 0.95 1.05 0 0 0
2 0.95 1.05 500 300 CAP
[lines]
1 1 2 1.6027563 1.6027563 3000
[generators]
1 6.0 0.0 4.0 -4.0
)";
  auto pos = text.find("CAP");
  text.replace(pos, 3, std::to_string(cap_kw));
  return parse_network(text);
}

InjectionRequest nominal_request(const NetworkTopology& topo, double net_at = 0.0, int bus = -1) {
  InjectionRequest req;
  int nb = topo.n_bus();
  req.p_net_kw = VectorXd::Zero(nb);
  req.p_load_kw.resize(nb);
  req.q_load_kvar.resize(nb);
  for (int i = 0; i < nb; ++i) {
    req.p_load_kw[i] = topo.buses()[i].p_load_kw;
    req.q_load_kvar[i] = topo.buses()[i].q_load_kvar;
  }
  if (bus >= 0) req.p_net_kw[topo.bus_index(bus)] = net_at;
  return req;
}

// exact quadratic power flow of the two-bus feeder for a given accepted value
struct TwoBusPf {
  double v2, c, p_send, q_send;
  bool ok;
};
TwoBusPf two_bus_pf(const NetworkTopology& topo, double acc_pu) {
  double r = topo.lines()[0].r_pu, x = topo.lines()[0].x_pu;
  double pd = 0.5 - acc_pu;  // load minus accepted injection
  double qd = 0.3;
  double c = 0;
  for (int it = 0; it < 500; ++it)
    c = (std::pow(pd + r * c, 2) + std::pow(qd + x * c, 2)) / 1.0;
  TwoBusPf out;
  out.c = c;
  out.p_send = pd + r * c;
  out.q_send = qd + x * c;
  out.v2 = 1.0 - 2 * (r * out.p_send + x * out.q_send) + (r * r + x * x) * c;
  out.ok = std::isfinite(c);
  return out;
}
}  // namespace

TEST_CASE("unloaded feeder solves to the zero point") {
  NetworkTopology topo = load_network(kCase).with_p2p_caps({{17, 100.0}});
  InjectionRequest req = nominal_request(topo);
  req.p_load_kw.setZero();
  req.q_load_kvar.setZero();
  DopfSolution sol = solve_dopf(topo, req, DopfParams{});
  REQUIRE(sol.status == DopfStatus::Optimal);
  CHECK(sol.p_acc_kw.cwiseAbs().maxCoeff() < 1e-4);
  CHECK((sol.v_pu2.array() - 1.0).abs().maxCoeff() < 1e-7);
  CHECK(sol.losses_kw < 1e-5);
  CHECK(std::abs(sol.objective_rs) < 1e-4);
  CHECK(check_exactness(sol, 1e-5).exact);
}

TEST_CASE("baseline ieee33 dispatch is feasible, exact and sweep-consistent") {
  NetworkTopology topo = load_network(kCase);
  InjectionRequest req = nominal_request(topo);
  auto tic = std::chrono::steady_clock::now();
  DopfSolution sol = solve_dopf(topo, req, DopfParams{});
  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - tic).count();
  REQUIRE(sol.status == DopfStatus::Optimal);
  CHECK(secs < 5.0);
  for (int i = 0; i < topo.n_bus(); ++i) {
    CHECK(sol.v_pu2[i] >= 0.9025 - 1e-6);
    CHECK(sol.v_pu2[i] <= 1.1025 + 1e-6);
  }
  ExactnessReport rep = check_exactness(sol, 1e-5);
  CHECK(rep.exact);
  CHECK(rep.max_residual <= 1e-5);

  // cone feasibility in the ||.|| <= v + c form
  for (int l = 0; l < topo.n_line(); ++l) {
    int o = topo.bus_index(topo.lines()[l].from_bus);
    double nrm = std::sqrt(4 * sol.p_flow_pu[l] * sol.p_flow_pu[l] +
                           4 * sol.q_flow_pu[l] * sol.q_flow_pu[l] +
                           std::pow(sol.v_pu2[o] - sol.c_pu[l], 2));
    CHECK(nrm <= sol.v_pu2[o] + sol.c_pu[l] + 1e-8);
  }

  // replay the dispatch through the exact sweep and compare voltages
  const double s_kw = 1000.0;
  VectorXd p = VectorXd::Zero(33), q = VectorXd::Zero(33);
  for (int i = 0; i < 33; ++i) {
    p[i] = -req.p_load_kw[i] / s_kw;
    q[i] = -req.q_load_kvar[i] / s_kw;
  }
  for (std::size_t g = 0; g < topo.generators().size(); ++g) {
    int bi = topo.bus_index(topo.generators()[g].bus);
    if (topo.generators()[g].bus == topo.slack_bus()) continue;
    p[bi] += sol.gen_p_mw[g];
    q[bi] += sol.gen_q_mvar[g];
  }
  PfResult pf = sweep_power_flow(topo, p, q, sol.v_pu2[topo.slack_index()]);
  REQUIRE(pf.converged);
  double vdiff = 0;
  for (int i = 0; i < 33; ++i)
    vdiff = std::max(vdiff, std::abs(std::sqrt(pf.v_pu2[i]) - std::sqrt(sol.v_pu2[i])));
  CHECK(vdiff <= 1e-4);
}

TEST_CASE("feasible interior proposal is kept") {
  NetworkTopology topo = load_network(kCase).with_p2p_caps({{22, 200.0}});
  InjectionRequest req = nominal_request(topo, 40.0, 22);
  DopfSolution sol = solve_dopf(topo, req, DopfParams{});
  REQUIRE(sol.status == DopfStatus::Optimal);
  // the loss term trims interior points by c_ls*mlf/(2*lambda), well under tol
  CHECK(std::abs(sol.p_acc_kw[topo.bus_index(22)] - 40.0) < 0.15);
  VectorXd proj = project(topo, req.p_net_kw, req, DopfParams{});
  CHECK(std::abs(proj[topo.bus_index(22)] - 40.0) < 0.05);
}

TEST_CASE("two-bus withdrawal matches the brute-force sweep oracle") {
  NetworkTopology topo = two_bus(6000.0);
  InjectionRequest req;
  req.p_net_kw = VectorXd::Zero(2);
  req.p_load_kw.resize(2);
  req.q_load_kvar.resize(2);
  req.p_load_kw << 0.0, 500.0;
  req.q_load_kvar << 0.0, 300.0;
  req.p_net_kw[1] = -5000.0;  // withdrawal far beyond the voltage limit
  DopfParams params;
  params.c_ls = 1.0;
  params.lambda_corr = 2.0;
  DopfSolution sol = solve_dopf(topo, req, params);
  REQUIRE(sol.status == DopfStatus::Optimal);
  double acc = sol.p_acc_kw[1];
  CHECK(std::abs(acc) < 5000.0);  // strictly smaller in magnitude

  // brute force over candidate accepted values at 1e-3 pu resolution,
  // solving the exact quadratic power flow at each point
  double best = 0, best_obj = 1e300;
  for (double a = -6.0; a <= 0.0 + 1e-12; a += 1e-3) {
    TwoBusPf pf = two_bus_pf(topo, a);
    if (!pf.ok || pf.v2 < 0.9025 || pf.v2 > 1.1025) continue;
    if (pf.c > topo.lines()[0].c_max_pu) continue;
    if (pf.p_send > 6.0 || pf.p_send < 0.0) continue;
    double losses_kw = topo.lines()[0].r_pu * pf.c * 1000.0;
    double obj = params.c_ls * losses_kw +
                 params.lambda_corr * std::pow(a * 1000.0 - (-5000.0), 2);
    if (obj < best_obj) {
      best_obj = obj;
      best = a;
    }
  }
  CHECK(std::abs(acc - best * 1000.0) <= 2.5);  // within the grid resolution
  // the voltage constraint should be what binds
  CHECK(sol.v_pu2[1] == doctest::Approx(0.9025).epsilon(1e-4));
}

TEST_CASE("projection is idempotent and pins non-traded buses to zero") {
  NetworkTopology topo = load_network(kCase).with_p2p_caps(
      {{17, 150.0}, {22, 150.0}, {25, 150.0}, {32, 150.0}});
  InjectionRequest ctx = nominal_request(topo);
  Rng rng(99);
  for (int trial = 0; trial < 5; ++trial) {
    VectorXd x = VectorXd::Zero(33);
    for (int bus : {17, 22, 25, 32}) x[topo.bus_index(bus)] = rng.uniform(-400.0, 400.0);
    VectorXd p1 = project(topo, x, ctx, DopfParams{});
    VectorXd p2 = project(topo, p1, ctx, DopfParams{});
    CHECK((p2 - p1).cwiseAbs().maxCoeff() <= 2e-4 * 1000.0);  // 2 * solver_tol, kW
  }
  // a proposal at a bus with zero cap is rejected outright
  VectorXd x = VectorXd::Zero(33);
  x[topo.bus_index(9)] = 50.0;
  VectorXd p = project(topo, x, ctx, DopfParams{});
  CHECK(p[topo.bus_index(9)] == 0.0);
}

TEST_CASE("raising lambda_corr never increases the total correction") {
  NetworkTopology topo = load_network(kCase).with_p2p_caps(
      {{17, 300.0}, {22, 300.0}, {25, 300.0}, {32, 300.0}});
  InjectionRequest req = nominal_request(topo);
  Rng rng(7);
  for (int trial = 0; trial < 3; ++trial) {
    for (int bus : {17, 22, 25, 32})
      req.p_net_kw[topo.bus_index(bus)] = rng.uniform(-250.0, 250.0);
    double prev = 1e300;
    for (double lam : {0.25, 1.0, 4.0, 16.0}) {
      DopfParams params;
      params.lambda_corr = lam;
      DopfSolution sol = solve_dopf(topo, req, params);
      REQUIRE(sol.status == DopfStatus::Optimal);
      double corr = (sol.p_acc_kw - req.p_net_kw).squaredNorm();
      CHECK(corr <= prev * (1.0 + 1e-6) + 1e-9);
      prev = corr;
    }
  }
}

TEST_CASE("constructed cone violation is flagged") {
  NetworkTopology topo = load_network(kCase);
  DopfSolution sol = solve_dopf(topo, nominal_request(topo), DopfParams{});
  REQUIRE(sol.status == DopfStatus::Optimal);
  sol.exactness_residual[4] += 0.01;
  ExactnessReport rep = check_exactness(sol, 1e-5);
  CHECK(!rep.exact);
  CHECK(rep.flagged_lines == std::vector<int>{4});
}

TEST_CASE("infeasible network load is certified") {
  NetworkTopology topo = two_bus(1000.0);
  InjectionRequest req;
  req.p_net_kw = VectorXd::Zero(2);
  req.p_load_kw.resize(2);
  req.q_load_kvar.resize(2);
  req.p_load_kw << 0.0, 7000.0;  // beyond the 6 MW substation limit
  req.q_load_kvar << 0.0, 300.0;
  DopfSolution sol = solve_dopf(topo, req, DopfParams{});
  CHECK(sol.status == DopfStatus::Infeasible);
  CHECK_THROWS_AS(project(topo, req.p_net_kw, req, DopfParams{}), SolverError);
}
