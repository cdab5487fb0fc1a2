#include <doctest.h>

#include "gridmarket/conic.hpp"

using namespace gridmarket;

namespace {
ConicProblem blank(int n) {
  ConicProblem p;
  p.n = n;
  p.p_diag = VectorXd::Zero(n);
  p.q = VectorXd::Zero(n);
  p.A = MatrixXd::Zero(0, n);
  p.b = VectorXd::Zero(0);
  p.lo = VectorXd::Constant(n, -inf());
  p.hi = VectorXd::Constant(n, inf());
  return p;
}
}  // namespace

TEST_CASE("equality-constrained qp hits the analytic optimum") {
  // min 1/2(x^2 + y^2) s.t. x + y = 2  ->  x = y = 1
  ConicProblem p = blank(2);
  p.p_diag << 1, 1;
  p.A = MatrixXd::Ones(1, 2);
  p.b = VectorXd::Constant(1, 2.0);
  VectorXd x0(2);
  x0 << 5.0, -3.0;
  ConicResult r = solve_conic(p, x0);
  REQUIRE(r.status == ConicStatus::Optimal);
  CHECK(r.x[0] == doctest::Approx(1.0).epsilon(1e-8));
  CHECK(r.x[1] == doctest::Approx(1.0).epsilon(1e-8));
}

TEST_CASE("active box bound") {
  // min (x-3)^2 with x <= 1
  ConicProblem p = blank(1);
  p.p_diag << 2;
  p.q << -6;
  p.obj_const = 9;
  p.lo[0] = -10;
  p.hi[0] = 1;
  ConicResult r = solve_conic(p, VectorXd::Zero(1));
  REQUIRE(r.status == ConicStatus::Optimal);
  CHECK(r.x[0] == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(r.objective == doctest::Approx(4.0).epsilon(1e-5));
}

TEST_CASE("second-order cone epigraph") {
  // min x s.t. ||(y, z)|| <= x, y = 1, z = 2  ->  x = sqrt(5)
  ConicProblem p = blank(3);
  p.q << 1, 0, 0;
  p.A = MatrixXd::Zero(2, 3);
  p.A(0, 1) = 1;
  p.A(1, 2) = 1;
  p.b.resize(2);
  p.b << 1, 2;
  SocCone cone;
  cone.vars = {0, 1, 2};
  cone.u_loc = MatrixXd::Zero(2, 3);
  cone.u_loc(0, 1) = 1;
  cone.u_loc(1, 2) = 1;
  cone.u0 = VectorXd::Zero(2);
  cone.g_loc = VectorXd::Zero(3);
  cone.g_loc[0] = 1;
  cone.w0 = 0;
  p.cones.push_back(cone);
  VectorXd x0(3);
  x0 << 10.0, 0.0, 0.0;  // strictly inside the cone, off the affine set
  ConicResult r = solve_conic(p, x0);
  REQUIRE(r.status == ConicStatus::Optimal);
  CHECK(r.x[0] == doctest::Approx(std::sqrt(5.0)).epsilon(1e-7));
  CHECK(r.x[1] == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("cone projection of an exterior point lands on the boundary") {
  // min (x-3)^2 s.t. |x| <= 1 written as a cone
  ConicProblem p = blank(1);
  p.p_diag << 2;
  p.q << -6;
  SocCone cone;
  cone.vars = {0};
  cone.u_loc = MatrixXd::Zero(1, 1);
  cone.u_loc(0, 0) = 1;
  cone.u0 = VectorXd::Zero(1);
  cone.g_loc = VectorXd::Zero(1);
  cone.w0 = 1.0;
  p.cones.push_back(cone);
  ConicResult r = solve_conic(p, VectorXd::Zero(1));
  REQUIRE(r.status == ConicStatus::Optimal);
  CHECK(r.x[0] == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("empty interior is certified infeasible") {
  // x = 1 (equality) but |x| <= 0.5
  ConicProblem p = blank(1);
  p.A = MatrixXd::Ones(1, 1);
  p.b = VectorXd::Ones(1);
  SocCone cone;
  cone.vars = {0};
  cone.u_loc = MatrixXd::Ones(1, 1);
  cone.u0 = VectorXd::Zero(1);
  cone.g_loc = VectorXd::Zero(1);
  cone.w0 = 0.5;
  p.cones.push_back(cone);
  ConicResult r = solve_conic(p, VectorXd::Zero(1));
  CHECK(r.status == ConicStatus::Infeasible);
  CHECK(r.infeas_margin > 0.4);
}

TEST_CASE("box-infeasible equality certified too") {
  ConicProblem p = blank(2);
  p.lo << 0, 0;
  p.hi << 1, 1;
  p.A = MatrixXd::Ones(1, 2);
  p.b = VectorXd::Constant(1, 5.0);  // x+y=5 unreachable in [0,1]^2
  VectorXd x0(2);
  x0 << 0.5, 0.5;
  ConicResult r = solve_conic(p, x0);
  CHECK(r.status == ConicStatus::Infeasible);
}

TEST_CASE("validation rejects malformed problems") {
  ConicProblem p = blank(1);
  p.lo[0] = 2;
  p.hi[0] = 1;
  CHECK_THROWS_AS(solve_conic(p, VectorXd::Zero(1)), SolverError);
  ConicProblem p2 = blank(1);
  p2.p_diag << -1;
  CHECK_THROWS_AS(solve_conic(p2, VectorXd::Zero(1)), SolverError);
}
