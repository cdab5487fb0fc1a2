#pragma once

#include <limits>
#include <vector>

#include "gridmarket/common.hpp"

namespace gridmarket {

// One second-order-cone constraint ||U x + u0|| <= g.x + w0 over a small
// support set of variables. A cone with zero u-rows degenerates to the linear
// inequality g.x + w0 >= 0.
struct SocCone {
  std::vector<int> vars;  // global indices of the touched variables
  MatrixXd u_loc;         // (dim x |vars|)
  VectorXd u0;            // (dim)
  VectorXd g_loc;         // (|vars|)
  double w0 = 0.0;
};

// minimize 1/2 x' diag(p_diag) x + q'x  s.t.  A x = b,  lo <= x <= hi, cones
struct ConicProblem {
  int n = 0;
  VectorXd p_diag;  // may be zero
  VectorXd q;
  MatrixXd A;  // (m x n), full row rank
  VectorXd b;
  VectorXd lo, hi;  // +-inf entries allowed
  std::vector<SocCone> cones;
  double obj_const = 0.0;
};

struct ConicSettings {
  double tol_gap_rel = 1e-9;    // duality-gap target relative to objective scale
  double tol_feas = 1e-10;      // relative equality-residual target
  double barrier_mu = 30.0;     // outer multiplier on t
  int max_newton_total = 800;
  int max_newton_stage = 60;
  bool certify_infeasible = true;  // run the elastic phase-I when phase-II stalls
};

enum class ConicStatus { Optimal, Infeasible, MaxIterations, NumericalFailure };

struct ConicResult {
  ConicStatus status = ConicStatus::NumericalFailure;
  VectorXd x;
  double objective = 0.0;
  double gap_bound = 0.0;      // barrier-degree over final t
  double eq_residual = 0.0;    // ||Ax - b||_inf
  double infeas_margin = 0.0;  // phase-I optimum when it ran (>0 means infeasible)
  int newton_steps = 0;
};

// x0 must be strictly inside boxes and cones; equality residual may be nonzero
// (infeasible-start Newton absorbs it).
ConicResult solve_conic(const ConicProblem& prob, const VectorXd& x0,
                        const ConicSettings& settings = {});

inline double inf() { return std::numeric_limits<double>::infinity(); }

}  // namespace gridmarket
