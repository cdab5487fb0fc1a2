#pragma once

#include <string>
#include <vector>

#include "gridmarket/common.hpp"

namespace gridmarket {

struct PayoffRow {
  double utility_rs = 0.0;
  double gen_cost_rs = 0.0;
  double traded_kw = 0.0;  // sum of |p_net| actually transacted
  double trade_revenue_rs = 0.0;
  double degradation_rs = 0.0;
  double total_rs = 0.0;
};

struct CaseResult {
  int case_id = 0;
  int horizon = 0;
  std::uint64_t seed = 0;
  MatrixXd traded_proposed_kw;  // (T x n_mg) market proposals
  MatrixXd traded_accepted_kw;  // (T x n_mg) after DSO treatment (cases 2-3)
  std::vector<PayoffRow> payoff;  // per MG, summed over the horizon
  MatrixXd voltage_pu;            // (T x n_bus) audit magnitudes
  VectorXi market_iterations;    // per hour
  VectorXi dopf_calls_clearing;  // per hour, inside the clearing loop
  VectorXi dopf_calls_audit;     // per hour, post-hoc
  VectorXd final_price;          // per hour
  std::vector<bool> hour_converged;
  double wall_seconds = 0.0;
};

// per-hour traded power of a case divided by case 1; zero-denominator hours
// are flagged and excluded
struct AcceptanceRatio {
  VectorXd ratio;
  std::vector<int> skipped_hours;
};
AcceptanceRatio acceptance_ratio(const VectorXd& case_traded_kw, const VectorXd& case1_traded_kw);

struct ViolationStats {
  double max_deviation_pct = 0.0;  // beyond the band, % of the nearest limit
  int violated_hours = 0;
};
ViolationStats voltage_violation(const MatrixXd& profiles_pu, double band_lo = 0.95,
                                 double band_hi = 1.05);

VectorXd traded_per_hour(const CaseResult& r, bool accepted);
double total_traded_kw(const CaseResult& r);
double total_payoff_rs(const CaseResult& r);

// Table-style per-MG economic report; verifies decomposition additivity.
std::string payoff_table(const std::vector<CaseResult>& results);

}  // namespace gridmarket
