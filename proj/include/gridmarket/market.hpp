#pragma once

#include "gridmarket/microgrid.hpp"

namespace gridmarket {

struct MarketConfig {
  double xi = 0.005;     // price step per kW of mismatch
  double epsilon = 0.01; // convergence tolerance on |demand - supply|, kW
  int k_max = 2000;
  double pi_init = 3.0;
  double mu = 0.0;  // surrogate penalty weight, augmented mode only

  void validate() const;
};

struct IterRow {
  int k = 0;
  double price = 0.0;
  double supply_kw = 0.0;
  double demand_kw = 0.0;
};

struct MarketOutcome {
  VectorXd price_trajectory;  // price used at each iteration, starting at pi_init
  VectorXd supply_kw;         // aggregated per iteration
  VectorXd demand_kw;
  double final_price = 0.0;
  std::vector<MgDecision> decisions;  // per MG, from the last iteration
  VectorXd soc_next_kwh;              // advanced once from the final decisions
  bool converged = false;
  int iterations_used = 0;
};

double price_update(double pi, double xi, double demand_kw, double supply_kw);

// supply = sum of sells, demand = sum of buys
std::pair<double, double> aggregate(const std::vector<MgDecision>& decisions);

// Learned-response hooks for the augmented market: one batched evaluation per
// price iteration returns predicted accepted injections and their own-input
// derivatives at the current proposals.
struct AugmentedMode {
  double mu = 0.0;
  std::function<void(const VectorXd& net_kw, VectorXd& acc_kw, VectorXd& dacc_dnet)> predict;
};

// One hour of Nash price iteration: local solves, aggregation, price update,
// until |demand - supply| < epsilon or k_max. In augmented mode the aggregates
// are the predicted accepted quantities. Non-convergence is reported, not
// thrown.
MarketOutcome clear_hour(const std::vector<MicrogridSpec>& specs, int hour,
                         const VectorXd& soc_kwh, const MarketConfig& config,
                         const AugmentedMode* aug = nullptr,
                         const std::vector<NetBounds>* bounds = nullptr, double dt_h = 1.0);

// Largest payoff gain any MG can realize by re-solving at the final price
// (the unilateral-deviation check at the computed point).
double unilateral_deviation(const std::vector<MicrogridSpec>& specs, int hour,
                            const VectorXd& soc_kwh, const MarketOutcome& outcome);

}  // namespace gridmarket
