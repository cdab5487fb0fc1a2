#pragma once

#include <functional>
#include <optional>

#include "gridmarket/common.hpp"

namespace gridmarket {

struct BessSpec {
  double p_max_kw = 10.0;
  double soc_min_kwh = 4.0;
  double soc_max_kwh = 20.0;
  double eta_c = 0.95;
  double eta_d = 0.95;
  double soc_init_kwh = 12.0;
};

struct MicrogridSpec {
  int id = 0;
  int bus = 0;
  VectorXd alpha;  // marginal utility, Rs/kWh per hour
  VectorXd beta;   // diminishing-return coefficient, Rs/kWh^2 per hour
  double a = 0.0;  // quadratic generation cost
  double b = 0.0;  // linear generation cost
  double g_max_kw = 0.0;
  double load_min_kw = 0.0;
  double load_max_kw = 0.0;
  VectorXd pv_profile_kw;  // renewable availability per hour
  BessSpec bess;
  double lambda_d = 0.05;  // degradation cost, Rs/kWh of throughput

  void validate() const;
  // loosest conceivable net-exchange magnitude, used for the p2p cap rule
  double max_abs_net_kw() const;
};

enum class TradeRole { Seller, Buyer, Neutral };

struct MgDecision {
  double load_kw = 0.0;
  double gen_kw = 0.0;
  double ren_kw = 0.0;
  double p_ch_kw = 0.0;
  double p_dch_kw = 0.0;
  double soc_next_kwh = 0.0;
  double p_net_kw = 0.0;
  TradeRole role = TradeRole::Neutral;
  double p_sell_kw = 0.0;
  double p_buy_kw = 0.0;
};

double utility(double load_kw, double alpha, double beta);
double gen_cost(double gen_kw, double a, double b);
double soc_step(double soc_kwh, double p_ch_kw, double p_dch_kw, const BessSpec& bess,
                double dt_h = 1.0);
double payoff(const MgDecision& d, double price, const MicrogridSpec& spec, int hour);

// Learned network-response term: a scalar map z -> predicted accepted
// injection, with its derivative. solve_local linearizes it Gauss-Newton
// style, so value/grad are queried once per major iteration.
struct ResponsePenalty {
  double mu = 0.0;
  std::function<double(double)> value;
  std::function<double(double)> grad;
  int max_major_iters = 6;
  double warm_start_z = 0.0;
};

// Optional net-exchange bounds imposed by an outer coordination round.
struct NetBounds {
  double net_min_kw = -1e30;
  double net_max_kw = 1e30;
};

// Per-hour payoff maximization over (L, G, R, battery). The battery is a
// single signed power variable solved on each sign branch separately, which
// enforces the charge/discharge complementarity exactly.
MgDecision solve_local(const MicrogridSpec& spec, double price, int hour, double soc_kwh,
                       const ResponsePenalty* penalty = nullptr,
                       const NetBounds* bounds = nullptr, double dt_h = 1.0);

}  // namespace gridmarket
