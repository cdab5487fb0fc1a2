#include "gridmarket/market.hpp"

#include <cmath>

namespace gridmarket {

void MarketConfig::validate() const {
  if (xi < 0) throw DataError("market: xi must be nonnegative");
  if (!(epsilon > 0)) throw DataError("market: epsilon must be positive");
  if (k_max < 1) throw DataError("market: k_max must be at least 1");
  if (pi_init < 0) throw DataError("market: negative initial price");
  if (mu < 0) throw DataError("market: negative mu");
}

double price_update(double pi, double xi, double demand_kw, double supply_kw) {
  return std::max(0.0, pi + xi * (demand_kw - supply_kw));
}

std::pair<double, double> aggregate(const std::vector<MgDecision>& decisions) {
  double supply = 0.0, demand = 0.0;
  for (const auto& d : decisions) {
    supply += d.p_sell_kw;
    demand += d.p_buy_kw;
  }
  return {supply, demand};
}

MarketOutcome clear_hour(const std::vector<MicrogridSpec>& specs, int hour,
                         const VectorXd& soc_kwh, const MarketConfig& config,
                         const AugmentedMode* aug, const std::vector<NetBounds>* bounds,
                         double dt_h) {
  config.validate();
  const int n_mg = static_cast<int>(specs.size());
  if (soc_kwh.size() != n_mg) throw DataError("clear_hour: SoC vector size mismatch");
  if (bounds && static_cast<int>(bounds->size()) != n_mg)
    throw DataError("clear_hour: bounds size mismatch");

  MarketOutcome out;
  std::vector<double> prices, supplies, demands;
  prices.reserve(64);

  VectorXd nets = VectorXd::Zero(n_mg);
  VectorXd acc = VectorXd::Zero(n_mg), dacc = VectorXd::Zero(n_mg);
  if (aug) aug->predict(nets, acc, dacc);

  double pi = config.pi_init;
  out.decisions.assign(n_mg, MgDecision{});

  for (int k = 1; k <= config.k_max; ++k) {
    for (int i = 0; i < n_mg; ++i) {
      const NetBounds* nb = bounds ? &(*bounds)[i] : nullptr;
      if (aug) {
        // affine model of the learned response around the previous proposal
        double z0 = nets[i], f0 = acc[i], df = dacc[i];
        ResponsePenalty pen;
        pen.mu = aug->mu;
        pen.value = [z0, f0, df](double z) { return f0 + df * (z - z0); };
        pen.grad = [df](double) { return df; };
        pen.warm_start_z = z0;
        pen.max_major_iters = 1;
        out.decisions[i] = solve_local(specs[i], pi, hour, soc_kwh[i], &pen, nb, dt_h);
      } else {
        out.decisions[i] = solve_local(specs[i], pi, hour, soc_kwh[i], nullptr, nb, dt_h);
      }
      nets[i] = out.decisions[i].p_net_kw;
    }

    double supply, demand;
    if (aug) {
      aug->predict(nets, acc, dacc);
      supply = demand = 0.0;
      for (int i = 0; i < n_mg; ++i) {
        supply += std::max(acc[i], 0.0);
        demand += std::max(-acc[i], 0.0);
      }
    } else {
      std::tie(supply, demand) = aggregate(out.decisions);
    }

    prices.push_back(pi);
    supplies.push_back(supply);
    demands.push_back(demand);
    out.iterations_used = k;
    if (std::abs(demand - supply) < config.epsilon) {
      out.converged = true;
      break;
    }
    pi = price_update(pi, config.xi, demand, supply);
  }

  out.final_price = prices.back();
  out.price_trajectory = Eigen::Map<VectorXd>(prices.data(), prices.size());
  out.supply_kw = Eigen::Map<VectorXd>(supplies.data(), supplies.size());
  out.demand_kw = Eigen::Map<VectorXd>(demands.data(), demands.size());
  out.soc_next_kwh.resize(n_mg);
  for (int i = 0; i < n_mg; ++i) out.soc_next_kwh[i] = out.decisions[i].soc_next_kwh;
  return out;
}

double unilateral_deviation(const std::vector<MicrogridSpec>& specs, int hour,
                            const VectorXd& soc_kwh, const MarketOutcome& outcome) {
  double worst = 0.0;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    MgDecision again = solve_local(specs[i], outcome.final_price, hour, soc_kwh[i]);
    double gain = payoff(again, outcome.final_price, specs[i], hour) -
                  payoff(outcome.decisions[i], outcome.final_price, specs[i], hour);
    worst = std::max(worst, gain);
  }
  return worst;
}

}  // namespace gridmarket
