#include "gridmarket/harness.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <sstream>

#include "gridmarket/power_flow.hpp"

namespace gridmarket {

namespace {

std::string annotate(const char* what, int case_id, int hour, int round) {
  std::string s = std::string(what) + " (case " + std::to_string(case_id) + ", hour " +
                  std::to_string(hour);
  if (round >= 0) s += ", round " + std::to_string(round);
  return s + ")";
}

struct HourLoads {
  VectorXd p_kw, q_kvar;
};

HourLoads hour_loads(const CaseConfig& cfg, int t) {
  const int nb = cfg.topo.n_bus();
  HourLoads hl;
  hl.p_kw.resize(nb);
  hl.q_kvar.resize(nb);
  double shape = cfg.load_shape.size() ? cfg.load_shape[t] : 1.0;
  double tanphi = std::tan(std::acos(cfg.pf));
  for (int i = 0; i < nb; ++i) {
    hl.p_kw[i] = cfg.topo.buses()[i].p_load_kw * cfg.load_scale * shape;
    hl.q_kvar[i] = hl.p_kw[i] * tanphi;
  }
  return hl;
}

// exact sweep on the proposed trades with the configured audit dispatch
VectorXd audit_voltages(const CaseConfig& cfg, const HourLoads& hl, const VectorXd& p_net_kw) {
  const int nb = cfg.topo.n_bus();
  const double s_kw = cfg.topo.s_base_mva() * 1000.0;
  VectorXd p = VectorXd::Zero(nb), q = VectorXd::Zero(nb);
  for (int i = 0; i < nb; ++i) {
    p[i] = (p_net_kw[i] - hl.p_kw[i]) / s_kw;
    q[i] = -hl.q_kvar[i] / s_kw;
  }
  for (const auto& [bus, mw] : cfg.audit_gen_p_mw)
    if (bus != cfg.topo.slack_bus()) p[cfg.topo.bus_index(bus)] += mw / cfg.topo.s_base_mva();
  for (const auto& [bus, mvar] : cfg.audit_gen_q_mvar)
    if (bus != cfg.topo.slack_bus()) q[cfg.topo.bus_index(bus)] += mvar / cfg.topo.s_base_mva();
  PfResult pf = sweep_power_flow(cfg.topo, p, q, 1.0);
  if (!pf.converged) throw SolverError("audit power flow did not converge");
  return pf.v_pu2.cwiseSqrt();
}

void append_market_log(std::string& log, int hour, const MarketOutcome& out) {
  for (int k = 0; k < out.price_trajectory.size(); ++k) {
    log += std::to_string(hour) + "\t" + std::to_string(k + 1) + "\t" +
           fmt_full(out.price_trajectory[k]) + "\t" + fmt_full(out.supply_kw[k]) + "\t" +
           fmt_full(out.demand_kw[k]) + "\t" +
           fmt_full(std::abs(out.demand_kw[k] - out.supply_kw[k])) + "\n";
  }
}

}  // namespace

CaseResult run_case(const CaseConfig& cfg, CaseArtifacts* artifacts) {
  auto tic = std::chrono::steady_clock::now();
  if (cfg.case_id < 1 || cfg.case_id > 3) throw UsageError("run_case: case id must be 1, 2 or 3");
  if (cfg.case_id == 3 && !cfg.model)
    throw UsageError("run_case: case 3 requires a surrogate model");
  if (cfg.horizon < 1) throw UsageError("run_case: horizon must be at least 1");
  for (const auto& mg : cfg.mgs) {
    mg.validate();
    if (mg.alpha.size() < cfg.horizon)
      throw DataError("run_case: trajectories shorter than the horizon");
  }
  if (cfg.load_shape.size() && cfg.load_shape.size() < cfg.horizon)
    throw DataError("run_case: load shape shorter than the horizon");

  const int T = cfg.horizon;
  const int n_mg = static_cast<int>(cfg.mgs.size());
  const int nb = cfg.topo.n_bus();
  DopfSolver solver(cfg.topo);

  CaseResult res;
  res.case_id = cfg.case_id;
  res.horizon = T;
  res.seed = cfg.seed;
  res.traded_proposed_kw = MatrixXd::Zero(T, n_mg);
  res.traded_accepted_kw = MatrixXd::Zero(T, n_mg);
  res.voltage_pu = MatrixXd::Zero(T, nb);
  res.market_iterations = VectorXi::Zero(T);
  res.dopf_calls_clearing = VectorXi::Zero(T);
  res.dopf_calls_audit = VectorXi::Zero(T);
  res.final_price = VectorXd::Zero(T);
  res.hour_converged.assign(T, false);
  res.payoff.assign(n_mg, PayoffRow{});

  VectorXd soc(n_mg);
  for (int i = 0; i < n_mg; ++i) soc[i] = cfg.mgs[i].bess.soc_init_kwh;

  std::string log = "hour\titer\tprice\tsupply_kw\tdemand_kw\tmismatch_kw\n";

  for (int t = 0; t < T; ++t) {
    HourLoads hl = hour_loads(cfg, t);
    std::vector<MgDecision> decisions;
    VectorXd accepted = VectorXd::Zero(n_mg);
    double price = 0.0;

    if (cfg.case_id == 1) {
      MarketOutcome out = clear_hour(cfg.mgs, t, soc, cfg.market);
      append_market_log(log, t, out);
      res.market_iterations[t] = out.iterations_used;
      res.hour_converged[t] = out.converged;
      decisions = out.decisions;
      price = out.final_price;
      for (int i = 0; i < n_mg; ++i) {
        res.traded_proposed_kw(t, i) = decisions[i].p_net_kw;
        res.traded_accepted_kw(t, i) = decisions[i].p_net_kw;  // no DSO treatment
      }
      VectorXd p_net = VectorXd::Zero(nb);
      for (int i = 0; i < n_mg; ++i)
        p_net[cfg.topo.bus_index(cfg.mgs[i].bus)] = decisions[i].p_net_kw;
      res.voltage_pu.row(t) = audit_voltages(cfg, hl, p_net).transpose();
    } else if (cfg.case_id == 2) {
      std::vector<NetBounds> bounds(n_mg);
      VectorXd acc_bus = VectorXd::Zero(nb);
      MarketOutcome out;
      DopfSolution dsol;
      int rounds = 0;
      for (int r = 0; r < cfg.outer_rounds; ++r) {
        out = clear_hour(cfg.mgs, t, soc, cfg.market, nullptr, r == 0 ? nullptr : &bounds);
        append_market_log(log, t, out);
        res.market_iterations[t] += out.iterations_used;
        res.hour_converged[t] = out.converged;
        VectorXd p_net = VectorXd::Zero(nb);
        for (int i = 0; i < n_mg; ++i)
          p_net[cfg.topo.bus_index(cfg.mgs[i].bus)] = out.decisions[i].p_net_kw;
        if (r == 0)
          for (int i = 0; i < n_mg; ++i)
            res.traded_proposed_kw(t, i) = out.decisions[i].p_net_kw;

        InjectionRequest req{p_net, hl.p_kw, hl.q_kvar};
        dsol = solver.solve(req, cfg.dopf);
        ++res.dopf_calls_clearing[t];
        ++rounds;
        if (dsol.status == DopfStatus::Infeasible)
          throw SolverError(annotate("D-OPF infeasible", cfg.case_id, t, r));
        if (dsol.status != DopfStatus::Optimal)
          throw SolverError(annotate("D-OPF failed", cfg.case_id, t, r));
        acc_bus = dsol.p_acc_kw;
        double s_acc = 0, b_acc = 0;
        for (int i = 0; i < n_mg; ++i) {
          double a = acc_bus[cfg.topo.bus_index(cfg.mgs[i].bus)];
          s_acc += std::max(a, 0.0);
          b_acc += std::max(-a, 0.0);
          bounds[i].net_min_kw = -std::abs(a);
          bounds[i].net_max_kw = std::abs(a);
        }
        if (std::abs(b_acc - s_acc) < cfg.market.epsilon) break;
      }
      price = out.final_price;
      // corrected injections stand; re-derive consistent device schedules
      decisions.resize(n_mg);
      for (int i = 0; i < n_mg; ++i) {
        double a = acc_bus[cfg.topo.bus_index(cfg.mgs[i].bus)];
        NetBounds pin{a, a};
        decisions[i] = solve_local(cfg.mgs[i], price, t, soc[i], nullptr, &pin);
        res.traded_accepted_kw(t, i) = decisions[i].p_net_kw;
      }
      res.voltage_pu.row(t) = dsol.v_pu2.cwiseSqrt().transpose();
    } else {
      // case 3: learned response inside the clearing loop, no D-OPF calls
      std::vector<int> mg_bus(n_mg);
      for (int i = 0; i < n_mg; ++i) mg_bus[i] = cfg.topo.bus_index(cfg.mgs[i].bus);
      MatrixXd feats(nb, 5);
      feats.col(0).setZero();
      feats.col(1) = hl.p_kw;
      feats.col(2).setConstant(cfg.pf);
      feats.col(3).setConstant(cfg.dopf.c_ls);
      feats.col(4).setConstant(cfg.dopf.lambda_corr);

      AugmentedMode aug;
      aug.mu = cfg.mu;
      aug.predict = [&](const VectorXd& net_kw, VectorXd& acc_kw, VectorXd& dacc) {
        for (int i = 0; i < n_mg; ++i) feats(mg_bus[i], 0) = net_kw[i];
        VectorXd yhat = forward(*cfg.model, feats);
        acc_kw.resize(n_mg);
        dacc.resize(n_mg);
        for (int i = 0; i < n_mg; ++i) {
          acc_kw[i] = yhat[mg_bus[i]];
          dacc[i] = input_gradient(*cfg.model, feats, mg_bus[i]);
        }
      };

      MarketOutcome out = clear_hour(cfg.mgs, t, soc, cfg.market, &aug);
      append_market_log(log, t, out);
      res.market_iterations[t] = out.iterations_used;
      res.hour_converged[t] = out.converged;
      decisions = out.decisions;
      price = out.final_price;

      VectorXd p_net = VectorXd::Zero(nb);
      for (int i = 0; i < n_mg; ++i) {
        p_net[mg_bus[i]] = decisions[i].p_net_kw;
        res.traded_proposed_kw(t, i) = decisions[i].p_net_kw;
      }
      // one post-hoc D-OPF per hour, audit only
      InjectionRequest req{p_net, hl.p_kw, hl.q_kvar};
      DopfSolution dsol = solver.solve(req, cfg.dopf);
      ++res.dopf_calls_audit[t];
      if (dsol.status != DopfStatus::Optimal)
        throw SolverError(annotate("audit D-OPF failed", cfg.case_id, t, -1));
      for (int i = 0; i < n_mg; ++i)
        res.traded_accepted_kw(t, i) = dsol.p_acc_kw[mg_bus[i]];
      res.voltage_pu.row(t) = audit_voltages(cfg, hl, p_net).transpose();
    }

    res.final_price[t] = price;
    for (int i = 0; i < n_mg; ++i) {
      const auto& d = decisions[i];
      auto& p = res.payoff[i];
      p.utility_rs += utility(d.load_kw, cfg.mgs[i].alpha[t], cfg.mgs[i].beta[t]);
      p.gen_cost_rs += gen_cost(d.gen_kw, cfg.mgs[i].a, cfg.mgs[i].b);
      p.trade_revenue_rs += price * (d.p_sell_kw - d.p_buy_kw);
      p.degradation_rs += cfg.mgs[i].lambda_d * (d.p_ch_kw + d.p_dch_kw);
      p.traded_kw += std::abs(cfg.case_id == 1 ? res.traded_proposed_kw(t, i)
                                               : res.traded_accepted_kw(t, i));
      p.total_rs += payoff(d, price, cfg.mgs[i], t);
      soc[i] = d.soc_next_kwh;
    }
  }

  if (artifacts) artifacts->market_log_tsv = std::move(log);
  res.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - tic).count();
  return res;
}

CompareReport compare(const std::vector<CaseResult>& results) {
  if (results.size() < 2) throw UsageError("compare: need at least two case results");
  for (std::size_t i = 1; i < results.size(); ++i) {
    if (results[i].horizon != results[0].horizon || results[i].seed != results[0].seed ||
        results[i].payoff.size() != results[0].payoff.size())
      throw DataError("compare: case results come from different configurations");
  }

  CompareReport rep;
  nlohmann::json j = nlohmann::json::array();
  char buf[256];
  rep.table =
      "case  traded_kwh    payoff_rs     max_violation_pct  violated_h  dopf_clear  dopf_audit  "
      "iterations  wall_s\n";
  for (const auto& r : results) {
    ViolationStats v = voltage_violation(r.voltage_pu);
    double traded = total_traded_kw(r);
    double pay = total_payoff_rs(r);
    int iters = r.market_iterations.sum();
    std::snprintf(buf, sizeof(buf), "%-5d %-13.3f %-13.3f %-18.4f %-11d %-11d %-11d %-11d %.3f\n",
                  r.case_id, traded, pay, v.max_deviation_pct, v.violated_hours,
                  r.dopf_calls_clearing.sum(), r.dopf_calls_audit.sum(), iters, r.wall_seconds);
    rep.table += buf;
    j.push_back({{"case", r.case_id},
                 {"traded_kwh", traded},
                 {"traded_annualized_mwh", traded * 365.0 / 1000.0},
                 {"annualized_extrapolated", true},
                 {"payoff_rs", pay},
                 {"payoff_annualized_rs", pay * 365.0},
                 {"max_violation_pct", v.max_deviation_pct},
                 {"violated_hours", v.violated_hours},
                 {"dopf_calls_clearing", r.dopf_calls_clearing.sum()},
                 {"dopf_calls_audit", r.dopf_calls_audit.sum()},
                 {"market_iterations", iters},
                 {"wall_seconds", r.wall_seconds}});
  }
  rep.table +=
      "annualized figures extrapolate the horizon by 365 and are flagged as such in the JSON\n";
  rep.json = j.dump(2) + "\n";
  return rep;
}

void write_case_bundle(const CaseResult& r, const CaseArtifacts& artifacts,
                       const std::string& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json j;
  j["case_id"] = r.case_id;
  j["horizon"] = r.horizon;
  j["seed"] = r.seed;
  j["final_price"] = std::vector<double>(r.final_price.data(),
                                         r.final_price.data() + r.final_price.size());
  j["market_iterations"] =
      std::vector<int>(r.market_iterations.data(),
                       r.market_iterations.data() + r.market_iterations.size());
  j["dopf_calls_clearing"] =
      std::vector<int>(r.dopf_calls_clearing.data(),
                       r.dopf_calls_clearing.data() + r.dopf_calls_clearing.size());
  j["dopf_calls_audit"] = std::vector<int>(
      r.dopf_calls_audit.data(), r.dopf_calls_audit.data() + r.dopf_calls_audit.size());
  j["hour_converged"] = r.hour_converged;
  nlohmann::json pay = nlohmann::json::array();
  for (const auto& p : r.payoff)
    pay.push_back({{"utility_rs", p.utility_rs},
                   {"gen_cost_rs", p.gen_cost_rs},
                   {"traded_kw", p.traded_kw},
                   {"trade_revenue_rs", p.trade_revenue_rs},
                   {"degradation_rs", p.degradation_rs},
                   {"total_rs", p.total_rs}});
  j["payoff"] = pay;
  ViolationStats v = voltage_violation(r.voltage_pu);
  j["max_violation_pct"] = v.max_deviation_pct;
  j["violated_hours"] = v.violated_hours;
  j["total_traded_kwh"] = total_traded_kw(r);
  j["total_payoff_rs"] = total_payoff_rs(r);
  write_text_file(dir + "/summary.json", j.dump(2) + "\n");

  std::string trades = "hour";
  for (std::size_t i = 0; i < r.payoff.size(); ++i)
    trades += "\tproposed_mg" + std::to_string(i + 1) + "\taccepted_mg" + std::to_string(i + 1);
  trades += "\n";
  for (int t = 0; t < r.horizon; ++t) {
    trades += std::to_string(t);
    for (int i = 0; i < r.traded_proposed_kw.cols(); ++i)
      trades += "\t" + fmt_full(r.traded_proposed_kw(t, i)) + "\t" +
                fmt_full(r.traded_accepted_kw(t, i));
    trades += "\n";
  }
  write_text_file(dir + "/trades.tsv", trades);

  std::string volts = "hour";
  for (int b = 0; b < r.voltage_pu.cols(); ++b) volts += "\tbus" + std::to_string(b + 1);
  volts += "\n";
  for (int t = 0; t < r.horizon; ++t) {
    volts += std::to_string(t);
    for (int b = 0; b < r.voltage_pu.cols(); ++b) volts += "\t" + fmt_full(r.voltage_pu(t, b));
    volts += "\n";
  }
  write_text_file(dir + "/voltages.tsv", volts);

  std::string prices = "hour\tfinal_price\titerations\tconverged\n";
  for (int t = 0; t < r.horizon; ++t)
    prices += std::to_string(t) + "\t" + fmt_full(r.final_price[t]) + "\t" +
              std::to_string(r.market_iterations[t]) + "\t" +
              (r.hour_converged[t] ? "1" : "0") + "\n";
  write_text_file(dir + "/prices.tsv", prices);

  write_text_file(dir + "/market_log.tsv", artifacts.market_log_tsv);
  write_text_file(dir + "/timing.txt", fmt_full(r.wall_seconds) + "\n");
}

namespace {
MatrixXd read_hour_table(const std::string& path, int expect_rows) {
  std::istringstream in(read_text_file(path));
  std::string header;
  std::getline(in, header);
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    double hour;
    ss >> hour;
    std::vector<double> vals;
    double v;
    while (ss >> v) vals.push_back(v);
    rows.push_back(std::move(vals));
  }
  if (static_cast<int>(rows.size()) != expect_rows)
    throw DataError("case bundle: unexpected row count in " + path);
  MatrixXd m(rows.size(), rows.empty() ? 0 : rows[0].size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t k = 0; k < rows[i].size(); ++k) m(i, k) = rows[i][k];
  return m;
}
}  // namespace

CaseResult read_case_summary(const std::string& dir) {
  nlohmann::json j = nlohmann::json::parse(read_text_file(dir + "/summary.json"));
  CaseResult r;
  r.case_id = j.at("case_id").get<int>();
  r.horizon = j.at("horizon").get<int>();
  r.seed = j.at("seed").get<std::uint64_t>();
  auto fp = j.at("final_price").get<std::vector<double>>();
  r.final_price = Eigen::Map<VectorXd>(fp.data(), fp.size());
  auto mi = j.at("market_iterations").get<std::vector<int>>();
  r.market_iterations = Eigen::Map<VectorXi>(mi.data(), mi.size());
  auto dc = j.at("dopf_calls_clearing").get<std::vector<int>>();
  r.dopf_calls_clearing = Eigen::Map<VectorXi>(dc.data(), dc.size());
  auto da = j.at("dopf_calls_audit").get<std::vector<int>>();
  r.dopf_calls_audit = Eigen::Map<VectorXi>(da.data(), da.size());
  r.hour_converged = j.at("hour_converged").get<std::vector<bool>>();
  for (const auto& p : j.at("payoff")) {
    PayoffRow row;
    row.utility_rs = p.at("utility_rs").get<double>();
    row.gen_cost_rs = p.at("gen_cost_rs").get<double>();
    row.traded_kw = p.at("traded_kw").get<double>();
    row.trade_revenue_rs = p.at("trade_revenue_rs").get<double>();
    row.degradation_rs = p.at("degradation_rs").get<double>();
    row.total_rs = p.at("total_rs").get<double>();
    r.payoff.push_back(row);
  }
  r.voltage_pu = read_hour_table(dir + "/voltages.tsv", r.horizon);
  MatrixXd trades = read_hour_table(dir + "/trades.tsv", r.horizon);
  const int n_mg = static_cast<int>(r.payoff.size());
  r.traded_proposed_kw.resize(r.horizon, n_mg);
  r.traded_accepted_kw.resize(r.horizon, n_mg);
  for (int t = 0; t < r.horizon; ++t)
    for (int i = 0; i < n_mg; ++i) {
      r.traded_proposed_kw(t, i) = trades(t, 2 * i);
      r.traded_accepted_kw(t, i) = trades(t, 2 * i + 1);
    }
  try {
    r.wall_seconds = std::stod(read_text_file(dir + "/timing.txt"));
  } catch (const std::exception&) {
    r.wall_seconds = 0.0;
  }
  return r;
}

}  // namespace gridmarket
