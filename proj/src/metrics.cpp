#include "gridmarket/metrics.hpp"

#include <cmath>

namespace gridmarket {

AcceptanceRatio acceptance_ratio(const VectorXd& case_traded_kw, const VectorXd& case1_traded_kw) {
  if (case_traded_kw.size() != case1_traded_kw.size())
    throw DataError("acceptance_ratio: series lengths differ");
  AcceptanceRatio out;
  std::vector<double> vals;
  for (int t = 0; t < case_traded_kw.size(); ++t) {
    if (case1_traded_kw[t] <= 0) {
      out.skipped_hours.push_back(t);
      continue;
    }
    vals.push_back(case_traded_kw[t] / case1_traded_kw[t]);
  }
  out.ratio = Eigen::Map<VectorXd>(vals.data(), vals.size());
  return out;
}

ViolationStats voltage_violation(const MatrixXd& profiles_pu, double band_lo, double band_hi) {
  if (profiles_pu.size() == 0) throw DataError("voltage_violation: empty profiles");
  ViolationStats st;
  for (int t = 0; t < profiles_pu.rows(); ++t) {
    double worst = 0.0;
    for (int b = 0; b < profiles_pu.cols(); ++b) {
      double v = profiles_pu(t, b);
      if (v > band_hi) worst = std::max(worst, (v - band_hi) / band_hi * 100.0);
      if (v < band_lo) worst = std::max(worst, (band_lo - v) / band_lo * 100.0);
    }
    if (worst > 0) ++st.violated_hours;
    st.max_deviation_pct = std::max(st.max_deviation_pct, worst);
  }
  return st;
}

VectorXd traded_per_hour(const CaseResult& r, bool accepted) {
  const MatrixXd& m = accepted ? r.traded_accepted_kw : r.traded_proposed_kw;
  return m.cwiseAbs().rowwise().sum();
}

double total_traded_kw(const CaseResult& r) {
  // accepted values stand for the DSO-governed cases, proposals for case 1
  bool accepted = r.case_id != 1;
  return traded_per_hour(r, accepted).sum();
}

double total_payoff_rs(const CaseResult& r) {
  double s = 0;
  for (const auto& p : r.payoff) s += p.total_rs;
  return s;
}

std::string payoff_table(const std::vector<CaseResult>& results) {
  std::string out =
      "case\tmg\tutility_rs\tgen_cost_rs\ttraded_kw\ttrade_revenue_rs\tdegradation_rs\ttotal_rs\n";
  for (const auto& r : results) {
    for (std::size_t i = 0; i < r.payoff.size(); ++i) {
      const auto& p = r.payoff[i];
      double recon = p.utility_rs + p.trade_revenue_rs - p.gen_cost_rs - p.degradation_rs;
      if (std::abs(recon - p.total_rs) > 1e-6)
        throw DataError("payoff_table: decomposition does not add up");
      out += std::to_string(r.case_id) + "\t" + std::to_string(i + 1) + "\t" +
             fmt_fixed(p.utility_rs, 4) + "\t" + fmt_fixed(p.gen_cost_rs, 4) + "\t" +
             fmt_fixed(p.traded_kw, 4) + "\t" + fmt_fixed(p.trade_revenue_rs, 4) + "\t" +
             fmt_fixed(p.degradation_rs, 4) + "\t" + fmt_fixed(p.total_rs, 4) + "\n";
    }
  }
  return out;
}

}  // namespace gridmarket
