#include "gridmarket/microgrid.hpp"

#include <algorithm>
#include <cmath>

namespace gridmarket {

void MicrogridSpec::validate() const {
  if (alpha.size() == 0 || alpha.size() != beta.size() || alpha.size() != pv_profile_kw.size())
    throw DataError("microgrid " + std::to_string(id) + ": trajectory lengths inconsistent");
  for (int t = 0; t < alpha.size(); ++t) {
    if (!(alpha[t] > 0) || !(beta[t] > 0))
      throw DataError("microgrid " + std::to_string(id) + ": alpha/beta must be positive");
    if (pv_profile_kw[t] < 0)
      throw DataError("microgrid " + std::to_string(id) + ": negative pv entry");
  }
  if (a < 0 || b < 0) throw DataError("microgrid " + std::to_string(id) + ": negative cost coeff");
  if (!(0 <= load_min_kw && load_min_kw <= load_max_kw))
    throw DataError("microgrid " + std::to_string(id) + ": load bounds invalid");
  if (g_max_kw < 0) throw DataError("microgrid " + std::to_string(id) + ": negative g_max");
  if (!(bess.eta_c > 0 && bess.eta_c <= 1 && bess.eta_d > 0 && bess.eta_d <= 1))
    throw DataError("microgrid " + std::to_string(id) + ": efficiencies out of (0,1]");
  if (!(bess.soc_min_kwh < bess.soc_max_kwh) || bess.p_max_kw <= 0)
    throw DataError("microgrid " + std::to_string(id) + ": battery bounds invalid");
  if (bess.soc_init_kwh < bess.soc_min_kwh || bess.soc_init_kwh > bess.soc_max_kwh)
    throw DataError("microgrid " + std::to_string(id) + ": initial SoC out of range");
  if (lambda_d < 0) throw DataError("microgrid " + std::to_string(id) + ": negative lambda_d");
}

double MicrogridSpec::max_abs_net_kw() const {
  double pv_max = pv_profile_kw.size() ? pv_profile_kw.maxCoeff() : 0.0;
  return std::max(load_max_kw + bess.p_max_kw, g_max_kw + pv_max + bess.p_max_kw);
}

double utility(double load_kw, double alpha, double beta) {
  if (load_kw < 0) throw DataError("utility: negative load");
  if (!(beta > 0)) throw DataError("utility: beta must be positive");
  double knee = alpha / (2.0 * beta);
  if (load_kw <= knee) return alpha * load_kw - beta * load_kw * load_kw;
  return alpha * alpha / (4.0 * beta);
}

double gen_cost(double gen_kw, double a, double b) {
  if (gen_kw < 0) throw DataError("gen_cost: negative generation");
  return a * gen_kw * gen_kw + b * gen_kw;
}

double soc_step(double soc_kwh, double p_ch_kw, double p_dch_kw, const BessSpec& bess,
                double dt_h) {
  return soc_kwh + bess.eta_c * p_ch_kw * dt_h - p_dch_kw * dt_h / bess.eta_d;
}

double payoff(const MgDecision& d, double price, const MicrogridSpec& spec, int hour) {
  if (hour < 0 || hour >= spec.alpha.size()) throw DataError("payoff: hour out of range");
  double net = d.gen_kw + d.ren_kw + d.p_dch_kw - d.load_kw - d.p_ch_kw;
  if (std::abs(net - d.p_net_kw) > 1e-6 || d.p_sell_kw * d.p_buy_kw > 1e-9 ||
      std::abs((d.p_sell_kw - d.p_buy_kw) - d.p_net_kw) > 1e-6)
    throw DataError("payoff: decision violates the net-exchange invariants");
  return utility(d.load_kw, spec.alpha[hour], spec.beta[hour]) +
         price * (d.p_sell_kw - d.p_buy_kw) - gen_cost(d.gen_kw, spec.a, spec.b) -
         spec.lambda_d * (d.p_dch_kw + d.p_ch_kw);
}

namespace {

constexpr double kTieEps = 1e-11;

struct CoordSetup {
  // branch-specific battery interval [pb_lo, pb_hi], one side of zero
  double pb_lo, pb_hi;
  double deg_slope;  // degradation cost per unit of p_b on this branch (signed)
  double alpha, beta, a, b, gmax, lmin, lmax, ravail, lambda_d, price;
};

struct Dispatch {
  double l, g, r, pb;
  // tie flags mark coordinates sitting exactly on their threshold
  bool tie_l, tie_g, tie_r, tie_pb;
};

// coordinate best responses at marginal value w; ties expose their intervals
Dispatch dispatch_at(const CoordSetup& s, double w) {
  Dispatch d{};
  // load: maximize U(L) - w*L
  if (w < -kTieEps) {
    d.l = s.lmax;
  } else if (w > kTieEps) {
    d.l = std::clamp((s.alpha - w) / (2.0 * s.beta), s.lmin, s.lmax);
  } else {
    d.tie_l = true;  // flat utility beyond the knee
    d.l = std::clamp(s.alpha / (2.0 * s.beta), s.lmin, s.lmax);
  }
  // generation
  if (s.a > 0) {
    d.g = std::clamp((w - s.b) / (2.0 * s.a), 0.0, s.gmax);
  } else if (w > s.b + kTieEps) {
    d.g = s.gmax;
  } else if (w < s.b - kTieEps) {
    d.g = 0.0;
  } else {
    d.tie_g = true;
    d.g = 0.0;
  }
  // renewable
  if (w > kTieEps) {
    d.r = s.ravail;
  } else if (w < -kTieEps) {
    d.r = 0.0;
  } else {
    d.tie_r = true;
    d.r = 0.0;
  }
  // battery, single signed interval; slope of the payoff in p_b is w - deg_slope
  double slope = w - s.deg_slope;
  if (slope > kTieEps) {
    d.pb = s.pb_hi;
  } else if (slope < -kTieEps) {
    d.pb = s.pb_lo;
  } else {
    d.tie_pb = true;
    d.pb = s.pb_lo;
  }
  return d;
}

double z_of(const Dispatch& d) { return d.g + d.r + d.pb - d.l; }

// tie intervals give [z_min, z_max] attainable at this w
void z_range_at(const CoordSetup& s, double w, double& zlo, double& zhi) {
  Dispatch d = dispatch_at(s, w);
  zlo = z_of(d);
  zhi = zlo;
  if (d.tie_l) {
    double l_hi = s.lmax;
    double l_lo = d.l;
    zlo -= (l_hi - l_lo);  // larger load lowers z
  }
  if (d.tie_g) zhi += s.gmax;
  if (d.tie_r) zhi += s.ravail;
  if (d.tie_pb) zhi += (s.pb_hi - s.pb_lo);
}

struct BranchResult {
  double l, g, r, pb, z;
  double objective;  // with the linearized penalty term
};

double sep_value(const CoordSetup& s, double l, double g, double r, double pb) {
  double u = utility(l, s.alpha, s.beta);
  double c = gen_cost(g, s.a, s.b);
  return u - c - s.lambda_d * std::abs(pb) + s.price * (g + r + pb - l);
}

// exact maximizer of sep(u) + psi(z(u)) over the branch box, with psi an
// affine-sloped quadratic: psi(z) = -mu*(e0 + (sigma-1)*(z - z0))^2
BranchResult solve_branch(const CoordSetup& s, double mu, double e0, double sigma, double z0,
                          double zb_lo, double zb_hi) {
  // attainable range of z on this branch
  double z_min = 0.0 + 0.0 + s.pb_lo - s.lmax;
  double z_max = s.gmax + s.ravail + s.pb_hi - s.lmin;
  double w_lo_cl = std::max(z_min, zb_lo);
  double w_hi_cl = std::min(z_max, zb_hi);
  if (w_lo_cl > w_hi_cl) throw SolverError("solve_local: imposed net bounds are unreachable");

  double coef = mu * (sigma - 1.0);
  double slope = 2.0 * coef * (sigma - 1.0);  // -d2psi/dz2 >= 0
  auto psi_prime = [&](double z) { return -2.0 * coef * (e0 + (sigma - 1.0) * (z - z0)); };
  auto psi = [&](double z) {
    double e = e0 + (sigma - 1.0) * (z - z0);
    return -mu * e * e;
  };

  // marginal value of net export at the optimum: omega = price + psi'(z*)
  double omega;
  double z_star;
  if (slope <= 1e-300) {
    omega = s.price + psi_prime(0.0);  // psi' constant here
    double zlo, zhi;
    z_range_at(s, omega, zlo, zhi);
    z_star = std::clamp(std::clamp(0.0, zlo, zhi), w_lo_cl, w_hi_cl);
  } else {
    // F(w) = w - price - psi'(z(w)) is increasing; bracket then bisect
    auto F = [&](double w) {
      double zlo, zhi;
      z_range_at(s, w, zlo, zhi);
      double z = std::clamp(0.5 * (zlo + zhi), w_lo_cl, w_hi_cl);
      return w - s.price - psi_prime(z);
    };
    double lo = std::min({0.0, -s.lambda_d, s.b, s.alpha - 2.0 * s.beta * s.lmax,
                          s.price + psi_prime(w_hi_cl)}) -
                1.0;
    double hi = std::max({0.0, s.lambda_d, s.b + 2.0 * s.a * s.gmax, s.alpha,
                          s.price + psi_prime(w_lo_cl)}) +
                1.0;
    for (int k = 0; k < 60 && F(lo) > 0; ++k) lo = lo * 2.0 - 1.0;
    for (int k = 0; k < 60 && F(hi) < 0; ++k) hi = hi * 2.0 + 1.0;
    for (int k = 0; k < 200 && (hi - lo) > 1e-14 * (1.0 + std::abs(hi)); ++k) {
      double mid = 0.5 * (lo + hi);
      (F(mid) < 0 ? lo : hi) = mid;
    }
    omega = 0.5 * (lo + hi);
    // z solving omega = price + psi'(z), clamped into what the branch attains
    double z_tau = z0 + (s.price - omega - 2.0 * coef * e0) / slope;
    double zlo, zhi;
    z_range_at(s, omega, zlo, zhi);
    z_star = std::clamp(std::clamp(z_tau, zlo, zhi), w_lo_cl, w_hi_cl);
  }

  // dispatch multiplier reproducing z_star (may differ from omega when a net
  // bound is active); z(w) is monotone, bisect on it
  double lo = omega - 1.0, hi = omega + 1.0;
  auto z_mid = [&](double w) {
    double zlo, zhi;
    z_range_at(s, w, zlo, zhi);
    return 0.5 * (zlo + zhi);
  };
  for (int k = 0; k < 60 && z_mid(lo) > z_star; ++k) lo = lo * 2.0 - 1.0;
  for (int k = 0; k < 60 && z_mid(hi) < z_star; ++k) hi = hi * 2.0 + 1.0;
  for (int k = 0; k < 200 && (hi - lo) > 1e-14 * (1.0 + std::abs(hi)); ++k) {
    double mid = 0.5 * (lo + hi);
    (z_mid(mid) < z_star ? lo : hi) = mid;
  }
  double wd = 0.5 * (lo + hi);

  Dispatch d = dispatch_at(s, wd);
  // close the remaining gap with coordinates that have room, fixed order
  double resid = z_star - z_of(d);
  auto push = [&](double& var, double vlo, double vhi, double sign) {
    double want = var + sign * resid;
    double clamped = std::clamp(want, vlo, vhi);
    resid -= sign * (clamped - var);
    var = clamped;
  };
  push(d.r, 0.0, s.ravail, +1.0);
  push(d.pb, s.pb_lo, s.pb_hi, +1.0);
  push(d.g, 0.0, s.gmax, +1.0);
  push(d.l, s.lmin, s.lmax, -1.0);
  if (std::abs(resid) > 1e-6 * (1.0 + std::abs(z_star)))
    throw SolverError("solve_local: dispatch could not match the net target");

  BranchResult out;
  out.l = d.l;
  out.g = d.g;
  out.r = d.r;
  out.pb = d.pb;
  out.z = z_of(d);
  out.objective = sep_value(s, d.l, d.g, d.r, d.pb) + psi(out.z);
  return out;
}

}  // namespace

MgDecision solve_local(const MicrogridSpec& spec, double price, int hour, double soc_kwh,
                       const ResponsePenalty* penalty, const NetBounds* bounds, double dt_h) {
  spec.validate();
  if (hour < 0 || hour >= spec.alpha.size()) throw DataError("solve_local: hour out of range");
  if (price < 0) throw DataError("solve_local: negative price");
  if (soc_kwh < spec.bess.soc_min_kwh - 1e-9 || soc_kwh > spec.bess.soc_max_kwh + 1e-9)
    throw DataError("solve_local: SoC out of range");

  double dch_cap = std::max(
      0.0, std::min(spec.bess.p_max_kw, (soc_kwh - spec.bess.soc_min_kwh) * spec.bess.eta_d / dt_h));
  double ch_cap = std::max(0.0, std::min(spec.bess.p_max_kw,
                                         (spec.bess.soc_max_kwh - soc_kwh) / (spec.bess.eta_c * dt_h)));

  CoordSetup base{};
  base.alpha = spec.alpha[hour];
  base.beta = spec.beta[hour];
  base.a = spec.a;
  base.b = spec.b;
  base.gmax = spec.g_max_kw;
  base.lmin = spec.load_min_kw;
  base.lmax = spec.load_max_kw;
  base.ravail = spec.pv_profile_kw[hour];
  base.lambda_d = spec.lambda_d;
  base.price = price;

  double zb_lo = bounds ? bounds->net_min_kw : -1e30;
  double zb_hi = bounds ? bounds->net_max_kw : 1e30;

  double mu = penalty ? penalty->mu : 0.0;
  double z_lin = penalty ? penalty->warm_start_z : 0.0;
  int majors = penalty && mu > 0 ? std::max(1, penalty->max_major_iters) : 1;

  BranchResult best{};
  double prev_step = 0.0;
  for (int major = 0; major < majors; ++major) {
    double f0 = 0.0, sigma = 0.0, e0 = 0.0;
    if (penalty && mu > 0) {
      f0 = penalty->value(z_lin);
      sigma = penalty->grad(z_lin);
      e0 = f0 - z_lin;
    }
    // discharge branch
    CoordSetup sd = base;
    sd.pb_lo = 0.0;
    sd.pb_hi = dch_cap;
    sd.deg_slope = spec.lambda_d;
    BranchResult rd = solve_branch(sd, mu, e0, sigma, z_lin, zb_lo, zb_hi);
    // charge branch
    CoordSetup sc = base;
    sc.pb_lo = -ch_cap;
    sc.pb_hi = 0.0;
    sc.deg_slope = -spec.lambda_d;
    BranchResult rc = solve_branch(sc, mu, e0, sigma, z_lin, zb_lo, zb_hi);
    best = rd.objective >= rc.objective ? rd : rc;

    if (!(penalty && mu > 0)) break;
    double step = best.z - z_lin;
    if (std::abs(step) < 1e-8 * (1.0 + std::abs(best.z))) break;
    if (major >= 2 && std::abs(step) > 0.9 * std::abs(prev_step)) step *= 0.5;  // damp cycling
    z_lin += step;
    prev_step = step;
  }

  MgDecision d;
  d.load_kw = best.l;
  d.gen_kw = best.g;
  d.ren_kw = best.r;
  d.p_ch_kw = std::max(-best.pb, 0.0);
  d.p_dch_kw = std::max(best.pb, 0.0);
  d.p_net_kw = best.g + best.r + best.pb - best.l;
  d.soc_next_kwh = soc_step(soc_kwh, d.p_ch_kw, d.p_dch_kw, spec.bess, dt_h);
  const double tol = 1e-9;
  if (d.p_net_kw > tol) {
    d.role = TradeRole::Seller;
    d.p_sell_kw = d.p_net_kw;
  } else if (d.p_net_kw < -tol) {
    d.role = TradeRole::Buyer;
    d.p_buy_kw = -d.p_net_kw;
  } else {
    d.role = TradeRole::Neutral;
  }
  return d;
}

}  // namespace gridmarket
