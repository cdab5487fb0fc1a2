#include "gridmarket/config.hpp"

#include <filesystem>
#include <sstream>

namespace gridmarket {

namespace {

struct IniFile {
  std::map<std::string, std::map<std::string, std::string>> sections;
  std::string origin;

  bool has(const std::string& sec, const std::string& key) const {
    auto s = sections.find(sec);
    return s != sections.end() && s->second.count(key) > 0;
  }
  const std::string& raw(const std::string& sec, const std::string& key) const {
    auto s = sections.find(sec);
    if (s == sections.end() || !s->second.count(key))
      throw DataError(origin + ": missing key [" + sec + "] " + key);
    return s->second.at(key);
  }
  double num(const std::string& sec, const std::string& key) const {
    try {
      return std::stod(raw(sec, key));
    } catch (const std::exception&) {
      throw DataError(origin + ": bad number for [" + sec + "] " + key);
    }
  }
  double num_or(const std::string& sec, const std::string& key, double dflt) const {
    return has(sec, key) ? num(sec, key) : dflt;
  }
  long long integer(const std::string& sec, const std::string& key) const {
    return static_cast<long long>(num(sec, key));
  }
  VectorXd list(const std::string& sec, const std::string& key) const {
    std::string s = raw(sec, key);
    for (auto& ch : s)
      if (ch == ',') ch = ' ';
    std::istringstream ss(s);
    std::vector<double> vals;
    double v;
    while (ss >> v) vals.push_back(v);
    if (vals.empty()) throw DataError(origin + ": empty list for [" + sec + "] " + key);
    return Eigen::Map<VectorXd>(vals.data(), vals.size());
  }
  Range range(const std::string& sec, const std::string& key) const {
    VectorXd v = list(sec, key);
    if (v.size() != 2) throw DataError(origin + ": range [" + sec + "] " + key + " needs lo,hi");
    return {v[0], v[1]};
  }
};

std::string trim(const std::string& s) {
  auto a = s.find_first_not_of(" \t\r\n");
  auto b = s.find_last_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  return s.substr(a, b - a + 1);
}

IniFile parse_ini(const std::string& path) {
  IniFile ini;
  ini.origin = path;
  std::istringstream in(read_text_file(path));
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find_first_of("#;");
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw DataError(path + ":" + std::to_string(lineno) + ": unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw DataError(path + ":" + std::to_string(lineno) + ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    std::string val = trim(line.substr(eq + 1));
    ini.sections[section][key] = val;
  }
  return ini;
}

}  // namespace

AppConfig load_config(const std::string& path) {
  IniFile ini = parse_ini(path);
  AppConfig cfg;

  std::filesystem::path base = std::filesystem::path(path).parent_path();
  std::filesystem::path cf = ini.raw("network", "case_file");
  cfg.case_file = cf.is_absolute() ? cf.string() : (base / cf).string();

  cfg.market.xi = ini.num_or("market", "xi", cfg.market.xi);
  cfg.market.epsilon = ini.num_or("market", "epsilon", cfg.market.epsilon);
  cfg.market.k_max = static_cast<int>(ini.num_or("market", "k_max", cfg.market.k_max));
  cfg.market.pi_init = ini.num_or("market", "pi_init", cfg.market.pi_init);

  cfg.dopf.c_ls = ini.num_or("dopf", "c_ls", cfg.dopf.c_ls);
  cfg.dopf.lambda_corr = ini.num_or("dopf", "lambda_corr", cfg.dopf.lambda_corr);
  cfg.dopf.solver_tol = ini.num_or("dopf", "solver_tol", cfg.dopf.solver_tol);

  cfg.horizon = static_cast<int>(ini.num_or("harness", "horizon", 24));
  cfg.pf = ini.num_or("harness", "pf", cfg.pf);
  cfg.load_scale = ini.num_or("harness", "load_scale", cfg.load_scale);
  cfg.mu = ini.num_or("harness", "mu", cfg.mu);
  cfg.outer_rounds = static_cast<int>(ini.num_or("harness", "outer_rounds", cfg.outer_rounds));
  cfg.seed = static_cast<std::uint64_t>(ini.num_or("harness", "seed", 1));
  if (ini.has("harness", "load_shape")) {
    cfg.load_shape = ini.list("harness", "load_shape");
    if (cfg.load_shape.size() != cfg.horizon)
      throw DataError(path + ": load_shape length differs from the horizon");
  }
  if (ini.has("harness", "audit_gen_bus")) {
    int bus = static_cast<int>(ini.num("harness", "audit_gen_bus"));
    cfg.audit_gen_p_mw[bus] = ini.num("harness", "audit_gen_p_mw");
    cfg.audit_gen_q_mvar[bus] = ini.num_or("harness", "audit_gen_q_mvar", 0.0);
  }

  if (ini.sections.count("sampling")) {
    cfg.ranges.c_ls = ini.range("sampling", "c_ls");
    cfg.ranges.lambda_corr = ini.range("sampling", "lambda_corr");
    cfg.ranges.load_scale = ini.range("sampling", "load_scale");
    cfg.ranges.pf = ini.range("sampling", "pf");
    cfg.ranges.solar_pct = ini.range("sampling", "solar_pct");
  }

  cfg.train.learning_rate = ini.num_or("train", "learning_rate", cfg.train.learning_rate);
  cfg.train.batch_size = static_cast<int>(ini.num_or("train", "batch_size", cfg.train.batch_size));
  cfg.train.epochs = static_cast<int>(ini.num_or("train", "epochs", cfg.train.epochs));
  cfg.train.seed = static_cast<std::uint64_t>(ini.num_or("train", "seed", cfg.train.seed));
  cfg.train.val_fraction = ini.num_or("train", "val_fraction", cfg.train.val_fraction);
  cfg.train.clip_norm = ini.num_or("train", "clip_norm", cfg.train.clip_norm);
  cfg.train.patience = static_cast<int>(ini.num_or("train", "patience", cfg.train.patience));

  cfg.p2p_cap_margin = ini.num_or("p2p", "cap_margin", cfg.p2p_cap_margin);

  VectorXd pv_shape;
  if (ini.has("harness", "pv_shape")) {
    pv_shape = ini.list("harness", "pv_shape");
    if (pv_shape.size() != cfg.horizon)
      throw DataError(path + ": pv_shape length differs from the horizon");
  } else {
    pv_shape = VectorXd::Zero(cfg.horizon);
  }

  for (int k = 1;; ++k) {
    std::string sec = "mg" + std::to_string(k);
    if (!ini.sections.count(sec)) break;
    MicrogridSpec mg;
    mg.id = k;
    mg.bus = static_cast<int>(ini.num(sec, "bus"));
    mg.a = ini.num(sec, "a");
    mg.b = ini.num(sec, "b");
    mg.g_max_kw = ini.num(sec, "g_max");
    mg.load_min_kw = ini.num(sec, "load_min");
    mg.load_max_kw = ini.num(sec, "load_max");
    mg.lambda_d = ini.num_or(sec, "lambda_d", 0.05);
    mg.alpha = ini.list(sec, "alpha");
    mg.beta = ini.list(sec, "beta");
    if (mg.alpha.size() != cfg.horizon || mg.beta.size() != cfg.horizon)
      throw DataError(path + ": " + sec + " alpha/beta length differs from the horizon");
    double pv_cap = ini.num_or(sec, "pv_cap", 10.0);
    mg.pv_profile_kw = pv_shape * pv_cap;
    mg.bess.p_max_kw = ini.num_or(sec, "bess_p_max", 10.0);
    mg.bess.soc_min_kwh = ini.num_or(sec, "soc_min", 4.0);
    mg.bess.soc_max_kwh = ini.num_or(sec, "soc_max", 20.0);
    mg.bess.eta_c = ini.num_or(sec, "eta_c", 0.95);
    mg.bess.eta_d = ini.num_or(sec, "eta_d", 0.95);
    mg.bess.soc_init_kwh = ini.num_or(sec, "soc_init", 12.0);
    mg.validate();
    cfg.mgs.push_back(std::move(mg));
  }
  if (cfg.mgs.empty()) throw DataError(path + ": no [mgN] sections found");
  return cfg;
}

NetworkTopology build_topology(const AppConfig& cfg) {
  NetworkTopology topo = load_network(cfg.case_file);
  std::map<int, double> caps;
  for (const auto& mg : cfg.mgs) caps[mg.bus] = cfg.p2p_cap_margin * mg.max_abs_net_kw();
  return topo.with_p2p_caps(caps);
}

ScenarioBase to_scenario_base(const AppConfig& cfg) {
  ScenarioBase base{build_topology(cfg), cfg.mgs, cfg.market, 1e-5};
  return base;
}

CaseConfig to_case_config(const AppConfig& cfg, int case_id, const SurrogateModel* model) {
  CaseConfig cc;
  cc.case_id = case_id;
  cc.horizon = cfg.horizon;
  cc.topo = build_topology(cfg);
  cc.mgs = cfg.mgs;
  cc.market = cfg.market;
  cc.dopf = cfg.dopf;
  cc.pf = cfg.pf;
  cc.load_scale = cfg.load_scale;
  cc.load_shape = cfg.load_shape;
  cc.audit_gen_p_mw = cfg.audit_gen_p_mw;
  cc.audit_gen_q_mvar = cfg.audit_gen_q_mvar;
  cc.model = model;
  cc.mu = cfg.mu;
  cc.outer_rounds = cfg.outer_rounds;
  cc.seed = cfg.seed;
  return cc;
}

}  // namespace gridmarket
