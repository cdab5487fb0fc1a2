#include "gridmarket/network.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <sstream>

namespace gridmarket {

namespace {

std::vector<std::string> tokenize(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream ss(line);
  std::string tok;
  while (ss >> tok) out.push_back(tok);
  return out;
}

double parse_num(const std::string& s, const std::string& ctx) {
  try {
    std::size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError("case file: bad number '" + s + "' in " + ctx);
  }
}

}  // namespace

NetworkTopology NetworkTopology::build(std::vector<BusSpec> buses, std::vector<LineSpec> lines,
                                       std::vector<GeneratorSpec> generators, int slack_bus,
                                       double s_base_mva, double v_base_kv) {
  NetworkTopology t;
  t.buses_ = std::move(buses);
  t.lines_ = std::move(lines);
  t.generators_ = std::move(generators);
  t.slack_bus_ = slack_bus;
  t.s_base_mva_ = s_base_mva;
  t.v_base_kv_ = v_base_kv;

  if (t.s_base_mva_ <= 0) throw DataError("network: s_base must be positive");
  if (t.v_base_kv_ <= 0) throw DataError("network: v_base must be positive");
  if (t.buses_.empty()) throw DataError("network: no buses");

  for (const auto& b : t.buses_) {
    if (!(0 < b.v_min && b.v_min < b.v_max))
      throw DataError("network: bus " + std::to_string(b.id) + " voltage bounds invalid");
    if (b.p_load_kw < 0 || b.q_load_kvar < 0)
      throw DataError("network: bus " + std::to_string(b.id) + " negative load");
    if (b.p2p_cap_kw < 0)
      throw DataError("network: bus " + std::to_string(b.id) + " negative p2p cap");
  }
  for (const auto& l : t.lines_) {
    if (l.from_bus == l.to_bus)
      throw DataError("network: line " + std::to_string(l.id) + " is a self-loop");
    if (l.r_pu < 0 || l.x_pu < 0 || l.c_max_pu <= 0)
      throw DataError("network: line " + std::to_string(l.id) + " impedance/limit invalid");
  }
  for (const auto& g : t.generators_) {
    if (g.p_min_mw > g.p_max_mw || g.q_min_mvar > g.q_max_mvar)
      throw DataError("network: generator at bus " + std::to_string(g.bus) + " bounds invalid");
  }

  t.index();
  return t;
}

void NetworkTopology::index() {
  id_to_index_.clear();
  for (int i = 0; i < n_bus(); ++i) {
    if (!id_to_index_.emplace(buses_[i].id, i).second)
      throw DataError("network: duplicate bus id " + std::to_string(buses_[i].id));
  }
  if (!id_to_index_.count(slack_bus_))
    throw DataError("network: missing slack bus " + std::to_string(slack_bus_));

  if (n_line() != n_bus() - 1)
    throw DataError("network: not radial, |lines| = " + std::to_string(n_line()) +
                    " but |buses| - 1 = " + std::to_string(n_bus() - 1));

  parent_line_.assign(n_bus(), -1);
  child_lines_.assign(n_bus(), {});
  // adjacency over undirected incidences; orientation fixed by DFS from slack
  std::vector<std::vector<int>> incident(n_bus());
  for (int li = 0; li < n_line(); ++li) {
    auto& l = lines_[li];
    if (!id_to_index_.count(l.from_bus) || !id_to_index_.count(l.to_bus))
      throw DataError("network: line " + std::to_string(l.id) + " references unknown bus");
    incident[id_to_index_[l.from_bus]].push_back(li);
    incident[id_to_index_[l.to_bus]].push_back(li);
  }

  dfs_order_.clear();
  std::vector<char> seen(n_bus(), 0);
  std::vector<int> stack = {slack_index()};
  seen[slack_index()] = 1;
  while (!stack.empty()) {
    int n = stack.back();
    stack.pop_back();
    dfs_order_.push_back(n);
    for (int li : incident[n]) {
      auto& l = lines_[li];
      int other = id_to_index_[l.from_bus] == n ? id_to_index_[l.to_bus] : id_to_index_[l.from_bus];
      if (seen[other]) continue;
      seen[other] = 1;
      // orient the line so from_bus is the parent side
      if (id_to_index_[l.from_bus] != n) std::swap(l.from_bus, l.to_bus);
      parent_line_[other] = li;
      child_lines_[n].push_back(li);
      stack.push_back(other);
    }
  }
  if (static_cast<int>(dfs_order_.size()) != n_bus()) {
    int missing = 0;
    for (int i = 0; i < n_bus(); ++i)
      if (!seen[i]) ++missing;
    throw DataError("network: disconnected, " + std::to_string(missing) +
                    " bus(es) unreachable from slack");
  }

  bool slack_has_gen = false;
  for (const auto& g : generators_) {
    if (!id_to_index_.count(g.bus))
      throw DataError("network: generator references unknown bus " + std::to_string(g.bus));
    if (g.bus == slack_bus_) slack_has_gen = true;
  }
  if (!slack_has_gen) throw DataError("network: slack bus hosts no generator");
}

int NetworkTopology::bus_index(int bus_id) const {
  auto it = id_to_index_.find(bus_id);
  if (it == id_to_index_.end()) throw DataError("unknown bus id " + std::to_string(bus_id));
  return it->second;
}

std::optional<int> NetworkTopology::parent_line(int bus_id) const {
  int p = parent_line_[bus_index(bus_id)];
  if (p < 0) return std::nullopt;
  return p;
}

const std::vector<int>& NetworkTopology::children_lines(int bus_id) const {
  return child_lines_[bus_index(bus_id)];
}

NetworkTopology NetworkTopology::with_p2p_caps(const std::map<int, double>& caps) const {
  std::vector<BusSpec> buses = buses_;
  for (auto& b : buses) {
    auto it = caps.find(b.id);
    if (it != caps.end()) b.p2p_cap_kw = it->second;
  }
  return build(std::move(buses), lines_, generators_, slack_bus_, s_base_mva_, v_base_kv_);
}

NetworkTopology parse_network(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  std::string section;
  int lineno = 0;

  double s_base = 0, v_base = 0;
  int slack = -1;
  std::vector<BusSpec> buses;
  std::vector<LineSpec> lines;
  std::vector<GeneratorSpec> gens;
  // raw line rows pending per-unit conversion
  struct RawLine {
    int id, from, to;
    double r_ohm, x_ohm, imax_a;
  };
  std::vector<RawLine> raw_lines;

  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    auto toks = tokenize(line);
    if (toks.empty()) continue;
    std::string ctx = origin + ":" + std::to_string(lineno);

    if (toks[0].front() == '[') {
      section = toks[0];
      continue;
    }
    if (section == "[system]") {
      if (toks.size() != 3) throw DataError("case file: bad system row at " + ctx);
      if (toks[0] == "s_base")
        s_base = parse_num(toks[2], ctx);
      else if (toks[0] == "v_base")
        v_base = parse_num(toks[2], ctx);
      else if (toks[0] == "slack")
        slack = static_cast<int>(parse_num(toks[2], ctx));
      else
        throw DataError("case file: unknown system key '" + toks[0] + "' at " + ctx);
    } else if (section == "[buses]") {
      if (toks.size() != 6) throw DataError("case file: bus row needs 6 columns at " + ctx);
      BusSpec b;
      b.id = static_cast<int>(parse_num(toks[0], ctx));
      double vmin = parse_num(toks[1], ctx), vmax = parse_num(toks[2], ctx);
      b.v_min = vmin * vmin;
      b.v_max = vmax * vmax;
      b.p_load_kw = parse_num(toks[3], ctx);
      b.q_load_kvar = parse_num(toks[4], ctx);
      b.p2p_cap_kw = parse_num(toks[5], ctx);
      buses.push_back(b);
    } else if (section == "[lines]") {
      if (toks.size() != 6) throw DataError("case file: line row needs 6 columns at " + ctx);
      RawLine r;
      r.id = static_cast<int>(parse_num(toks[0], ctx));
      r.from = static_cast<int>(parse_num(toks[1], ctx));
      r.to = static_cast<int>(parse_num(toks[2], ctx));
      r.r_ohm = parse_num(toks[3], ctx);
      r.x_ohm = parse_num(toks[4], ctx);
      r.imax_a = parse_num(toks[5], ctx);
      raw_lines.push_back(r);
    } else if (section == "[generators]") {
      if (toks.size() != 5) throw DataError("case file: generator row needs 5 columns at " + ctx);
      GeneratorSpec g;
      g.bus = static_cast<int>(parse_num(toks[0], ctx));
      g.p_max_mw = parse_num(toks[1], ctx);
      g.p_min_mw = parse_num(toks[2], ctx);
      g.q_max_mvar = parse_num(toks[3], ctx);
      g.q_min_mvar = parse_num(toks[4], ctx);
      gens.push_back(g);
    } else {
      throw DataError("case file: data outside a known section at " + ctx);
    }
  }

  if (s_base <= 0 || v_base <= 0 || slack < 0)
    throw DataError("case file: [system] must define s_base, v_base and slack (" + origin + ")");

  double z_base_ohm = v_base * v_base / s_base;
  double i_base_a = s_base / v_base * 1000.0;
  for (const auto& r : raw_lines) {
    LineSpec l;
    l.id = r.id;
    l.from_bus = r.from;
    l.to_bus = r.to;
    l.r_pu = r.r_ohm / z_base_ohm;
    l.x_pu = r.x_ohm / z_base_ohm;
    double i_pu = r.imax_a / i_base_a;
    l.c_max_pu = i_pu * i_pu;
    lines.push_back(l);
  }

  return NetworkTopology::build(std::move(buses), std::move(lines), std::move(gens), slack, s_base,
                                v_base);
}

NetworkTopology load_network(const std::string& path) {
  return parse_network(read_text_file(path), path);
}

double to_per_unit_kw(const NetworkTopology& topo, double kw) {
  return kw / (topo.s_base_mva() * 1000.0);
}

double from_per_unit_kw(const NetworkTopology& topo, double pu) {
  return pu * (topo.s_base_mva() * 1000.0);
}

std::string export_summary_json(const NetworkTopology& topo) {
  nlohmann::json j;
  j["s_base_mva"] = topo.s_base_mva();
  j["v_base_kv"] = topo.v_base_kv();
  j["slack_bus"] = topo.slack_bus();
  j["n_bus"] = topo.n_bus();
  j["n_line"] = topo.n_line();
  double pl = 0, ql = 0;
  nlohmann::json jb = nlohmann::json::array();
  for (const auto& b : topo.buses()) {
    pl += b.p_load_kw;
    ql += b.q_load_kvar;
    jb.push_back({{"id", b.id},
                  {"v_min_pu", std::sqrt(b.v_min)},
                  {"v_max_pu", std::sqrt(b.v_max)},
                  {"p_load_kw", b.p_load_kw},
                  {"q_load_kvar", b.q_load_kvar},
                  {"p2p_cap_kw", b.p2p_cap_kw}});
  }
  j["total_p_load_kw"] = pl;
  j["total_q_load_kvar"] = ql;
  j["buses"] = jb;
  nlohmann::json jl = nlohmann::json::array();
  for (const auto& l : topo.lines())
    jl.push_back({{"id", l.id},
                  {"from", l.from_bus},
                  {"to", l.to_bus},
                  {"r_pu", l.r_pu},
                  {"x_pu", l.x_pu},
                  {"c_max_pu", l.c_max_pu}});
  j["lines"] = jl;
  nlohmann::json jg = nlohmann::json::array();
  for (const auto& g : topo.generators())
    jg.push_back({{"bus", g.bus},
                  {"p_max_mw", g.p_max_mw},
                  {"p_min_mw", g.p_min_mw},
                  {"q_max_mvar", g.q_max_mvar},
                  {"q_min_mvar", g.q_min_mvar}});
  j["generators"] = jg;
  return j.dump(2);
}

}  // namespace gridmarket
