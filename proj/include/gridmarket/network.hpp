#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gridmarket/common.hpp"

namespace gridmarket {

// Voltage bounds are stored squared (p.u.^2) since the branch-flow model works
// in squared magnitudes throughout.
struct BusSpec {
  int id = 0;
  double v_min = 0.9025;  // squared lower bound
  double v_max = 1.1025;  // squared upper bound
  double p_load_kw = 0.0;
  double q_load_kvar = 0.0;
  double p2p_cap_kw = 0.0;  // max accepted injection magnitude, 0 at non-MG buses
};

struct LineSpec {
  int id = 0;
  int from_bus = 0;  // sending end o(l)
  int to_bus = 0;    // receiving end r(l)
  double r_pu = 0.0;
  double x_pu = 0.0;
  double c_max_pu = 0.0;  // squared-current limit
};

struct GeneratorSpec {
  int bus = 0;
  double p_max_mw = 0.0;
  double p_min_mw = 0.0;
  double q_max_mvar = 0.0;
  double q_min_mvar = 0.0;
};

// Radial network, immutable after construction. Indices returned by the
// accessors are positions into buses()/lines(), not external ids.
class NetworkTopology {
 public:
  NetworkTopology() = default;  // empty placeholder; build() makes a usable one

  static NetworkTopology build(std::vector<BusSpec> buses, std::vector<LineSpec> lines,
                               std::vector<GeneratorSpec> generators, int slack_bus,
                               double s_base_mva, double v_base_kv);

  const std::vector<BusSpec>& buses() const { return buses_; }
  const std::vector<LineSpec>& lines() const { return lines_; }
  const std::vector<GeneratorSpec>& generators() const { return generators_; }
  int slack_bus() const { return slack_bus_; }
  double s_base_mva() const { return s_base_mva_; }
  double v_base_kv() const { return v_base_kv_; }

  int n_bus() const { return static_cast<int>(buses_.size()); }
  int n_line() const { return static_cast<int>(lines_.size()); }

  int bus_index(int bus_id) const;  // throws DataError on unknown id
  int slack_index() const { return bus_index(slack_bus_); }

  // parent line of a bus (index into lines()), empty for the slack bus
  std::optional<int> parent_line(int bus_id) const;
  // lines leaving a bus toward its children
  const std::vector<int>& children_lines(int bus_id) const;

  // bus indices in depth-first order from the slack (parents before children)
  const std::vector<int>& dfs_order() const { return dfs_order_; }

  // copy with per-bus accepted-injection caps replaced (bus id -> kW)
  NetworkTopology with_p2p_caps(const std::map<int, double>& caps) const;

 private:
  void index();

  std::vector<BusSpec> buses_;
  std::vector<LineSpec> lines_;
  std::vector<GeneratorSpec> generators_;
  int slack_bus_ = 0;
  double s_base_mva_ = 1.0;
  double v_base_kv_ = 1.0;

  std::map<int, int> id_to_index_;
  std::vector<int> parent_line_;               // per bus index, -1 at slack
  std::vector<std::vector<int>> child_lines_;  // per bus index
  std::vector<int> dfs_order_;
};

// Reads the tabular case format (bus/line/generator tables with a units row,
// '#' comments). Values arrive in physical units and are converted to per-unit
// here.
NetworkTopology load_network(const std::string& path);
NetworkTopology parse_network(const std::string& text, const std::string& origin = "<string>");

double to_per_unit_kw(const NetworkTopology& topo, double kw);
double from_per_unit_kw(const NetworkTopology& topo, double pu);

// machine-readable summary for the CLI export
std::string export_summary_json(const NetworkTopology& topo);

}  // namespace gridmarket
