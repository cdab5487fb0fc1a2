#include <doctest.h>

#include "gridmarket/network.hpp"

using namespace gridmarket;

namespace {
const std::string kCase = std::string(GM_DATA_DIR) + "/ieee33.case";

std::string two_bus_case() {
  return R"([system]
s_base MVA 1.0
v_base kV 12.66
slack  id  1
[buses]
1 0.95 1.05 0 0 0
2 0.95 1.05 500 300 0
[lines]
1 1 2 1.6032 1.6032 300
[generators]
1 6.0 0.0 4.0 -4.0
)";
}
}  // namespace

TEST_CASE("ieee33 case file loads and validates") {
  NetworkTopology topo = load_network(kCase);
  CHECK(topo.n_bus() == 33);
  CHECK(topo.n_line() == 32);
  CHECK(topo.slack_bus() == 1);
  CHECK(topo.generators().size() == 2);
  // substation and mid-feeder generator limits
  CHECK(topo.generators()[0].bus == 1);
  CHECK(topo.generators()[0].p_max_mw == doctest::Approx(6.0));
  CHECK(topo.generators()[0].q_min_mvar == doctest::Approx(-4.0));
  CHECK(topo.generators()[1].bus == 18);
  CHECK(topo.generators()[1].p_max_mw == doctest::Approx(1.5));
  double pl = 0;
  for (const auto& b : topo.buses()) pl += b.p_load_kw;
  CHECK(pl == doctest::Approx(3715.0));
}

TEST_CASE("two-bus file is the minimal radial tree") {
  NetworkTopology topo = parse_network(two_bus_case());
  CHECK(topo.n_bus() == 2);
  CHECK(topo.n_line() == topo.n_bus() - 1);
}

TEST_CASE("removing a line is flagged as disconnected") {
  std::string text = read_text_file(kCase);
  auto pos = text.find("\n 2    2     3");
  REQUIRE(pos != std::string::npos);
  text.insert(pos + 1, "#");
  CHECK_THROWS_WITH_AS(parse_network(text), doctest::Contains("radial"), DataError);
}

TEST_CASE("missing slack generator rejected") {
  std::string text = two_bus_case();
  auto pos = text.find("1 6.0");
  text = text.substr(0, pos);
  CHECK_THROWS_WITH_AS(parse_network(text), doctest::Contains("slack"), DataError);
}

TEST_CASE("parent and children follow the feeder layout") {
  NetworkTopology topo = load_network(kCase);
  CHECK(!topo.parent_line(1).has_value());
  // bus 2 feeds bus 3 and the 19..22 lateral
  auto kids = topo.children_lines(2);
  REQUIRE(kids.size() == 2);
  std::vector<int> to;
  for (int li : kids) to.push_back(topo.lines()[li].to_bus);
  CHECK(((to[0] == 3 && to[1] == 19) || (to[0] == 19 && to[1] == 3)));
  CHECK(topo.children_lines(18).empty());
  CHECK(topo.children_lines(33).empty());
  CHECK_THROWS_AS(topo.children_lines(99), DataError);
  // parent/children consistency across every non-slack bus
  for (const auto& b : topo.buses()) {
    if (b.id == topo.slack_bus()) continue;
    auto par = topo.parent_line(b.id);
    REQUIRE(par.has_value());
    CHECK(topo.lines()[*par].to_bus == b.id);
  }
}

TEST_CASE("dfs from the slack visits every bus once") {
  NetworkTopology topo = load_network(kCase);
  auto order = topo.dfs_order();
  CHECK(order.size() == 33);
  std::vector<char> seen(33, 0);
  for (int i : order) {
    CHECK(!seen[i]);
    seen[i] = 1;
  }
}

TEST_CASE("per-unit conversion and round trip") {
  NetworkTopology topo = load_network(kCase);
  CHECK(to_per_unit_kw(topo, 1000.0) == doctest::Approx(1.0));
  CHECK(to_per_unit_kw(topo, 0.0) == 0.0);
  CHECK(to_per_unit_kw(topo, 52.0) == doctest::Approx(0.052));
  for (double x = 1e-3; x < 1e6; x *= 10.0) {
    double rt = from_per_unit_kw(topo, to_per_unit_kw(topo, x));
    CHECK(std::abs(rt - x) <= 1e-12 * x);
  }
}

TEST_CASE("p2p caps replace per bus") {
  NetworkTopology topo = load_network(kCase);
  auto topo2 = topo.with_p2p_caps({{17, 150.0}, {32, 120.0}});
  CHECK(topo2.buses()[topo2.bus_index(17)].p2p_cap_kw == doctest::Approx(150.0));
  CHECK(topo2.buses()[topo2.bus_index(32)].p2p_cap_kw == doctest::Approx(120.0));
  CHECK(topo2.buses()[topo2.bus_index(5)].p2p_cap_kw == 0.0);
  CHECK(topo.buses()[topo.bus_index(17)].p2p_cap_kw == 0.0);
}

TEST_CASE("export summary is valid json with totals") {
  NetworkTopology topo = load_network(kCase);
  std::string j = export_summary_json(topo);
  CHECK(j.find("\"n_bus\": 33") != std::string::npos);
  CHECK(j.find("\"total_p_load_kw\": 3715.0") != std::string::npos);
}
