#pragma once

#include "gridmarket/harness.hpp"
#include "gridmarket/scenario.hpp"

namespace gridmarket {

// Everything the subcommands need, read from one human-editable INI-style
// file. Command-line flags override individual values.
struct AppConfig {
  std::string case_file;
  MarketConfig market;
  DopfParams dopf;
  SamplingRanges ranges;
  TrainConfig train;
  std::vector<MicrogridSpec> mgs;
  int horizon = 24;
  double pf = 0.85;
  double load_scale = 1.0;
  VectorXd load_shape;  // size horizon, 1.0 when absent
  double mu = 0.25;
  int outer_rounds = 5;
  double p2p_cap_margin = 1.2;
  std::map<int, double> audit_gen_p_mw;
  std::map<int, double> audit_gen_q_mvar;
  std::uint64_t seed = 1;
};

AppConfig load_config(const std::string& path);

NetworkTopology build_topology(const AppConfig& cfg);
ScenarioBase to_scenario_base(const AppConfig& cfg);
CaseConfig to_case_config(const AppConfig& cfg, int case_id,
                          const SurrogateModel* model = nullptr);

}  // namespace gridmarket
