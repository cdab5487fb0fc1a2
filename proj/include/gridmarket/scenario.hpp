#pragma once

#include "gridmarket/dopf.hpp"
#include "gridmarket/market.hpp"
#include "gridmarket/network.hpp"
#include "gridmarket/surrogate.hpp"

namespace gridmarket {

struct Range {
  double lo = 0.0, hi = 0.0;
};

// Parameter ranges mirror the dataset-generation axes: loss cost, correction
// penalty, load scaling, power factor and solar shortfall (%). Endpoints ship
// in the config file as figure-derived estimates.
struct SamplingRanges {
  Range c_ls{0.5, 3.0};
  Range lambda_corr{0.5, 4.0};
  Range load_scale{0.7, 1.3};
  Range pf{0.82, 0.95};
  Range solar_pct{0.0, 40.0};

  void validate() const;
};

struct SampledParams {
  double c_ls = 0.0;
  double lambda_corr = 0.0;
  double load_scale = 1.0;
  double pf = 0.9;
  double solar_pct = 0.0;
  int hour = 0;
};

struct ScenarioRecord {
  long long id = 0;
  std::uint64_t seed = 0;
  SampledParams params;
  MatrixXd features;   // (n_bus x 5): p_net, p_load, pf, c_ls, lambda_corr
  VectorXd target_kw;  // accepted injections
  int market_iterations = 0;
  bool market_converged = false;
  bool dopf_exact = false;
};

struct ScenarioBase {
  NetworkTopology topo;  // caps applied at MG buses
  std::vector<MicrogridSpec> mgs;
  MarketConfig market;
  double exactness_tol = 1e-5;
};

struct GenStats {
  long long requested = 0;
  long long kept = 0;
  long long dropped_infeasible = 0;
  long long dropped_failed = 0;
};

SampledParams sample_scenario(std::uint64_t seed, const SamplingRanges& ranges, int horizon = 24);

// loads scaled, reactive power from the scenario power factor
InjectionRequest scenario_request(const NetworkTopology& topo, const SampledParams& p,
                                  const VectorXd& p_net_kw);

// market clearing then D-OPF; empty optional when the D-OPF is infeasible
std::optional<ScenarioRecord> run_scenario(const ScenarioBase& base, const DopfSolver& solver,
                                           long long id, std::uint64_t seed,
                                           const SamplingRanges& ranges);

std::pair<std::vector<ScenarioRecord>, GenStats> generate_dataset(long long n,
                                                                  const ScenarioBase& base,
                                                                  const SamplingRanges& ranges,
                                                                  std::uint64_t master_seed,
                                                                  int workers = 1);

MatrixXd pearson_matrix(const std::vector<ScenarioRecord>& records);

std::pair<std::vector<ScenarioRecord>, std::vector<ScenarioRecord>> split(
    const std::vector<ScenarioRecord>& records, double fraction, std::uint64_t seed);

std::vector<SurrogateSample> to_samples(const std::vector<ScenarioRecord>& records);

void write_dataset(const std::vector<ScenarioRecord>& records, const GenStats& stats,
                   const SamplingRanges& ranges, std::uint64_t master_seed,
                   const std::string& dir);
std::vector<ScenarioRecord> read_dataset(const std::string& dir);

}  // namespace gridmarket
