#pragma once

#include <map>

#include "gridmarket/dopf.hpp"
#include "gridmarket/market.hpp"
#include "gridmarket/metrics.hpp"
#include "gridmarket/surrogate.hpp"

namespace gridmarket {

struct CaseConfig {
  int case_id = 1;
  int horizon = 24;
  NetworkTopology topo;  // p2p caps applied at MG buses
  std::vector<MicrogridSpec> mgs;
  MarketConfig market;
  DopfParams dopf;
  double pf = 0.85;          // power factor shaping bus reactive loads
  double load_scale = 1.0;   // uniform scaling of case-file loads
  VectorXd load_shape;       // per-hour multiplier (size horizon)
  // Exact-PF audit dispatch for non-slack generators (bus -> MW/MVAr). The
  // audit asks what the physical feeder does if the cleared trades execute
  // with the network's own assets at their scheduled operating point.
  std::map<int, double> audit_gen_p_mw;
  std::map<int, double> audit_gen_q_mvar;
  const SurrogateModel* model = nullptr;  // required for case 3
  double mu = 0.25;                       // penalty weight, case 3
  int outer_rounds = 5;                   // market <-> DSO rounds, case 2
  std::uint64_t seed = 0;
};

// per-case artifacts beyond the result struct
struct CaseArtifacts {
  std::string market_log_tsv;  // hour, iter, price, supply, demand, mismatch
};

CaseResult run_case(const CaseConfig& cfg, CaseArtifacts* artifacts = nullptr);

struct CompareReport {
  std::string table;  // human-readable side-by-side comparison
  std::string json;   // machine-readable totals
};
CompareReport compare(const std::vector<CaseResult>& results);

// Deterministic result bundle; wall-clock timing goes to a separate sidecar so
// that seeded re-runs produce byte-identical data files.
void write_case_bundle(const CaseResult& result, const CaseArtifacts& artifacts,
                       const std::string& dir);
CaseResult read_case_summary(const std::string& dir);

}  // namespace gridmarket
