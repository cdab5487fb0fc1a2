#include "gridmarket/scenario.hpp"

#include <json.hpp>

#include <array>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

namespace gridmarket {

void SamplingRanges::validate() const {
  auto chk = [](const Range& r, const char* name) {
    if (!(r.lo <= r.hi)) throw DataError(std::string("sampling range ") + name + ": lo > hi");
  };
  chk(c_ls, "c_ls");
  chk(lambda_corr, "lambda_corr");
  chk(load_scale, "load_scale");
  chk(pf, "pf");
  chk(solar_pct, "solar_pct");
  if (c_ls.lo < 0 || lambda_corr.lo <= 0 || load_scale.lo < 0)
    throw DataError("sampling ranges: nonpositive endpoints");
  if (pf.lo <= 0 || pf.hi > 1.0) throw DataError("sampling ranges: pf outside (0, 1]");
}

SampledParams sample_scenario(std::uint64_t seed, const SamplingRanges& ranges, int horizon) {
  ranges.validate();
  Rng rng(seed);
  SampledParams p;
  p.c_ls = rng.uniform(ranges.c_ls.lo, ranges.c_ls.hi);
  p.lambda_corr = rng.uniform(ranges.lambda_corr.lo, ranges.lambda_corr.hi);
  p.load_scale = rng.uniform(ranges.load_scale.lo, ranges.load_scale.hi);
  p.pf = rng.uniform(ranges.pf.lo, ranges.pf.hi);
  p.solar_pct = rng.uniform(ranges.solar_pct.lo, ranges.solar_pct.hi);
  p.hour = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(horizon)));
  return p;
}

InjectionRequest scenario_request(const NetworkTopology& topo, const SampledParams& p,
                                  const VectorXd& p_net_kw) {
  const int nb = topo.n_bus();
  InjectionRequest req;
  req.p_net_kw = p_net_kw;
  req.p_load_kw.resize(nb);
  req.q_load_kvar.resize(nb);
  double tanphi = std::tan(std::acos(p.pf));
  for (int i = 0; i < nb; ++i) {
    req.p_load_kw[i] = topo.buses()[i].p_load_kw * p.load_scale;
    req.q_load_kvar[i] = req.p_load_kw[i] * tanphi;
  }
  return req;
}

std::optional<ScenarioRecord> run_scenario(const ScenarioBase& base, const DopfSolver& solver,
                                           long long id, std::uint64_t seed,
                                           const SamplingRanges& ranges) {
  const auto& topo = base.topo;
  int horizon = static_cast<int>(base.mgs.at(0).alpha.size());
  SampledParams p = sample_scenario(seed, ranges, horizon);

  // solar shortfall applies multiplicatively to the nominal profile
  std::vector<MicrogridSpec> mgs = base.mgs;
  double pv_mult = std::max(0.0, 1.0 - p.solar_pct / 100.0);
  VectorXd soc(mgs.size());
  for (std::size_t i = 0; i < mgs.size(); ++i) {
    mgs[i].pv_profile_kw *= pv_mult;
    soc[static_cast<int>(i)] = mgs[i].bess.soc_init_kwh;
  }

  MarketOutcome mk = clear_hour(mgs, p.hour, soc, base.market);

  const int nb = topo.n_bus();
  VectorXd p_net = VectorXd::Zero(nb);
  for (std::size_t i = 0; i < mgs.size(); ++i)
    p_net[topo.bus_index(mgs[i].bus)] = mk.decisions[i].p_net_kw;

  InjectionRequest req = scenario_request(topo, p, p_net);
  DopfParams dp;
  dp.c_ls = p.c_ls;
  dp.lambda_corr = p.lambda_corr;
  DopfSolution sol = solver.solve(req, dp);
  if (sol.status == DopfStatus::Infeasible) return std::nullopt;
  if (sol.status != DopfStatus::Optimal)
    throw SolverError("scenario " + std::to_string(id) + ": D-OPF numerical failure");

  ScenarioRecord rec;
  rec.id = id;
  rec.seed = seed;
  rec.params = p;
  rec.features.resize(nb, 5);
  rec.features.col(0) = p_net;
  rec.features.col(1) = req.p_load_kw;
  rec.features.col(2).setConstant(p.pf);
  rec.features.col(3).setConstant(p.c_ls);
  rec.features.col(4).setConstant(p.lambda_corr);
  rec.target_kw = sol.p_acc_kw;
  rec.market_iterations = mk.iterations_used;
  rec.market_converged = mk.converged;
  rec.dopf_exact = check_exactness(sol, base.exactness_tol).exact;
  return rec;
}

std::pair<std::vector<ScenarioRecord>, GenStats> generate_dataset(long long n,
                                                                  const ScenarioBase& base,
                                                                  const SamplingRanges& ranges,
                                                                  std::uint64_t master_seed,
                                                                  int workers) {
  if (n < 1) throw UsageError("generate_dataset: n must be at least 1");
  if (workers < 1) throw UsageError("generate_dataset: workers must be at least 1");
  ranges.validate();
  for (const auto& mg : base.mgs) mg.validate();

  DopfSolver solver(base.topo);
  std::vector<std::optional<ScenarioRecord>> slots(static_cast<std::size_t>(n));
  std::vector<char> failed(static_cast<std::size_t>(n), 0);
  std::atomic<long long> next{0};
  std::atomic<long long> hard_failures{0};
  std::string first_error;
  std::mutex err_mu;

  auto work = [&]() {
    while (true) {
      long long i = next.fetch_add(1);
      if (i >= n) break;
      std::uint64_t seed = Rng::derive(master_seed, static_cast<std::uint64_t>(i));
      try {
        slots[static_cast<std::size_t>(i)] = run_scenario(base, solver, i, seed, ranges);
      } catch (const std::exception& e) {
        failed[static_cast<std::size_t>(i)] = 1;
        hard_failures.fetch_add(1);
        std::lock_guard<std::mutex> lk(err_mu);
        if (first_error.empty()) first_error = e.what();
      }
    }
  };

  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& th : pool) th.join();
  }

  GenStats stats;
  stats.requested = n;
  std::vector<ScenarioRecord> records;
  records.reserve(static_cast<std::size_t>(n));
  for (long long i = 0; i < n; ++i) {
    if (failed[static_cast<std::size_t>(i)]) {
      ++stats.dropped_failed;
    } else if (slots[static_cast<std::size_t>(i)]) {
      records.push_back(std::move(*slots[static_cast<std::size_t>(i)]));
      ++stats.kept;
    } else {
      ++stats.dropped_infeasible;
    }
  }
  if (stats.kept * 2 < n)
    throw DataError("generate_dataset: over half of the scenarios failed or were infeasible (" +
                    std::to_string(stats.kept) + "/" + std::to_string(n) +
                    (first_error.empty() ? std::string()
                                         : "; first error: " + first_error) +
                    ")");
  return {std::move(records), stats};
}

MatrixXd pearson_matrix(const std::vector<ScenarioRecord>& records) {
  if (records.size() < 2) throw DataError("pearson_matrix: need at least 2 records");
  const int f = 5;
  VectorXd mean = VectorXd::Zero(f), sq = VectorXd::Zero(f);
  MatrixXd cross = MatrixXd::Zero(f, f);
  long long n = 0;
  for (const auto& r : records) {
    for (int i = 0; i < r.features.rows(); ++i) {
      VectorXd row = r.features.row(i).transpose();
      mean += row;
      sq += row.cwiseProduct(row);
      cross += row * row.transpose();
      ++n;
    }
  }
  mean /= static_cast<double>(n);
  sq /= static_cast<double>(n);
  cross /= static_cast<double>(n);
  VectorXd var = sq - mean.cwiseProduct(mean);
  std::string degenerate;
  static const char* names[5] = {"p_net", "p_load", "pf", "c_ls", "lambda_corr"};
  for (int i = 0; i < f; ++i)
    if (var[i] <= 1e-15) degenerate += std::string(degenerate.empty() ? "" : ", ") + names[i];
  if (!degenerate.empty())
    throw DataError("pearson_matrix: zero-variance feature(s): " + degenerate);
  MatrixXd rho(f, f);
  for (int i = 0; i < f; ++i)
    for (int j = 0; j < f; ++j)
      rho(i, j) = (cross(i, j) - mean[i] * mean[j]) / std::sqrt(var[i] * var[j]);
  return rho;
}

std::pair<std::vector<ScenarioRecord>, std::vector<ScenarioRecord>> split(
    const std::vector<ScenarioRecord>& records, double fraction, std::uint64_t seed) {
  if (!(fraction > 0 && fraction < 1)) throw UsageError("split: fraction must lie in (0, 1)");
  std::vector<int> idx(records.size());
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  rng.shuffle(idx);
  std::size_t n_train = static_cast<std::size_t>(std::llround(fraction * records.size()));
  std::pair<std::vector<ScenarioRecord>, std::vector<ScenarioRecord>> out;
  for (std::size_t i = 0; i < idx.size(); ++i)
    (i < n_train ? out.first : out.second).push_back(records[idx[i]]);
  return out;
}

std::vector<SurrogateSample> to_samples(const std::vector<ScenarioRecord>& records) {
  std::vector<SurrogateSample> s;
  s.reserve(records.size());
  for (const auto& r : records) s.push_back({r.features, r.target_kw});
  return s;
}

void write_dataset(const std::vector<ScenarioRecord>& records, const GenStats& stats,
                   const SamplingRanges& ranges, std::uint64_t master_seed,
                   const std::string& dir) {
  std::filesystem::create_directories(dir);
  std::string out =
      "scenario_id\tbus_row\tp_net_kw\tp_load_kw\tpf\tc_ls\tlambda_corr\tp_acc_kw\t"
      "market_iters\tmarket_converged\tdopf_exact\n";
  for (const auto& r : records) {
    for (int i = 0; i < r.features.rows(); ++i) {
      out += std::to_string(r.id) + "\t" + std::to_string(i) + "\t" +
             fmt_full(r.features(i, 0)) + "\t" + fmt_full(r.features(i, 1)) + "\t" +
             fmt_full(r.features(i, 2)) + "\t" + fmt_full(r.features(i, 3)) + "\t" +
             fmt_full(r.features(i, 4)) + "\t" + fmt_full(r.target_kw[i]) + "\t" +
             std::to_string(r.market_iterations) + "\t" +
             (r.market_converged ? "1" : "0") + "\t" + (r.dopf_exact ? "1" : "0") + "\n";
    }
  }
  write_text_file(dir + "/dataset.tsv", out);

  nlohmann::json j;
  j["format_version"] = 1;
  j["master_seed"] = master_seed;
  j["requested"] = stats.requested;
  j["kept"] = stats.kept;
  j["dropped_infeasible"] = stats.dropped_infeasible;
  j["dropped_failed"] = stats.dropped_failed;
  j["ranges"] = {{"c_ls", {ranges.c_ls.lo, ranges.c_ls.hi}},
                 {"lambda_corr", {ranges.lambda_corr.lo, ranges.lambda_corr.hi}},
                 {"load_scale", {ranges.load_scale.lo, ranges.load_scale.hi}},
                 {"pf", {ranges.pf.lo, ranges.pf.hi}},
                 {"solar_pct", {ranges.solar_pct.lo, ranges.solar_pct.hi}}};
  j["ranges_note"] = "endpoints are figure-derived estimates, editable in the config";
  write_text_file(dir + "/manifest.json", j.dump(2) + "\n");
}

std::vector<ScenarioRecord> read_dataset(const std::string& dir) {
  std::ifstream in(dir + "/dataset.tsv");
  if (!in) throw DataError("read_dataset: missing " + dir + "/dataset.tsv");
  std::string header;
  std::getline(in, header);
  std::vector<ScenarioRecord> records;
  std::vector<std::array<double, 9>> rows;  // p_net,p_load,pf,c_ls,lam,acc,iters,conv,exact
  long long cur_id = -1;
  std::string line;
  auto flush = [&]() {
    if (rows.empty()) return;
    ScenarioRecord r;
    r.id = cur_id;
    int nb = static_cast<int>(rows.size());
    r.features.resize(nb, 5);
    r.target_kw.resize(nb);
    for (int i = 0; i < nb; ++i) {
      for (int f = 0; f < 5; ++f) r.features(i, f) = rows[i][f];
      r.target_kw[i] = rows[i][5];
    }
    r.params.pf = rows[0][2];
    r.params.c_ls = rows[0][3];
    r.params.lambda_corr = rows[0][4];
    r.market_iterations = static_cast<int>(rows[0][6]);
    r.market_converged = rows[0][7] != 0;
    r.dopf_exact = rows[0][8] != 0;
    records.push_back(std::move(r));
    rows.clear();
  };
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    long long id, bus_row;
    std::array<double, 9> v{};
    ss >> id >> bus_row;
    for (auto& x : v) ss >> x;
    if (!ss) throw DataError("read_dataset: malformed row in dataset.tsv");
    if (id != cur_id) {
      flush();
      cur_id = id;
    }
    rows.push_back(v);
  }
  flush();
  if (records.empty()) throw DataError("read_dataset: dataset.tsv holds no records");
  return records;
}

}  // namespace gridmarket
