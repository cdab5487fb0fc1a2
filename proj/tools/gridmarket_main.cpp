#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>

#include "gridmarket/config.hpp"
#include "gridmarket/harness.hpp"
#include "gridmarket/scenario.hpp"

using namespace gridmarket;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitSolver = 4;
constexpr int kExitTrain = 5;

std::string default_out_dir(const std::string& tag, std::uint64_t seed) {
  return "runs/" + tag + "-seed" + std::to_string(seed);
}

int cmd_gen_data(const std::string& config_path, long long n, std::uint64_t seed, int workers,
                 std::string out_dir) {
  AppConfig cfg = load_config(config_path);
  if (out_dir.empty()) out_dir = default_out_dir("dataset", seed);
  ScenarioBase base = to_scenario_base(cfg);
  auto [records, stats] = generate_dataset(n, base, cfg.ranges, seed, workers);
  write_dataset(records, stats, cfg.ranges, seed, out_dir);
  std::fprintf(stderr, "gen-data: kept %lld/%lld scenarios (%lld infeasible, %lld failed) -> %s\n",
               stats.kept, stats.requested, stats.dropped_infeasible, stats.dropped_failed,
               out_dir.c_str());
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_dir, std::string out_dir,
              int epochs_override, std::uint64_t seed_override) {
  AppConfig cfg = load_config(config_path);
  if (out_dir.empty()) out_dir = default_out_dir("model", cfg.train.seed);
  TrainConfig tc = cfg.train;
  if (epochs_override > 0) tc.epochs = epochs_override;
  if (seed_override != 0) tc.seed = seed_override;

  auto records = read_dataset(data_dir);
  auto [train_recs, test_recs] = split(records, 0.8, tc.seed);
  auto [model, hist] = train(to_samples(train_recs), tc);

  std::filesystem::create_directories(out_dir);
  save_model(model, out_dir + "/model.bin");
  write_history(hist, out_dir + "/history.tsv");
  EvalMetrics m = evaluate(model, to_samples(test_recs));
  std::printf("MAE (MW)\tRMSE (MW)\tR2 Score\n%.6e\t%.6e\t%.4f\n", m.mae_mw, m.rmse_mw, m.r2);
  std::fprintf(stderr, "train: %zu train / %zu test scenarios, best epoch %d -> %s\n",
               train_recs.size(), test_recs.size(), hist.best_epoch, out_dir.c_str());
  return 0;
}

int cmd_eval_model(const std::string& model_path, const std::string& data_dir,
                   const std::string& parity_out) {
  SurrogateModel model = load_model(model_path);
  auto records = read_dataset(data_dir);
  EvalMetrics m = evaluate(model, to_samples(records));
  std::printf("MAE (MW)\tRMSE (MW)\tR2 Score\n%.6e\t%.6e\t%.4f\n", m.mae_mw, m.rmse_mw, m.r2);
  if (!parity_out.empty()) {
    std::string out = "target_kw\tpredicted_kw\n";
    for (const auto& r : records) {
      VectorXd yhat = forward(model, r.features);
      for (int i = 0; i < yhat.size(); ++i)
        out += fmt_full(r.target_kw[i]) + "\t" + fmt_full(yhat[i]) + "\n";
    }
    write_text_file(parity_out, out);
  }
  return 0;
}

int cmd_run_case(const std::string& config_path, int case_id, const std::string& model_path,
                 std::string out_dir, std::uint64_t seed_override, int horizon_override) {
  AppConfig cfg = load_config(config_path);
  if (seed_override != 0) cfg.seed = seed_override;
  if (horizon_override > 0) cfg.horizon = horizon_override;
  SurrogateModel model;
  const SurrogateModel* model_ptr = nullptr;
  if (case_id == 3) {
    if (model_path.empty())
      throw UsageError("run-case 3 needs --model pointing at a trained surrogate (model.bin)");
    model = load_model(model_path);
    model_ptr = &model;
  }
  if (out_dir.empty())
    out_dir = default_out_dir("case" + std::to_string(case_id), cfg.seed);
  CaseConfig cc = to_case_config(cfg, case_id, model_ptr);
  CaseArtifacts art;
  CaseResult res = run_case(cc, &art);
  write_case_bundle(res, art, out_dir);
  ViolationStats v = voltage_violation(res.voltage_pu);
  std::printf("case %d: traded %.2f kWh, payoff %.2f Rs, max violation %.3f%%, wall %.2fs -> %s\n",
              case_id, total_traded_kw(res), total_payoff_rs(res), v.max_deviation_pct,
              res.wall_seconds, out_dir.c_str());
  return 0;
}

int cmd_compare(const std::vector<std::string>& dirs, const std::string& out_path) {
  std::vector<CaseResult> results;
  for (const auto& d : dirs) results.push_back(read_case_summary(d));
  CompareReport rep = compare(results);
  std::fputs(rep.table.c_str(), stdout);
  if (!out_path.empty()) {
    write_text_file(out_path, rep.json);
    std::fprintf(stderr, "compare: wrote %s\n", out_path.c_str());
  }
  return 0;
}

int cmd_export_network(const std::string& config_path, const std::string& out_path) {
  AppConfig cfg = load_config(config_path);
  NetworkTopology topo = build_topology(cfg);
  std::string j = export_summary_json(topo);
  if (out_path.empty())
    std::fputs((j + "\n").c_str(), stdout);
  else
    write_text_file(out_path, j + "\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"grid-aware peer-to-peer energy trading simulator"};
  app.require_subcommand(1);

  std::string config_path = "data/default.cfg";
  app.add_option("--config", config_path, "configuration file")->capture_default_str();

  auto* gen = app.add_subcommand("gen-data", "sample scenarios and build the training dataset");
  long long gen_n = 1000;
  std::uint64_t gen_seed = 1;
  int gen_workers = 1;
  std::string gen_out;
  gen->add_option("--n", gen_n, "number of scenarios")->check(CLI::PositiveNumber);
  gen->add_option("--seed", gen_seed, "master seed");
  gen->add_option("--workers", gen_workers, "worker threads")->check(CLI::PositiveNumber);
  gen->add_option("--out", gen_out, "output directory");

  auto* tr = app.add_subcommand("train", "train the DSO-response surrogate");
  std::string tr_data, tr_out;
  int tr_epochs = 0;
  std::uint64_t tr_seed = 0;
  tr->add_option("--data", tr_data, "dataset directory")->required();
  tr->add_option("--out", tr_out, "output directory");
  tr->add_option("--epochs", tr_epochs, "override training epochs")->check(CLI::PositiveNumber);
  tr->add_option("--seed", tr_seed, "override training seed");

  auto* ev = app.add_subcommand("eval-model", "evaluate a trained model on a dataset");
  std::string ev_model, ev_data, ev_parity;
  ev->add_option("--model", ev_model, "model file")->required();
  ev->add_option("--data", ev_data, "dataset directory")->required();
  ev->add_option("--parity-out", ev_parity, "write target/prediction pairs");

  auto* rc = app.add_subcommand("run-case", "run one case study over the horizon");
  int rc_case = 1;
  std::string rc_model, rc_out;
  std::uint64_t rc_seed = 0;
  int rc_horizon = 0;
  rc->add_option("case", rc_case, "case id (1 grid-unaware, 2 DSO bilevel, 3 learned)")
      ->required()
      ->check(CLI::Range(1, 3));
  rc->add_option("--model", rc_model, "surrogate model file (case 3)");
  rc->add_option("--out", rc_out, "output directory");
  rc->add_option("--seed", rc_seed, "override the config seed");
  rc->add_option("--horizon", rc_horizon, "override the horizon")->check(CLI::PositiveNumber);

  auto* cp = app.add_subcommand("compare", "compare case result bundles");
  std::vector<std::string> cp_dirs;
  std::string cp_out;
  cp->add_option("--results", cp_dirs, "case bundle directories")->required()->expected(2, 3);
  cp->add_option("--out", cp_out, "write machine-readable comparison JSON");

  auto* ex = app.add_subcommand("export-network", "export the network summary as JSON");
  std::string ex_out;
  ex->add_option("--out", ex_out, "output file (stdout when absent)");

  try {
    app.parse(argc, argv);
    if (gen->parsed()) return cmd_gen_data(config_path, gen_n, gen_seed, gen_workers, gen_out);
    if (tr->parsed()) return cmd_train(config_path, tr_data, tr_out, tr_epochs, tr_seed);
    if (ev->parsed()) return cmd_eval_model(ev_model, ev_data, ev_parity);
    if (rc->parsed())
      return cmd_run_case(config_path, rc_case, rc_model, rc_out, rc_seed, rc_horizon);
    if (cp->parsed()) return cmd_compare(cp_dirs, cp_out);
    if (ex->parsed()) return cmd_export_network(config_path, ex_out);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  } catch (const UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return kExitUsage;
  } catch (const TrainError& e) {
    std::fprintf(stderr, "training error: %s\n", e.what());
    return kExitTrain;
  } catch (const SolverError& e) {
    std::fprintf(stderr, "solver error: %s\n", e.what());
    return kExitSolver;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kExitData;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
