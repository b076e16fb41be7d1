#include <CLI11.hpp>

#include "deltarec/chart.hpp"
#include "deltarec/config.hpp"
#include "deltarec/errors.hpp"
#include "deltarec/kernels.hpp"
#include "deltarec/metrics.hpp"
#include "deltarec/reconstruct.hpp"
#include "deltarec/subspace.hpp"
#include "deltarec/sweep.hpp"

#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>

namespace fs = std::filesystem;
using namespace deltarec;

namespace {

Config load_validated(const std::string& path) {
  Config cfg = load_config(path);
  validate_config(cfg);
  return cfg;
}

int cmd_gen_data(const std::string& config_path, const std::string& out_path) {
  Config cfg = load_validated(config_path);
  Dataset ds = make_dataset(cfg.data);
  save_dataset(ds, out_path);
  std::printf("wrote %s (n=%lld, d=%lld, k=%lld, source=%s)\n",
              out_path.c_str(), static_cast<long long>(ds.n()),
              static_cast<long long>(ds.d()), static_cast<long long>(ds.k()),
              ds.meta.source.c_str());
  return 0;
}

Dataset dataset_for(const Config& cfg, const std::string& data_path) {
  if (data_path.empty()) return make_dataset(cfg.data);
  return load_dataset(data_path);
}

int cmd_train(const std::string& config_path, const std::string& data_path,
              long width_override, const std::string& out_dir) {
  Config cfg = load_validated(config_path);
  Dataset ds = dataset_for(cfg, data_path);
  Eigen::Index width =
      width_override > 0 ? width_override : cfg.train.width;
  fs::create_directories(out_dir);
  std::uint64_t seed = cfg.sweep.train_seeds.front();
  Checkpoint ckpt = train_cell(cfg, ds, width, seed, out_dir);
  double final_loss = mse_loss(ckpt.model, ds);
  std::printf("model=%s width=%lld seed=%llu epochs=%ld converged=%s "
              "loss=%.3e cached=%s\n",
              cfg.train.model.c_str(), static_cast<long long>(width),
              static_cast<unsigned long long>(seed), ckpt.record.epochs,
              ckpt.record.converged ? "yes" : "no", final_loss,
              ckpt.cached ? "yes" : "no");
  return 0;
}

int cmd_reconstruct(const std::string& config_path,
                    const std::string& data_path, const std::string& method,
                    long width_override, long seed_train_flag,
                    long seed_recon_flag, const std::string& out_dir) {
  Config cfg = load_validated(config_path);
  Dataset ds = dataset_for(cfg, data_path);
  Eigen::Index width =
      width_override > 0 ? width_override : cfg.train.width;
  std::uint64_t seed_train = seed_train_flag >= 0
                                 ? static_cast<std::uint64_t>(seed_train_flag)
                                 : cfg.sweep.train_seeds.front();
  std::uint64_t seed_recon = seed_recon_flag >= 0
                                 ? static_cast<std::uint64_t>(seed_recon_flag)
                                 : cfg.sweep.recon_seeds.front();

  fs::create_directories(fs::path(out_dir) / "checkpoints");
  Checkpoint ckpt = train_cell(cfg, ds, width, seed_train,
                               (fs::path(out_dir) / "checkpoints").string());

  ParamMask mask = cfg.reconstruct.mask == "all" ? ParamMask::all_layers
                                                 : ParamMask::last_layer;
  ReconProblem problem;
  problem.model = ckpt.model;
  problem.delta = masked_delta(ckpt.record, ckpt.model, mask);
  problem.mask = mask;
  problem.n_candidates = cfg.reconstruct.candidates > 0
                             ? cfg.reconstruct.candidates
                             : ds.n();
  problem.solver = [&] {
    if (cfg.reconstruct.solver == "dense") return ReconSolver::dense_gram;
    if (cfg.reconstruct.solver == "cg") return ReconSolver::matrix_free_cg;
    return ReconSolver::auto_select;
  }();
  problem.ridge = cfg.reconstruct.ridge;

  if (method == "subspace-dw1") {
    if (cfg.train.model != "mlp")
      throw ConfigError("subspace-dw1 needs a trainable first layer");
    problem.basis = dw1_subspace(ckpt).basis;
  } else if (method == "true-subspace") {
    if (!ds.U) throw ConfigError("true-subspace needs the generator basis");
    problem.basis = *ds.U;
  } else if (method != "full-space") {
    throw ConfigError("unknown method '" + method + "'");
  }

  ReconOptions opts;
  opts.lr = cfg.reconstruct.lr;
  opts.momentum = cfg.reconstruct.momentum;
  opts.iters = cfg.reconstruct.iters;
  opts.trace_stride = cfg.reconstruct.trace_stride;

  Rng rng = Rng::from(seed_recon, 100000 + static_cast<std::uint64_t>(width));
  ReconResult result = problem.basis
                           ? run_subspace(problem, std::nullopt, opts, rng)
                           : run_full_space(problem, std::nullopt, opts, rng);

  save_recon_trace_csv(result, (fs::path(out_dir) / "trace.csv").string());
  save_recon_jsonl(result, (fs::path(out_dir) / "result.jsonl").string());
  save_dataset(recon_as_dataset(result, ds.k()),
               (fs::path(out_dir) / "xhat.bin").string());

  RhoResult quality = rho(ds.X, result.xhat);
  std::printf("method=%s width=%lld seeds=(%llu,%llu) best_loss=%.6e "
              "rho=%.6f\n",
              method.c_str(), static_cast<long long>(width),
              static_cast<unsigned long long>(seed_train),
              static_cast<unsigned long long>(seed_recon), result.best_loss,
              quality.rho);
  return 0;
}

int cmd_sweep(const std::string& config_path, const std::string& out_dir) {
  Config cfg = load_validated(config_path);
  SweepOutcome outcome = run_experiment(cfg, out_dir);
  int failed = 0;
  for (const auto& cell : outcome.cells) {
    if (!cell.ok) {
      ++failed;
      std::fprintf(stderr, "cell failed (w=%lld %s t=%llu r=%llu): %s\n",
                   static_cast<long long>(cell.width), cell.method.c_str(),
                   static_cast<unsigned long long>(cell.seed_train),
                   static_cast<unsigned long long>(cell.seed_recon),
                   cell.error.c_str());
    }
  }
  std::printf("sweep: %zu cells, %d failed; results at %s\n",
              outcome.cells.size(), failed, outcome.results_path.c_str());
  return outcome.exit_code;
}

int cmd_chart(const std::string& results_path, const std::string& out_path,
              const std::string& title) {
  auto series = aggregate_results_csv(results_path);
  ChartSpec spec;
  if (!title.empty()) spec.title = title;
  render_chart(series, spec, out_path);
  std::printf("wrote %s (%zu series)\n", out_path.c_str(), series.size());
  return 0;
}

int cmd_verify_bounds(const std::string& kind, const BoundInputs& in) {
  BoundResult out =
      kind == "lemma" ? lemma1_width_bound(in) : theorem1_width_bound(in);
  std::printf("p_min = %.17g\n", out.p_min);
  std::printf("delta_max = %.17g\n", out.delta_max);
  std::printf("delta_ok = %s\n", out.delta_ok ? "true" : "false");
  return 0;
}

int cmd_concentration(long d, long p, double eps, int grid, int trials,
                      long samples, long seed, const std::string& act_name,
                      const std::string& csv_path,
                      const std::string& jsonl_path) {
  Rng rng(static_cast<std::uint64_t>(seed));
  ConcentrationReport report =
      concentration_trial(activation_from_string(act_name), d, p, eps, grid,
                          trials, samples, rng);
  std::printf("success_fraction = %.4f (%d trials)\n",
              report.success_fraction, trials);
  std::printf("max_oracle_se = %.3e, se_budget_ok = %s\n",
              report.max_oracle_se, report.se_budget_ok ? "true" : "false");
  std::printf("note: %s\n", report.note.c_str());
  if (!csv_path.empty()) save_concentration_csv(report, csv_path);
  if (!jsonl_path.empty()) save_concentration_jsonl(report, jsonl_path);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"training-data reconstruction from weight differences"};
  app.require_subcommand(1);

  std::string config_path, data_path, out_path, results_path, title;
  std::string method = "full-space";
  long width_override = 0, seed_train_flag = -1, seed_recon_flag = -1;

  auto* gen = app.add_subcommand("gen-data", "generate and save a dataset");
  gen->add_option("-c,--config", config_path, "config file")->required();
  gen->add_option("--out", out_path, "output dataset path")->required();

  auto* train_cmd = app.add_subcommand("train", "train one model");
  train_cmd->add_option("-c,--config", config_path)->required();
  train_cmd->add_option("--data", data_path, "dataset file (else generated)");
  train_cmd->add_option("--width", width_override, "override train.width");
  train_cmd->add_option("--out", out_path, "checkpoint directory")
      ->required();

  auto* rec = app.add_subcommand("reconstruct", "run one reconstruction");
  rec->add_option("-c,--config", config_path)->required();
  rec->add_option("--data", data_path, "dataset file (else generated)");
  rec->add_option("--method", method,
                  "full-space | subspace-dw1 | true-subspace");
  rec->add_option("--width", width_override, "override train.width");
  rec->add_option("--seed-train", seed_train_flag);
  rec->add_option("--seed-recon", seed_recon_flag);
  rec->add_option("--out", out_path, "artifact directory")->required();

  auto* sweep_cmd = app.add_subcommand("sweep", "run the full grid");
  sweep_cmd->add_option("-c,--config", config_path)->required();
  sweep_cmd->add_option("--out", out_path, "artifact directory")->required();

  auto* chart_cmd = app.add_subcommand("chart", "render rho vs width");
  chart_cmd->add_option("--results", results_path, "results.csv")->required();
  chart_cmd->add_option("--out", out_path, "output SVG")->required();
  chart_cmd->add_option("--title", title);

  std::string bound_kind = "lemma";
  BoundInputs bounds;
  auto* vb = app.add_subcommand("verify-bounds", "evaluate width bounds");
  vb->add_option("--kind", bound_kind, "lemma | theorem")
      ->check(CLI::IsMember({"lemma", "theorem"}));
  vb->add_option("--m", bounds.m, "activation bound M");
  vb->add_option("--lip", bounds.lip, "activation Lipschitz constant");
  vb->add_option("--d", bounds.d, "input dimension");
  vb->add_option("--eps", bounds.eps, "kernel tolerance (lemma)");
  vb->add_option("--delta", bounds.delta, "failure probability");
  vb->add_option("--big-c", bounds.big_c, "bump RKHS constant (theorem)");
  vb->add_option("--min-alpha", bounds.min_alpha,
                 "lower bound on |alpha_i| (theorem)");
  vb->add_option("--alpha-l1", bounds.alpha_l1,
                 "||alpha||_1 + ||alpha_hat||_1 (theorem)");

  long conc_d = 3, conc_p = 1479, conc_trials = 20, conc_samples = 100000;
  long conc_seed = 1;
  int conc_grid = 12;
  double conc_eps = 0.5;
  std::string conc_act = "tanh", conc_csv, conc_jsonl;
  auto* conc = app.add_subcommand("concentration",
                                  "finite-width kernel concentration trials");
  conc->add_option("--d", conc_d);
  conc->add_option("--p", conc_p, "feature width");
  conc->add_option("--eps", conc_eps);
  conc->add_option("--grid", conc_grid, "sphere grid size");
  conc->add_option("--trials", conc_trials);
  conc->add_option("--samples", conc_samples, "MC oracle samples");
  conc->add_option("--seed", conc_seed);
  conc->add_option("--act", conc_act, "tanh | sigmoid | relu");
  conc->add_option("--csv", conc_csv, "per-trial CSV path");
  conc->add_option("--jsonl", conc_jsonl, "summary JSONL path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;  // bad flags are config errors
  }

  try {
    if (*gen) return cmd_gen_data(config_path, out_path);
    if (*train_cmd)
      return cmd_train(config_path, data_path, width_override, out_path);
    if (*rec)
      return cmd_reconstruct(config_path, data_path, method, width_override,
                             seed_train_flag, seed_recon_flag, out_path);
    if (*sweep_cmd) return cmd_sweep(config_path, out_path);
    if (*chart_cmd) return cmd_chart(results_path, out_path, title);
    if (*vb) return cmd_verify_bounds(bound_kind, bounds);
    if (*conc)
      return cmd_concentration(conc_d, conc_p, conc_eps, conc_grid,
                               static_cast<int>(conc_trials), conc_samples,
                               conc_seed, conc_act, conc_csv, conc_jsonl);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
