#include "deltarec/sweep.hpp"

#include "deltarec/chart.hpp"
#include "deltarec/errors.hpp"
#include "deltarec/image_grid.hpp"
#include "deltarec/metrics.hpp"
#include "deltarec/reconstruct.hpp"
#include "deltarec/subspace.hpp"

#include <json.hpp>

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <thread>

namespace fs = std::filesystem;

namespace deltarec {

namespace {

constexpr const char* kArtifactVersion = "v1";
constexpr char kCheckpointMagic[8] = {'D', 'R', 'C', 'K', 'P', 'T', '1', '\n'};

std::string format_g(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::uint64_t fnv1a(std::uint64_t hash, const void* data, std::size_t bytes) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < bytes; ++i) {
    hash ^= p[i];
    hash *= 1099511628211ull;
  }
  return hash;
}

std::string dataset_hash(const Dataset& ds) {
  std::uint64_t hash = 1469598103934665603ull;
  std::int64_t dims[4] = {ds.X.rows(), ds.X.cols(), ds.Y.rows(), ds.Y.cols()};
  hash = fnv1a(hash, dims, sizeof(dims));
  hash = fnv1a(hash, ds.X.data(), sizeof(double) * ds.X.size());
  hash = fnv1a(hash, ds.Y.data(), sizeof(double) * ds.Y.size());
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(hash));
  return buf;
}

Eigen::Index label_count(const Config& cfg, const Dataset& ds) {
  if (cfg.train.classes == 0) return ds.k();
  if (cfg.train.classes != ds.k())
    throw ConfigError("train.classes disagrees with the dataset labels");
  return cfg.train.classes;
}

// Same draw order as a fresh run, so a cache reload rebuilds identical
// frozen weights (RF) and layer shapes.
AnyModel init_model(const Config& cfg, Eigen::Index d, Eigen::Index k,
                    Eigen::Index width, std::uint64_t seed) {
  Rng rng = Rng::from(seed, static_cast<std::uint64_t>(width));
  if (cfg.train.model == "mlp")
    return init_mlp(d, width, cfg.train.depth, k, rng);
  RandomFeatures rf = init_rf(d, width, rng);
  rf.theta.setZero();  // GD-from-zero convention; min-norm is its limit
  return rf;
}

struct CheckpointFile {
  std::int64_t kind = 0;  // 0 mlp, 1 rf
  std::int64_t depth = 0, width = 0, classes = 0, d = 0;
  std::int64_t epochs = 0, converged = 0;
  Vector theta0, thetaf;
};

void write_checkpoint(const CheckpointFile& ck, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("checkpoint: cannot open " + path);
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  std::int64_t header[8] = {ck.kind,   ck.depth,     ck.width, ck.classes,
                            ck.d,      ck.epochs,    ck.converged,
                            static_cast<std::int64_t>(ck.theta0.size())};
  out.write(reinterpret_cast<const char*>(header), sizeof(header));
  out.write(reinterpret_cast<const char*>(ck.theta0.data()),
            static_cast<std::streamsize>(sizeof(double) * ck.theta0.size()));
  out.write(reinterpret_cast<const char*>(ck.thetaf.data()),
            static_cast<std::streamsize>(sizeof(double) * ck.thetaf.size()));
  if (!out) throw DataError("checkpoint: write failed for " + path);
}

CheckpointFile read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("checkpoint: cannot open " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
    throw DataError("checkpoint: bad magic in " + path);
  std::int64_t header[8];
  in.read(reinterpret_cast<char*>(header), sizeof(header));
  if (!in) throw DataError("checkpoint: truncated header in " + path);
  CheckpointFile ck;
  ck.kind = header[0];
  ck.depth = header[1];
  ck.width = header[2];
  ck.classes = header[3];
  ck.d = header[4];
  ck.epochs = header[5];
  ck.converged = header[6];
  std::int64_t params = header[7];
  if (params < 1) throw DataError("checkpoint: bad parameter count");
  ck.theta0.resize(params);
  ck.thetaf.resize(params);
  in.read(reinterpret_cast<char*>(ck.theta0.data()),
          static_cast<std::streamsize>(sizeof(double) * params));
  in.read(reinterpret_cast<char*>(ck.thetaf.data()),
          static_cast<std::streamsize>(sizeof(double) * params));
  if (!in) throw DataError("checkpoint: truncated parameters in " + path);
  return ck;
}

struct TrainJob {
  Eigen::Index width = 0;
  std::uint64_t seed = 0;
  Checkpoint ckpt;
  Vector spectrum;      // singular values of dW1 (mlp only)
  Matrix basis_dw1;     // leading right singular vectors up to detect_rank
  bool ok = false;
  std::string error;
};

ReconSolver solver_from_string(const std::string& name) {
  if (name == "auto") return ReconSolver::auto_select;
  if (name == "dense") return ReconSolver::dense_gram;
  if (name == "cg") return ReconSolver::matrix_free_cg;
  throw ConfigError("unknown solver '" + name + "'");
}

int worker_count(std::size_t jobs) {
  int workers = 1;
  if (const char* env = std::getenv("DELTAREC_WORKERS")) {
    workers = std::max(1, std::atoi(env));
  }
  return static_cast<int>(
      std::min<std::size_t>(static_cast<std::size_t>(workers), jobs));
}

void run_pool(std::size_t total, const std::function<void(std::size_t)>& body) {
  int workers = worker_count(total);
  if (workers <= 1) {
    for (std::size_t i = 0; i < total; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> threads;
  threads.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    threads.emplace_back([&]() {
      for (std::size_t i = next.fetch_add(1); i < total;
           i = next.fetch_add(1)) {
        body(i);
      }
    });
  }
  for (auto& t : threads) t.join();
}

}  // namespace

Dataset make_dataset(const DataConfig& cfg) {
  Rng rng(cfg.seed);
  if (cfg.kind == "synthetic")
    return gen_synthetic(cfg.n, cfg.d, cfg.r, cfg.sigma, rng);
  if (cfg.kind == "cifar10") return load_cifar10(cfg.cifar_path, cfg.n, rng);
  throw ConfigError("unknown data.kind '" + cfg.kind + "'");
}

Checkpoint train_cell(const Config& cfg, const Dataset& ds,
                      Eigen::Index width, std::uint64_t train_seed,
                      const std::string& cache_dir) {
  const Eigen::Index k = label_count(cfg, ds);
  const std::string key =
      cfg.train.model + "-d" + std::to_string(cfg.train.depth) + "-w" +
      std::to_string(width) + "-k" + std::to_string(k) + "-s" +
      std::to_string(train_seed) + "-" + dataset_hash(ds);
  const fs::path cache_file = fs::path(cache_dir) / (key + ".ckpt");

  AnyModel base = init_model(cfg, ds.d(), k, width, train_seed);

  if (fs::exists(cache_file)) {
    try {
      CheckpointFile ck = read_checkpoint(cache_file.string());
      if (ck.theta0.size() == param_count(base)) {
        Checkpoint out;
        out.model = unflatten(base, ck.thetaf);
        out.record.theta0 = ck.theta0;
        out.record.thetaf = ck.thetaf;
        out.record.epochs = ck.epochs;
        out.record.converged = ck.converged != 0;
        out.cached = true;
        return out;
      }
    } catch (const Error&) {
      // unreadable cache entry: fall through and retrain
    }
  }

  Checkpoint out;
  if (cfg.train.model == "rf" && cfg.train.rf_fit == "min-norm") {
    RandomFeatures rf = std::get<RandomFeatures>(base);
    RfFit fit = rf_min_norm(rf, ds);
    out.record.theta0 = Vector::Zero(fit.theta_star.size());
    out.record.thetaf = fit.theta_star;
    out.record.epochs = 0;
    out.record.converged =
        fit.residual <= 1e-6 * std::max(1.0, ds.Y.norm());
    rf.theta = fit.theta_star;
    out.model = rf;
  } else {
    TrainOptions opts;
    opts.lr = cfg.train.lr;
    opts.loss_target = cfg.train.loss_target;
    opts.max_epochs = cfg.train.max_epochs;
    TrainOutcome trained = train_gd(base, ds, opts);
    out.model = std::move(trained.model);
    out.record = std::move(trained.record);
  }

  CheckpointFile ck;
  ck.kind = cfg.train.model == "rf" ? 1 : 0;
  ck.depth = cfg.train.depth;
  ck.width = width;
  ck.classes = k;
  ck.d = ds.d();
  ck.epochs = out.record.epochs;
  ck.converged = out.record.converged ? 1 : 0;
  ck.theta0 = out.record.theta0;
  ck.thetaf = out.record.thetaf;
  write_checkpoint(ck, cache_file.string());
  return out;
}

Dw1Subspace dw1_subspace(const Checkpoint& ckpt) {
  const Mlp* trained = std::get_if<Mlp>(&ckpt.model);
  if (!trained)
    throw ConfigError("dw1_subspace: checkpoint does not hold an mlp");
  Mlp m0 = unflatten(*trained, ckpt.record.theta0);
  Matrix dw1 = trained->layers[0] - m0.layers[0];
  BasisEstimate est = estimate_basis(dw1, std::min(dw1.rows(), dw1.cols()));
  Dw1Subspace out;
  out.rank = detect_rank(est.spectrum);
  out.basis = est.basis.leftCols(out.rank);
  out.spectrum = std::move(est.spectrum);
  return out;
}

SweepOutcome run_experiment(const Config& cfg, const std::string& out_dir) {
  validate_config(cfg);
  const fs::path out(out_dir);
  fs::create_directories(out / "checkpoints");
  fs::create_directories(out / "traces");
  fs::create_directories(out / "charts");

  Dataset ds = make_dataset(cfg.data);
  save_dataset(ds, (out / "data.bin").string());
  const std::string hash = config_hash(cfg);
  const int depth = cfg.train.model == "rf" ? 2 : cfg.train.depth;

  std::vector<TrainJob> jobs;
  for (auto width : cfg.sweep.widths) {
    for (auto seed : cfg.sweep.train_seeds) {
      TrainJob job;
      job.width = width;
      job.seed = seed;
      jobs.push_back(std::move(job));
    }
  }

  run_pool(jobs.size(), [&](std::size_t i) {
    TrainJob& job = jobs[i];
    try {
      job.ckpt = train_cell(cfg, ds, job.width, job.seed,
                            (out / "checkpoints").string());
      if (cfg.train.model == "mlp") {
        Dw1Subspace sub = dw1_subspace(job.ckpt);
        job.spectrum = std::move(sub.spectrum);
        job.basis_dw1 = std::move(sub.basis);
        if (!job.ckpt.cached) {
          save_trace_csv(job.ckpt.record,
                         (out / "traces" /
                          ("train_w" + std::to_string(job.width) + "_s" +
                           std::to_string(job.seed) + ".csv"))
                             .string());
        }
      }
      job.ok = true;
    } catch (const std::exception& e) {
      job.ok = false;
      job.error = e.what();
    }
  });

  const std::string spectrum_path = (out / "spectrum.csv").string();
  {
    std::ofstream spec_out(spectrum_path, std::ios::trunc);
    if (!spec_out) throw DataError("sweep: cannot open " + spectrum_path);
    spec_out << "width,seed_train,index,sigma\n";
    for (const auto& job : jobs) {
      if (!job.ok) continue;
      for (Eigen::Index i = 0; i < job.spectrum.size(); ++i) {
        spec_out << job.width << "," << job.seed << "," << i << ","
                 << format_g(job.spectrum[i]) << "\n";
      }
    }
  }

  auto job_for = [&](Eigen::Index width, std::uint64_t seed) -> TrainJob& {
    for (auto& job : jobs) {
      if (job.width == width && job.seed == seed) return job;
    }
    throw Error("sweep: missing training job");  // unreachable
  };

  SweepOutcome outcome;
  std::vector<std::optional<ReconResult>> recon_results;
  for (auto width : cfg.sweep.widths) {
    for (const auto& method : cfg.sweep.methods) {
      for (auto ts : cfg.sweep.train_seeds) {
        for (auto rs : cfg.sweep.recon_seeds) {
          CellResult cell;
          cell.width = width;
          cell.method = method;
          cell.seed_train = ts;
          cell.seed_recon = rs;
          cell.depth = depth;
          outcome.cells.push_back(std::move(cell));
        }
      }
    }
  }
  recon_results.resize(outcome.cells.size());

  run_pool(outcome.cells.size(), [&](std::size_t i) {
    CellResult& cell = outcome.cells[i];
    try {
      const TrainJob& job = job_for(cell.width, cell.seed_train);
      if (!job.ok) throw Error("training failed: " + job.error);

      ParamMask mask = cfg.reconstruct.mask == "all" ? ParamMask::all_layers
                                                     : ParamMask::last_layer;
      ReconProblem problem;
      problem.model = job.ckpt.model;
      problem.delta = masked_delta(job.ckpt.record, job.ckpt.model, mask);
      problem.mask = mask;
      problem.n_candidates = cfg.reconstruct.candidates > 0
                                 ? cfg.reconstruct.candidates
                                 : ds.n();
      problem.solver = solver_from_string(cfg.reconstruct.solver);
      problem.ridge = cfg.reconstruct.ridge;

      ReconOptions opts;
      opts.lr = cfg.reconstruct.lr;
      opts.momentum = cfg.reconstruct.momentum;
      opts.iters = cfg.reconstruct.iters;
      opts.trace_stride = cfg.reconstruct.trace_stride;

      Rng rng = Rng::from(cell.seed_recon,
                          100000 + static_cast<std::uint64_t>(cell.width));
      ReconResult result;
      if (cell.method == "full-space") {
        result = run_full_space(problem, std::nullopt, opts, rng);
      } else {
        problem.basis = cell.method == "subspace-dw1" ? job.basis_dw1 : *ds.U;
        result = run_subspace(problem, std::nullopt, opts, rng);
      }

      save_recon_trace_csv(
          result,
          (out / "traces" /
           ("w" + std::to_string(cell.width) + "_" + cell.method + "_t" +
            std::to_string(cell.seed_train) + "_r" +
            std::to_string(cell.seed_recon) + ".csv"))
              .string());

      cell.rho_value = rho(ds.X, result.xhat).rho;
      cell.best_loss = result.best_loss;
      recon_results[i] = std::move(result);
      cell.ok = true;
    } catch (const std::exception& e) {
      cell.ok = false;
      cell.error = e.what();
    }
  });

  outcome.results_path = (out / "results.csv").string();
  {
    std::ofstream csv(outcome.results_path, std::ios::trunc);
    if (!csv) throw DataError("sweep: cannot open " + outcome.results_path);
    csv << "config_hash,version,seed_train,seed_recon,width,depth,method,"
           "rho\n";
    for (const auto& cell : outcome.cells) {
      csv << hash << "," << kArtifactVersion << "," << cell.seed_train << ","
          << cell.seed_recon << "," << cell.width << "," << cell.depth << ","
          << cell.method << "," << format_g(cell.rho_value) << "\n";
    }
  }

  {
    std::ofstream jsonl((out / "summary.jsonl").string(), std::ios::trunc);
    for (const auto& cell : outcome.cells) {
      nlohmann::ordered_json line;
      line["config_hash"] = hash;
      line["version"] = kArtifactVersion;
      line["width"] = cell.width;
      line["method"] = cell.method;
      line["seed_train"] = cell.seed_train;
      line["seed_recon"] = cell.seed_recon;
      line["ok"] = cell.ok;
      line["rho"] = cell.rho_value;
      line["best_loss"] = cell.best_loss;
      line["error"] = cell.error;
      jsonl << line.dump() << "\n";
    }
  }

  outcome.spectrum_path = spectrum_path;
  for (const auto& cell : outcome.cells) {
    if (!cell.ok) outcome.exit_code = 1;
  }

  try {
    auto series = aggregate_results_csv(outcome.results_path);
    outcome.chart_path = (out / "charts" / "rho_vs_width.svg").string();
    render_chart(series, ChartSpec{}, outcome.chart_path);
  } catch (const Error&) {
    outcome.chart_path.clear();  // every cell failed; nothing to draw
  }

  if (ds.d() == 3072) {
    for (std::size_t i = 0; i < outcome.cells.size(); ++i) {
      const CellResult& cell = outcome.cells[i];
      bool first_pair = cell.seed_train == cfg.sweep.train_seeds.front() &&
                        cell.seed_recon == cfg.sweep.recon_seeds.front();
      if (!cell.ok || !first_pair) continue;
      RhoResult match = rho(ds.X, recon_results[i]->xhat);
      image_grid(ds.X, recon_results[i]->xhat, match.matching,
                 (out / "charts" /
                  ("grid_w" + std::to_string(cell.width) + "_" + cell.method +
                   ".ppm"))
                     .string());
    }
  }

  return outcome;
}

}  // namespace deltarec
