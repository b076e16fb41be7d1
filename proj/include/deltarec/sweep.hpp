#pragma once

#include "deltarec/config.hpp"
#include "deltarec/data.hpp"
#include "deltarec/train.hpp"

#include <limits>
#include <string>
#include <vector>

namespace deltarec {

Dataset make_dataset(const DataConfig& cfg);

struct Checkpoint {
  AnyModel model;  // trained weights
  TrainRecord record;
  bool cached = false;  // loaded from disk instead of trained
};

// Trains one (width, seed) cell, or reloads it from cache_dir. The cache
// key covers the data hash, the architecture, and the seed; anything else
// changing invalidates the file name itself.
Checkpoint train_cell(const Config& cfg, const Dataset& ds,
                      Eigen::Index width, std::uint64_t train_seed,
                      const std::string& cache_dir);

struct Dw1Subspace {
  Matrix basis;    // leading right singular vectors of dW1
  Vector spectrum; // all singular values
  Eigen::Index rank = 0;
};

// Estimated data subspace from the first-layer weight change; the rank is
// picked at the sharpest spectral drop. Mlp checkpoints only.
Dw1Subspace dw1_subspace(const Checkpoint& ckpt);

struct CellResult {
  Eigen::Index width = 0;
  std::string method;
  std::uint64_t seed_train = 0;
  std::uint64_t seed_recon = 0;
  int depth = 0;
  double rho_value = std::numeric_limits<double>::quiet_NaN();
  double best_loss = std::numeric_limits<double>::quiet_NaN();
  bool ok = false;
  std::string error;
};

struct SweepOutcome {
  std::vector<CellResult> cells;
  std::string results_path;
  std::string spectrum_path;
  std::string chart_path;
  int exit_code = 0;  // 1 when any cell failed
};

// Full grid: width x method x train seed x recon seed. Cell failures are
// recorded and the sweep continues. Worker count comes from the
// DELTAREC_WORKERS environment variable (default 1); results are written
// in a fixed order regardless of scheduling.
SweepOutcome run_experiment(const Config& cfg, const std::string& out_dir);

}  // namespace deltarec
