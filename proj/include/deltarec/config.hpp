#pragma once

#include "deltarec/linalg.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace deltarec {

struct DataConfig {
  std::string kind = "synthetic";  // synthetic | cifar10
  Eigen::Index n = 100;
  Eigen::Index d = 60;
  Eigen::Index r = 30;
  double sigma = 0.5;
  std::string cifar_path;
  std::uint64_t seed = 1;
};

struct TrainConfig {
  std::string model = "mlp";  // mlp | rf
  int depth = 2;
  Eigen::Index width = 400;
  Eigen::Index classes = 0;   // 0 = take the label count from the data
  std::string rf_fit = "min-norm";  // min-norm | gd
  double lr = 1e-4;
  double loss_target = 1e-7;
  long max_epochs = 1000000;
};

struct ReconstructConfig {
  std::string mask = "last";    // last | all
  std::string solver = "auto";  // auto | dense | cg
  double lr = 20.0;
  double momentum = 0.9;
  long iters = 10000;
  long trace_stride = 100;
  double ridge = -1.0;          // negative = ridge on demand
  Eigen::Index candidates = 0;  // 0 = one per training sample
};

struct SweepConfig {
  std::vector<Eigen::Index> widths = {100, 200, 400, 800, 1600};
  std::vector<std::uint64_t> train_seeds = {1, 2, 3};
  std::vector<std::uint64_t> recon_seeds = {1, 2, 3, 4, 5};
  std::vector<std::string> methods = {"full-space", "subspace-dw1",
                                      "true-subspace"};
};

struct Config {
  DataConfig data;
  TrainConfig train;
  ReconstructConfig reconstruct;
  SweepConfig sweep;
};

// INI-style text: [section] headers, key = value lines, # or ; comments.
// Unknown sections or keys are ConfigErrors, as are unparseable values.
Config parse_config(std::istream& in);
Config load_config(const std::string& path);

// Canonical text form: fixed section and key order, %.17g floats. Parsing
// the output reproduces the config exactly.
std::string serialize_config(const Config& c);

// FNV-1a over the canonical form, 16 hex digits.
std::string config_hash(const Config& c);

// Cross-field checks (model/method compatibility, ranges). ConfigError.
void validate_config(const Config& c);

}  // namespace deltarec
