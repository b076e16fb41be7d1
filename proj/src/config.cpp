#include "deltarec/config.hpp"

#include "deltarec/errors.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace deltarec {

namespace {

std::string trim(const std::string& s) {
  auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  std::string item;
  std::stringstream ss(value);
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config: bad number for '" + key + "': " + value);
  }
}

long parse_long(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    long v = std::stol(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config: bad integer for '" + key + "': " + value);
  }
}

std::uint64_t parse_seed(const std::string& key, const std::string& value) {
  long v = parse_long(key, value);
  if (v < 0) throw ConfigError("config: seed must be >= 0 for '" + key + "'");
  return static_cast<std::uint64_t>(v);
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void apply_data(DataConfig& c, const std::string& key,
                const std::string& value) {
  if (key == "kind") c.kind = value;
  else if (key == "n") c.n = parse_long(key, value);
  else if (key == "d") c.d = parse_long(key, value);
  else if (key == "r") c.r = parse_long(key, value);
  else if (key == "sigma") c.sigma = parse_double(key, value);
  else if (key == "cifar_path") c.cifar_path = value;
  else if (key == "seed") c.seed = parse_seed(key, value);
  else throw ConfigError("config: unknown key 'data." + key + "'");
}

void apply_train(TrainConfig& c, const std::string& key,
                 const std::string& value) {
  if (key == "model") c.model = value;
  else if (key == "depth") c.depth = static_cast<int>(parse_long(key, value));
  else if (key == "width") c.width = parse_long(key, value);
  else if (key == "classes") c.classes = parse_long(key, value);
  else if (key == "rf_fit") c.rf_fit = value;
  else if (key == "lr") c.lr = parse_double(key, value);
  else if (key == "loss_target") c.loss_target = parse_double(key, value);
  else if (key == "max_epochs") c.max_epochs = parse_long(key, value);
  else throw ConfigError("config: unknown key 'train." + key + "'");
}

void apply_reconstruct(ReconstructConfig& c, const std::string& key,
                       const std::string& value) {
  if (key == "mask") c.mask = value;
  else if (key == "solver") c.solver = value;
  else if (key == "lr") c.lr = parse_double(key, value);
  else if (key == "momentum") c.momentum = parse_double(key, value);
  else if (key == "iters") c.iters = parse_long(key, value);
  else if (key == "trace_stride") c.trace_stride = parse_long(key, value);
  else if (key == "ridge") c.ridge = parse_double(key, value);
  else if (key == "candidates") c.candidates = parse_long(key, value);
  else throw ConfigError("config: unknown key 'reconstruct." + key + "'");
}

void apply_sweep(SweepConfig& c, const std::string& key,
                 const std::string& value) {
  if (key == "widths") {
    c.widths.clear();
    for (const auto& item : split_list(value))
      c.widths.push_back(parse_long(key, item));
  } else if (key == "train_seeds") {
    c.train_seeds.clear();
    for (const auto& item : split_list(value))
      c.train_seeds.push_back(parse_seed(key, item));
  } else if (key == "recon_seeds") {
    c.recon_seeds.clear();
    for (const auto& item : split_list(value))
      c.recon_seeds.push_back(parse_seed(key, item));
  } else if (key == "methods") {
    c.methods = split_list(value);
  } else {
    throw ConfigError("config: unknown key 'sweep." + key + "'");
  }
}

template <typename T>
void reject_duplicates(const std::vector<T>& v, const std::string& what) {
  std::set<T> seen(v.begin(), v.end());
  if (seen.size() != v.size())
    throw ConfigError("config: duplicate entries in sweep." + what);
}

}  // namespace

Config parse_config(std::istream& in) {
  Config cfg;
  std::string line;
  std::string section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto comment = line.find_first_of("#;");
    if (comment != std::string::npos) line = line.substr(0, comment);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("config: unterminated section at line " +
                          std::to_string(line_no));
      section = trim(line.substr(1, line.size() - 2));
      if (section != "data" && section != "train" &&
          section != "reconstruct" && section != "sweep")
        throw ConfigError("config: unknown section [" + section + "]");
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config: expected key = value at line " +
                        std::to_string(line_no));
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw ConfigError("config: empty key at line " +
                        std::to_string(line_no));
    if (section.empty())
      throw ConfigError("config: key '" + key + "' outside any section");
    if (section == "data") apply_data(cfg.data, key, value);
    else if (section == "train") apply_train(cfg.train, key, value);
    else if (section == "reconstruct") apply_reconstruct(cfg.reconstruct, key, value);
    else apply_sweep(cfg.sweep, key, value);
  }
  return cfg;
}

Config load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  return parse_config(in);
}

std::string serialize_config(const Config& c) {
  std::ostringstream out;
  out << "[data]\n";
  out << "kind = " << c.data.kind << "\n";
  out << "n = " << c.data.n << "\n";
  out << "d = " << c.data.d << "\n";
  out << "r = " << c.data.r << "\n";
  out << "sigma = " << format_double(c.data.sigma) << "\n";
  out << "cifar_path = " << c.data.cifar_path << "\n";
  out << "seed = " << c.data.seed << "\n";
  out << "[train]\n";
  out << "model = " << c.train.model << "\n";
  out << "depth = " << c.train.depth << "\n";
  out << "width = " << c.train.width << "\n";
  out << "classes = " << c.train.classes << "\n";
  out << "rf_fit = " << c.train.rf_fit << "\n";
  out << "lr = " << format_double(c.train.lr) << "\n";
  out << "loss_target = " << format_double(c.train.loss_target) << "\n";
  out << "max_epochs = " << c.train.max_epochs << "\n";
  out << "[reconstruct]\n";
  out << "mask = " << c.reconstruct.mask << "\n";
  out << "solver = " << c.reconstruct.solver << "\n";
  out << "lr = " << format_double(c.reconstruct.lr) << "\n";
  out << "momentum = " << format_double(c.reconstruct.momentum) << "\n";
  out << "iters = " << c.reconstruct.iters << "\n";
  out << "trace_stride = " << c.reconstruct.trace_stride << "\n";
  out << "ridge = " << format_double(c.reconstruct.ridge) << "\n";
  out << "candidates = " << c.reconstruct.candidates << "\n";
  out << "[sweep]\n";
  out << "widths = ";
  for (std::size_t i = 0; i < c.sweep.widths.size(); ++i)
    out << (i ? ", " : "") << c.sweep.widths[i];
  out << "\n";
  out << "train_seeds = ";
  for (std::size_t i = 0; i < c.sweep.train_seeds.size(); ++i)
    out << (i ? ", " : "") << c.sweep.train_seeds[i];
  out << "\n";
  out << "recon_seeds = ";
  for (std::size_t i = 0; i < c.sweep.recon_seeds.size(); ++i)
    out << (i ? ", " : "") << c.sweep.recon_seeds[i];
  out << "\n";
  out << "methods = ";
  for (std::size_t i = 0; i < c.sweep.methods.size(); ++i)
    out << (i ? ", " : "") << c.sweep.methods[i];
  out << "\n";
  return out.str();
}

std::string config_hash(const Config& c) {
  std::string text = serialize_config(c);
  std::uint64_t hash = 1469598103934665603ull;
  for (unsigned char byte : text) {
    hash ^= byte;
    hash *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(hash));
  return buf;
}

void validate_config(const Config& c) {
  if (c.data.kind != "synthetic" && c.data.kind != "cifar10")
    throw ConfigError("config: data.kind must be synthetic or cifar10");
  if (c.data.n < 1) throw ConfigError("config: data.n must be >= 1");
  if (c.data.kind == "synthetic") {
    if (c.data.d < 1 || c.data.r < 1 || c.data.r > c.data.d)
      throw ConfigError("config: need 1 <= data.r <= data.d");
    if (c.data.sigma < 0)
      throw ConfigError("config: data.sigma must be >= 0");
  } else if (c.data.cifar_path.empty()) {
    throw ConfigError("config: data.cifar_path is required for cifar10");
  }

  if (c.train.model != "mlp" && c.train.model != "rf")
    throw ConfigError("config: train.model must be mlp or rf");
  if (c.train.model == "mlp" && c.train.depth < 2)
    throw ConfigError("config: train.depth must be >= 2");
  if (c.train.model == "rf" && c.train.rf_fit != "min-norm" &&
      c.train.rf_fit != "gd")
    throw ConfigError("config: train.rf_fit must be min-norm or gd");
  if (c.train.width < 1) throw ConfigError("config: train.width must be >= 1");
  if (c.train.classes < 0)
    throw ConfigError("config: train.classes must be >= 0");
  if (c.train.lr <= 0 || c.train.loss_target <= 0)
    throw ConfigError("config: train.lr and train.loss_target must be > 0");
  if (c.train.max_epochs < 1)
    throw ConfigError("config: train.max_epochs must be >= 1");

  if (c.reconstruct.mask != "last" && c.reconstruct.mask != "all")
    throw ConfigError("config: reconstruct.mask must be last or all");
  if (c.reconstruct.solver != "auto" && c.reconstruct.solver != "dense" &&
      c.reconstruct.solver != "cg")
    throw ConfigError("config: reconstruct.solver must be auto, dense, or cg");
  if (c.reconstruct.lr <= 0)
    throw ConfigError("config: reconstruct.lr must be > 0");
  if (c.reconstruct.momentum < 0 || c.reconstruct.momentum >= 1)
    throw ConfigError("config: reconstruct.momentum must be in [0, 1)");
  if (c.reconstruct.iters < 0 || c.reconstruct.trace_stride < 1)
    throw ConfigError("config: bad reconstruct.iters or trace_stride");
  if (c.reconstruct.candidates < 0)
    throw ConfigError("config: reconstruct.candidates must be >= 0");

  if (c.sweep.widths.empty() || c.sweep.train_seeds.empty() ||
      c.sweep.recon_seeds.empty() || c.sweep.methods.empty())
    throw ConfigError("config: sweep lists must be non-empty");
  for (auto w : c.sweep.widths)
    if (w < 1) throw ConfigError("config: sweep.widths must be >= 1");
  reject_duplicates(c.sweep.widths, "widths");
  reject_duplicates(c.sweep.train_seeds, "train_seeds");
  reject_duplicates(c.sweep.recon_seeds, "recon_seeds");
  reject_duplicates(c.sweep.methods, "methods");
  for (const auto& m : c.sweep.methods) {
    if (m != "full-space" && m != "subspace-dw1" && m != "true-subspace")
      throw ConfigError("config: unknown sweep method '" + m + "'");
    if (m == "true-subspace" && c.data.kind != "synthetic")
      throw ConfigError(
          "config: true-subspace needs the synthetic generator's basis");
    if (m == "subspace-dw1" && c.train.model == "rf")
      throw ConfigError(
          "config: subspace-dw1 needs a trainable first layer; rf freezes it");
  }
  if (c.train.model == "rf" && c.data.kind == "cifar10")
    throw ConfigError("config: rf is scalar-output; cifar10 needs mlp");
}

}  // namespace deltarec
