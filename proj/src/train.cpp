#include "deltarec/train.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <utility>

namespace deltarec {

namespace {

void check_fit(const AnyModel& m, const Dataset& ds) {
  if (input_dim(m) != ds.d())
    throw DimensionError("train: model input dimension does not match data");
  if (output_dim(m) != ds.k())
    throw DimensionError("train: model output dimension does not match labels");
}

[[noreturn]] void report_divergence(std::vector<double> trace) {
  throw DivergenceError("train: loss diverged", std::move(trace));
}

struct EpochLoop {
  const TrainOptions& opts;
  std::vector<double> trace;
  long epochs = 0;
  bool converged = false;

  explicit EpochLoop(const TrainOptions& o) : opts(o) {
    if (o.lr <= 0) throw ConfigError("train: lr must be positive");
    if (o.max_epochs < 0) throw ConfigError("train: max_epochs must be >= 0");
  }

  // Returns true while another update step should run.
  bool observe(double loss) {
    if (!std::isfinite(loss) || loss > opts.divergence_limit) {
      trace.push_back(loss);
      report_divergence(std::move(trace));
    }
    trace.push_back(loss);
    if (loss <= opts.loss_target) {
      converged = true;
      return false;
    }
    if (epochs >= opts.max_epochs) return false;
    ++epochs;
    return true;
  }
};

TrainOutcome train_mlp_dense(Mlp m, const Dataset& ds,
                             const TrainOptions& opts) {
  TrainRecord record;
  record.theta0 = flatten(m);
  EpochLoop loop(opts);
  for (;;) {
    MlpForwardCache cache = mlp_forward_cache(m, ds.X);
    Matrix err = cache.pre.back() - ds.Y;
    if (!loop.observe(0.5 * err.squaredNorm())) break;
    auto grads = mlp_backprop(m, cache, err);
    for (std::size_t l = 0; l < m.layers.size(); ++l)
      m.layers[l] -= opts.lr * grads[l];
  }
  record.thetaf = flatten(m);
  record.loss_trace = std::move(loop.trace);
  record.epochs = loop.epochs;
  record.converged = loop.converged;
  return {AnyModel(std::move(m)), std::move(record)};
}

// Keeps W1 as W1_0 + Xi * X; every quantity the loop touches is n-sized in
// the data dimension.
TrainOutcome train_mlp_lowrank(Mlp m, const Dataset& ds,
                               const TrainOptions& opts) {
  const Eigen::Index n = ds.n();
  const std::size_t depth = m.layers.size();
  TrainRecord record;
  record.theta0 = flatten(m);
  Matrix a1 = ds.X * m.layers[0].transpose();  // n x p, tracks X W1^T
  Matrix sx = ds.X * ds.X.transpose();         // n x n
  Matrix xi = Matrix::Zero(m.layers[0].rows(), n);

  EpochLoop loop(opts);
  std::vector<Matrix> pre(depth), post(depth);
  for (;;) {
    pre[0] = a1;
    post[0] = activate(m.activation, pre[0]);
    for (std::size_t l = 1; l < depth; ++l) {
      pre[l] = post[l - 1] * m.layers[l].transpose();
      if (l + 1 < depth) post[l] = activate(m.activation, pre[l]);
    }
    Matrix err = pre[depth - 1] - ds.Y;
    if (!loop.observe(0.5 * err.squaredNorm())) break;

    Matrix delta = err;
    for (std::size_t l = depth; l-- > 1;) {
      Matrix grad = delta.transpose() * post[l - 1];
      delta = (delta * m.layers[l])
                  .cwiseProduct(activate_derivative(m.activation, pre[l - 1]));
      m.layers[l] -= opts.lr * grad;
    }
    xi -= opts.lr * delta.transpose();
    a1 -= opts.lr * (sx * delta);
  }
  m.layers[0] += xi * ds.X;
  record.thetaf = flatten(m);
  record.loss_trace = std::move(loop.trace);
  record.epochs = loop.epochs;
  record.converged = loop.converged;
  return {AnyModel(std::move(m)), std::move(record)};
}

TrainOutcome train_rf(RandomFeatures rf, const Dataset& ds,
                      const TrainOptions& opts) {
  Matrix phi = rf_features_batch(rf, ds.X);
  Vector y = ds.Y.col(0);
  TrainRecord record;
  record.theta0 = rf.theta;
  EpochLoop loop(opts);
  for (;;) {
    Vector err = phi * rf.theta - y;
    if (!loop.observe(0.5 * err.squaredNorm())) break;
    rf.theta -= opts.lr * (phi.transpose() * err);
  }
  record.thetaf = rf.theta;
  record.loss_trace = std::move(loop.trace);
  record.epochs = loop.epochs;
  record.converged = loop.converged;
  return {AnyModel(std::move(rf)), std::move(record)};
}

}  // namespace

double mse_loss(const AnyModel& m, const Dataset& ds) {
  check_fit(m, ds);
  return 0.5 * (forward_batch(m, ds.X) - ds.Y).squaredNorm();
}

TrainOutcome train_gd(const AnyModel& initial, const Dataset& ds,
                      const TrainOptions& opts) {
  check_fit(initial, ds);
  if (const Mlp* mlp = std::get_if<Mlp>(&initial)) {
    bool lowrank = opts.allow_lowrank && mlp->layers.size() >= 2 &&
                   ds.d() > 2 * ds.n();
    return lowrank ? train_mlp_lowrank(*mlp, ds, opts)
                   : train_mlp_dense(*mlp, ds, opts);
  }
  return train_rf(std::get<RandomFeatures>(initial), ds, opts);
}

RfFit rf_min_norm(const RandomFeatures& rf, const Dataset& ds, double ridge) {
  check_fit(AnyModel(rf), ds);
  if (ds.k() != 1)
    throw DimensionError("rf_min_norm: labels must be scalar");
  const Eigen::Index n = ds.n(), p = rf.theta.size();
  if (p <= n)
    throw DimensionError("rf_min_norm: needs p > n (overparameterized)");
  Matrix phi = rf_features_batch(rf, ds.X);
  Matrix gram = phi * phi.transpose();
  Vector y = ds.Y.col(0);
  RfFit fit;
  fit.ridge_used = ridge;
  try {
    fit.alpha = la::solve_spd(gram, y, ridge);
  } catch (const SolverError&) {
    double fallback = la::default_ridge(gram);
    if (fallback <= ridge) throw;
    fit.ridge_used = fallback;
    fit.alpha = la::solve_spd(gram, y, fallback);
  }
  fit.theta_star = phi.transpose() * fit.alpha;
  fit.residual = (phi * fit.theta_star - y).norm();
  return fit;
}

Vector masked_delta(const TrainRecord& record, const AnyModel& like,
                    ParamMask mask) {
  AnyModel at_start = unflatten(like, record.theta0);
  AnyModel at_end = unflatten(like, record.thetaf);
  return masked_flatten(at_end, mask) - masked_flatten(at_start, mask);
}

void save_trace_csv(const TrainRecord& record, const std::string& path,
                    long stride) {
  if (stride < 1) throw ConfigError("trace csv: stride must be >= 1");
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("trace csv: cannot open " + path);
  out << "epoch,loss\n";
  char line[64];
  const long last = static_cast<long>(record.loss_trace.size()) - 1;
  for (long e = 0; e <= last; ++e) {
    if (e % stride != 0 && e != last) continue;
    std::snprintf(line, sizeof(line), "%ld,%.17g\n", e, record.loss_trace[e]);
    out << line;
  }
}

}  // namespace deltarec
