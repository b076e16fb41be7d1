#pragma once

#include "deltarec/data.hpp"
#include "deltarec/model.hpp"

#include <string>
#include <vector>

namespace deltarec {

struct TrainOptions {
  double lr = 1e-4;
  double loss_target = 1e-7;
  long max_epochs = 1000000;
  double divergence_limit = 1e12;
  // First-layer updates stay in the span of the data rows, so when d >> n
  // the run can carry an n-column coefficient matrix instead of W1. Exact
  // up to float ordering; disable to force the dense path.
  bool allow_lowrank = true;
};

struct TrainRecord {
  Vector theta0;
  Vector thetaf;
  std::vector<double> loss_trace;
  long epochs = 0;
  bool converged = false;

  Vector delta() const { return thetaf - theta0; }
};

struct TrainOutcome {
  AnyModel model;
  TrainRecord record;
};

double mse_loss(const AnyModel& m, const Dataset& ds);

// Full-batch gradient descent on (1/2) sum_i ||f(x_i) - y_i||^2.
TrainOutcome train_gd(const AnyModel& initial, const Dataset& ds,
                      const TrainOptions& opts = {});

struct RfFit {
  Vector theta_star;
  Vector alpha;
  double residual = 0.0;
  double ridge_used = 0.0;
};

// Min-norm interpolator theta* = Phi^T (Phi Phi^T)^-1 y.
RfFit rf_min_norm(const RandomFeatures& rf, const Dataset& ds,
                  double ridge = 0.0);

Vector masked_delta(const TrainRecord& record, const AnyModel& like,
                    ParamMask mask);

void save_trace_csv(const TrainRecord& record, const std::string& path,
                    long stride = 100);

}  // namespace deltarec
