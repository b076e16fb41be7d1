#pragma once

#include "deltarec/model.hpp"

#include <functional>
#include <string>
#include <vector>

namespace deltarec {

// k_p(x, x') = (1/p) phi(Vx+b)^T phi(Vx'+b)
double kernel_p(const RandomFeatures& rf, const Vector& x, const Vector& y);

struct McEstimate {
  double value = 0.0;
  double std_error = 0.0;
  long samples = 0;
};

// Monte-Carlo stand-in for k_inf(x, x') = E[phi(v'x+b) phi(v'x'+b)] with
// v ~ N(0, I/d), b ~ N(0, 1); there is no closed form for tanh.
McEstimate kernel_inf_mc(Activation act, Eigen::Index d, const Vector& x,
                         const Vector& y, long samples, Rng& rng);

/// Shared-draw oracle over a point set: one batch of (v, b) scores every
// point, giving all pairwise k_inf estimates from a common sample.
struct GridOracle {
  Matrix mean;
  Matrix std_error;
  long samples = 0;
};

GridOracle kernel_inf_mc_grid(Activation act, const Matrix& points,
                              long samples, Rng& rng);

using KernelFn = std::function<double(const Vector&, const Vector&)>;

double mmd_squared(const KernelFn& kernel, const Matrix& points_a,
                   const Vector& weights_a, const Matrix& points_b,
                   const Vector& weights_b);

struct BoundInputs {
  double m = 1.0;          // sup |phi|
  double lip = 1.0;        // sup |phi'|
  double d = 1.0;          // ambient (or subspace) dimension
  double eps = 0.1;        // kernel deviation target
  double delta = 0.1;      // failure probability
  double big_c = 1.0;      // RKHS constant, supplied by the caller
  double min_alpha = 1.0;  // c, lower bound on |alpha_i|
  double alpha_l1 = 1.0;   // ||alpha||_1 + ||alpha_hat||_1
};

struct BoundResult {
  double p_min = 0.0;
  double delta_max = 0.0;
  bool delta_ok = true;  // supplied delta within the admissible range
};

BoundResult lemma1_width_bound(const BoundInputs& in);
BoundResult theorem1_width_bound(const BoundInputs& in);

struct ConcentrationReport {
  double success_fraction = 0.0;
  std::vector<double> sup_deviations;  // one entry per trial
  double eps = 0.0;
  Eigen::Index d = 0;
  Eigen::Index p = 0;
  int grid_size = 0;
  long mc_samples = 0;
  double max_oracle_se = 0.0;
  bool se_budget_ok = false;  // 3 * max SE <= eps / 10
  // The sampled grid under-estimates the sphere supremum, so failures are
  // certain while passes are optimistic.
  std::string note;
};

ConcentrationReport concentration_trial(Activation act, Eigen::Index d,
                                        Eigen::Index p, double eps,
                                        int grid_size, int trials,
                                        long mc_samples, Rng& rng);

void save_concentration_csv(const ConcentrationReport& report,
                            const std::string& path);
void save_concentration_jsonl(const ConcentrationReport& report,
                              const std::string& path);

struct SeparationReport {
  Vector nearest_distance;        // per true point
  std::vector<int> nearest_index;
  Vector bump_value;              // f_j at the nearest reconstruction
  double separation = 0.0;
  bool pass = false;
};

SeparationReport separation_witness(const Matrix& x, const Matrix& xhat,
                                    double separation);

}  // namespace deltarec
