#include "deltarec/kernels.hpp"

#include "deltarec/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

namespace deltarec {

namespace {

constexpr long kOracleChunk = 65536;

std::string format_g(double value) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", value);
  return buf;
}

void check_bound_inputs(const BoundInputs& in, bool theorem) {
  bool ok = in.m > 0.0 && in.lip > 0.0 && in.d > 0.0 && in.delta > 0.0;
  if (theorem) {
    ok = ok && in.big_c > 0.0 && in.min_alpha > 0.0 && in.alpha_l1 > 0.0;
  } else {
    ok = ok && in.eps > 0.0;
  }
  if (!ok) throw ConfigError("bound inputs must be strictly positive");
}

}  // namespace

GridOracle kernel_inf_mc_grid(Activation act, const Matrix& points,
                              long samples, Rng& rng) {
  if (samples < 1) throw ConfigError("kernel_inf_mc: samples must be >= 1");
  if (points.rows() < 1 || points.cols() < 1) {
    throw DimensionError("kernel_inf_mc: need a non-empty point set");
  }
  const Eigen::Index g = points.rows();
  const Eigen::Index d = points.cols();
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

  Matrix sum = Matrix::Zero(g, g);
  Matrix sum_sq = Matrix::Zero(g, g);
  long done = 0;
  while (done < samples) {
    const long chunk = std::min(kOracleChunk, samples - done);
    Matrix w(chunk, d);
    Vector b(chunk);
    for (long s = 0; s < chunk; ++s) {
      w.row(s) = (rng.gaussian_vector(d) * inv_sqrt_d).transpose();
      b[s] = rng.gaussian();
    }
    Matrix pre = points * w.transpose();
    pre.rowwise() += b.transpose();
    Matrix f = activate(act, pre);              // g x chunk
    sum.noalias() += f * f.transpose();
    Matrix f_sq = f.cwiseProduct(f);
    sum_sq.noalias() += f_sq * f_sq.transpose();
    done += chunk;
  }

  GridOracle out;
  out.samples = samples;
  const double n = static_cast<double>(samples);
  out.mean = sum / n;
  if (samples > 1) {
    Matrix var =
        ((sum_sq - n * out.mean.cwiseProduct(out.mean)) / (n - 1.0))
            .cwiseMax(0.0);
    out.std_error = (var / n).cwiseSqrt();
  } else {
    out.std_error = Matrix::Zero(g, g);
  }
  return out;
}

double kernel_p(const RandomFeatures& rf, const Vector& x, const Vector& y) {
  return rf_features(rf, x).dot(rf_features(rf, y));
}

McEstimate kernel_inf_mc(Activation act, Eigen::Index d, const Vector& x,
                         const Vector& y, long samples, Rng& rng) {
  if (samples < 1) throw ConfigError("kernel_inf_mc: samples must be >= 1");
  if (x.size() != d || y.size() != d) {
    throw DimensionError("kernel_inf_mc: points must have length d");
  }
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  double sum = 0.0;
  double sum_sq = 0.0;
  for (long s = 0; s < samples; ++s) {
    Vector v = rng.gaussian_vector(d) * inv_sqrt_d;
    double b = rng.gaussian();
    Matrix pre(1, 2);
    pre(0, 0) = v.dot(x) + b;
    pre(0, 1) = v.dot(y) + b;
    Matrix phi = activate(act, pre);
    double product = phi(0, 0) * phi(0, 1);
    sum += product;
    sum_sq += product * product;
  }
  McEstimate out;
  out.samples = samples;
  const double n = static_cast<double>(samples);
  out.value = sum / n;
  if (samples > 1) {
    double var = std::max(0.0, (sum_sq - n * out.value * out.value) / (n - 1.0));
    out.std_error = std::sqrt(var / n);
  }
  return out;
}

double mmd_squared(const KernelFn& kernel, const Matrix& points_a,
                   const Vector& weights_a, const Matrix& points_b,
                   const Vector& weights_b) {
  if (points_a.rows() != weights_a.size() ||
      points_b.rows() != weights_b.size()) {
    throw DimensionError("mmd_squared: one weight per point");
  }
  if (points_a.cols() != points_b.cols()) {
    throw DimensionError("mmd_squared: point dimensions must match");
  }
  if (!weights_a.allFinite() || !weights_b.allFinite()) {
    throw DataError("mmd_squared: weights must be finite");
  }

  auto pair_sum = [&](const Matrix& pa, const Vector& wa, const Matrix& pb,
                      const Vector& wb) {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < pa.rows(); ++i) {
      for (Eigen::Index j = 0; j < pb.rows(); ++j) {
        acc += wa[i] * wb[j] *
               kernel(pa.row(i).transpose(), pb.row(j).transpose());
      }
    }
    return acc;
  };

  double total = pair_sum(points_a, weights_a, points_a, weights_a) -
                 2.0 * pair_sum(points_a, weights_a, points_b, weights_b) +
                 pair_sum(points_b, weights_b, points_b, weights_b);
  if (total < 0.0 && total >= -1e-12) total = 0.0;
  return total;
}

BoundResult lemma1_width_bound(const BoundInputs& in) {
  check_bound_inputs(in, false);
  const double sd = std::sqrt(in.d);
  const double m4 = in.m * in.m * in.m * in.m;
  BoundResult out;
  out.delta_max = 4.0 * (1.0 + 2.0 * in.d) * in.lip * in.m / (sd * in.eps);
  const double lead = 8.0 * m4 * (2.0 * in.d + 1.0) / (in.eps * in.eps);
  const double inner =
      std::log((2.0 + 4.0 * in.d) / in.delta) +
      (2.0 * in.d / (2.0 * in.d + 1.0)) *
          std::log(6.0 * in.lip * in.m / (sd * in.eps));
  out.p_min = lead * inner;
  out.delta_ok = in.delta <= out.delta_max;
  return out;
}

BoundResult theorem1_width_bound(const BoundInputs& in) {
  check_bound_inputs(in, true);
  const double sd = std::sqrt(in.d);
  const double m4 = in.m * in.m * in.m * in.m;
  const double s2 = in.alpha_l1 * in.alpha_l1;
  const double c2 = in.min_alpha * in.min_alpha;
  BoundResult out;
  out.delta_max =
      16.0 * in.big_c * (1.0 + 2.0 * in.d) * in.lip * in.m * s2 / (sd * c2);
  const double lead = 128.0 * in.big_c * in.big_c * m4 * (2.0 * in.d + 1.0) *
                      s2 * s2 / (c2 * c2);
  const double inner =
      std::log((2.0 + 4.0 * in.d) / in.delta) +
      (2.0 * in.d / (2.0 * in.d + 1.0)) *
          std::log(24.0 * in.big_c * in.lip * in.m * s2 / (sd * c2));
  out.p_min = lead * inner;
  out.delta_ok = in.delta <= out.delta_max;
  return out;
}

ConcentrationReport concentration_trial(Activation act, Eigen::Index d,
                                        Eigen::Index p, double eps,
                                        int grid_size, int trials,
                                        long mc_samples, Rng& rng) {
  if (grid_size < 2) throw ConfigError("concentration: grid_size must be >= 2");
  if (d < 1 || p < 1) throw DimensionError("concentration: need d >= 1, p >= 1");
  if (trials < 1) throw ConfigError("concentration: trials must be >= 1");
  if (mc_samples < 2) throw ConfigError("concentration: mc_samples must be >= 2");
  if (!(eps > 0.0)) throw ConfigError("concentration: eps must be positive");

  const double radius = std::sqrt(static_cast<double>(d));
  Matrix grid(grid_size, d);
  for (int i = 0; i < grid_size; ++i) {
    grid.row(i) = rng.sphere_point(d, radius).transpose();
  }

  GridOracle oracle = kernel_inf_mc_grid(act, grid, mc_samples, rng);

  ConcentrationReport report;
  report.eps = eps;
  report.d = d;
  report.p = p;
  report.grid_size = grid_size;
  report.mc_samples = mc_samples;
  report.max_oracle_se = oracle.std_error.maxCoeff();
  report.se_budget_ok = 3.0 * report.max_oracle_se <= eps / 10.0;
  report.note =
      "grid supremum under-estimates the sphere supremum: "
      "failing trials are certain failures, passing trials are optimistic";

  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  int passes = 0;
  for (int t = 0; t < trials; ++t) {
    Matrix v = rng.gaussian_matrix(p, d) * inv_sqrt_d;
    Vector b = rng.gaussian_vector(p);
    Matrix pre = grid * v.transpose();
    pre.rowwise() += b.transpose();
    Matrix features = activate(act, pre);
    Matrix k_p_grid =
        (features * features.transpose()) / static_cast<double>(p);
    double sup_dev = (k_p_grid - oracle.mean).cwiseAbs().maxCoeff();
    report.sup_deviations.push_back(sup_dev);
    if (sup_dev <= eps) ++passes;
  }
  report.success_fraction =
      static_cast<double>(passes) / static_cast<double>(trials);
  return report;
}

void save_concentration_csv(const ConcentrationReport& report,
                            const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write concentration csv: " + path);
  out << "trial,sup_deviation,pass\n";
  for (std::size_t t = 0; t < report.sup_deviations.size(); ++t) {
    out << t << ',' << format_g(report.sup_deviations[t]) << ','
        << (report.sup_deviations[t] <= report.eps ? 1 : 0) << '\n';
  }
  if (!out) throw DataError("failed writing concentration csv: " + path);
}

void save_concentration_jsonl(const ConcentrationReport& report,
                              const std::string& path) {
  nlohmann::ordered_json record;
  record["eps"] = report.eps;
  record["d"] = report.d;
  record["p"] = report.p;
  record["grid_size"] = report.grid_size;
  record["trials"] = report.sup_deviations.size();
  record["mc_samples"] = report.mc_samples;
  record["success_fraction"] = report.success_fraction;
  record["max_oracle_se"] = report.max_oracle_se;
  record["se_budget_ok"] = report.se_budget_ok;
  record["note"] = report.note;
  std::ofstream out(path, std::ios::app);
  if (!out) throw DataError("cannot write concentration report: " + path);
  out << record.dump() << '\n';
  if (!out) throw DataError("failed writing concentration report: " + path);
}

SeparationReport separation_witness(const Matrix& x, const Matrix& xhat,
                                    double separation) {
  if (x.cols() != xhat.cols()) {
    throw DimensionError("separation_witness: dimensions must match");
  }
  if (x.rows() < 1 || xhat.rows() < 1) {
    throw DimensionError("separation_witness: need at least one point");
  }
  if (!(separation > 0.0)) {
    throw ConfigError("separation_witness: separation must be positive");
  }

  SeparationReport report;
  report.separation = separation;
  report.nearest_distance = Vector(x.rows());
  report.bump_value = Vector(x.rows());
  report.nearest_index.resize(x.rows());
  report.pass = true;
  const double sep_sq = separation * separation;
  for (Eigen::Index j = 0; j < x.rows(); ++j) {
    double best = std::numeric_limits<double>::infinity();
    int best_i = 0;
    for (Eigen::Index i = 0; i < xhat.rows(); ++i) {
      double dist = (x.row(j) - xhat.row(i)).norm();
      if (dist < best) {
        best = dist;
        best_i = static_cast<int>(i);
      }
    }
    report.nearest_distance[j] = best;
    report.nearest_index[j] = best_i;
    const double r_sq = best * best;
    report.bump_value[j] =
        best < separation ? std::exp(r_sq / (r_sq - sep_sq)) : 0.0;
    if (!(best < separation)) report.pass = false;
  }
  return report;
}

}  // namespace deltarec
