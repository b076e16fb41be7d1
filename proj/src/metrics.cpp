#include "deltarec/metrics.hpp"

#include "deltarec/data.hpp"
#include "deltarec/errors.hpp"

#include <cmath>

namespace deltarec {

namespace {

Matrix rescale_rows(const Matrix& x) {
  const double radius = std::sqrt(static_cast<double>(x.cols()));
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    out.row(i) = project_to_sphere(x.row(i).transpose(), radius).transpose();
  }
  return out;
}

void check_pair(const Matrix& x_true, const Matrix& x_hat, bool same_count) {
  if (x_true.rows() < 1 || x_hat.rows() < 1)
    throw DimensionError("metrics: need at least one row on each side");
  if (x_true.cols() != x_hat.cols())
    throw DimensionError("metrics: column counts differ");
  if (same_count && x_true.rows() != x_hat.rows())
    throw DimensionError("metrics: rho needs equally many rows");
}

}  // namespace

RhoResult rho(const Matrix& x_true, const Matrix& x_hat) {
  check_pair(x_true, x_hat, true);
  const Eigen::Index n = x_true.rows();
  Matrix scaled = rescale_rows(x_true);

  Matrix cost(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      cost(i, j) = (scaled.row(i) - x_hat.row(j)).norm();
    }
  }

  RhoResult out;
  out.matching = la::assignment_min_cost(cost);
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    total += cost(i, out.matching[static_cast<std::size_t>(i)]);
  }
  out.rho = total / (static_cast<double>(n) *
                     std::sqrt(static_cast<double>(x_true.cols())));
  return out;
}

Vector per_point_errors(const Matrix& x_true, const Matrix& x_hat) {
  check_pair(x_true, x_hat, false);
  Matrix scaled = rescale_rows(x_true);
  Vector out(x_true.rows());
  for (Eigen::Index j = 0; j < x_true.rows(); ++j) {
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < x_hat.rows(); ++i) {
      best = std::min(best, (scaled.row(j) - x_hat.row(i)).norm());
    }
    out[j] = best;
  }
  return out;
}

}  // namespace deltarec
