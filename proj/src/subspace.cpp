#include "deltarec/subspace.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

namespace deltarec {

BasisEstimate estimate_basis(const Matrix& delta_w1, Eigen::Index r) {
  if (r < 1 || r > std::min(delta_w1.rows(), delta_w1.cols()))
    throw DimensionError("estimate_basis: need 1 <= r <= min(p, d)");
  la::SvdResult dec = la::svd(delta_w1);
  BasisEstimate out;
  out.basis = dec.vt.topRows(r).transpose();
  out.spectrum = dec.singular_values;
  out.rank_warning =
      dec.singular_values[r - 1] <= 1e-12 * dec.singular_values[0];
  return out;
}

Eigen::Index detect_rank(const Vector& singular_values, double drop_ratio) {
  const Eigen::Index len = singular_values.size();
  if (len < 1) throw DimensionError("detect_rank: empty spectrum");
  if (drop_ratio <= 1.0)
    throw ConfigError("detect_rank: drop_ratio must exceed 1");
  for (Eigen::Index i = 0; i < len; ++i) {
    if (singular_values[i] < 0)
      throw DimensionError("detect_rank: negative singular value");
    if (i > 0 && singular_values[i] > singular_values[i - 1])
      throw DimensionError("detect_rank: spectrum must be non-increasing");
  }
  const double top = singular_values[0];
  if (top == 0.0) throw DataError("detect_rank: all-zero spectrum");

  // Candidates stay above the numerical-rank floor so that ratios between
  // round-off values cannot win.
  Eigen::Index best_k = len;
  double best_ratio = 0.0;
  for (Eigen::Index k = 1; k < len; ++k) {
    double kept = singular_values[k - 1];
    if (kept < 1e-12 * top) break;
    double next = singular_values[k];
    double ratio = next == 0.0 ? std::numeric_limits<double>::infinity()
                               : kept / next;
    if (ratio > best_ratio) {
      best_ratio = ratio;
      best_k = k;
    }
  }
  return best_ratio >= drop_ratio ? best_k : len;
}

void save_spectrum_csv(const Vector& singular_values, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("spectrum csv: cannot open " + path);
  out << "index,singular_value\n";
  char line[64];
  for (Eigen::Index i = 0; i < singular_values.size(); ++i) {
    std::snprintf(line, sizeof(line), "%ld,%.17g\n", static_cast<long>(i + 1),
                  singular_values[i]);
    out << line;
  }
}

}  // namespace deltarec
