#pragma once

#include "deltarec/errors.hpp"
#include "deltarec/linalg.hpp"

#include <string>

namespace deltarec {

struct BasisEstimate {
  Matrix basis;      // d x r, orthonormal columns
  Vector spectrum;   // all singular values of the input
  bool rank_warning = false;
};

// Leading right singular vectors of the first-layer weight change.
BasisEstimate estimate_basis(const Matrix& delta_w1, Eigen::Index r);

// Position of the sharpest consecutive singular-value drop; the full
// length when no ratio reaches drop_ratio.
Eigen::Index detect_rank(const Vector& singular_values,
                         double drop_ratio = 10.0);

void save_spectrum_csv(const Vector& singular_values, const std::string& path);

}  // namespace deltarec
