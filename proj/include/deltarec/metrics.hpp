#pragma once

#include "deltarec/linalg.hpp"

#include <vector>

namespace deltarec {

struct RhoResult {
  double rho = 0.0;
  // matching[i] is the reconstructed row assigned to true row i.
  std::vector<int> matching;
};

// Mean L2 error under the best bijective matching, normalized by n*sqrt(d).
// True rows are rescaled to norm sqrt(d) first; reconstructions are taken
// as-is since the optimizer already constrains them to the sphere.
RhoResult rho(const Matrix& x_true, const Matrix& x_hat);

// Distance from each (rescaled) true row to its nearest reconstruction.
// x_hat may have any number of rows.
Vector per_point_errors(const Matrix& x_true, const Matrix& x_hat);

}  // namespace deltarec
