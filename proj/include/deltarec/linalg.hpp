#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <functional>
#include <vector>

#include "deltarec/errors.hpp"

namespace deltarec {

// All numerics are 64-bit; samples are rows everywhere.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// Deterministic random stream: xoshiro256++ state seeded through splitmix64.
/// The integer stream is bit-identical across platforms for a given seed;
/// gaussian variates use Box-Muller on top of it (one cached spare).
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  /// Sub-stream derivation, so independent roles (data, init, trials) never
  /// share a stream even when configured with the same user-facing seed.
  static Rng from(std::uint64_t seed, std::uint64_t stream);

  std::uint64_t next_u64();
  /// Uniform on [0, 1), 53-bit resolution.
  double uniform();
  /// Unbiased integer in [0, bound) by rejection.
  std::uint64_t uniform_below(std::uint64_t bound);
  /// Standard normal via Box-Muller.
  double gaussian();

  Vector gaussian_vector(Eigen::Index n);
  /// Row-major fill order (fixed so streams are reproducible).
  Matrix gaussian_matrix(Eigen::Index rows, Eigen::Index cols);
  /// Uniform point on the radius-sphere in `dim` dimensions.
  Vector sphere_point(Eigen::Index dim, double radius);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::array<std::uint64_t, 4> state_{};
  double spare_ = 0.0;
  bool has_spare_ = false;
};

namespace la {

struct SvdResult {
  Matrix u;                 // thin left factor
  Vector singular_values;   // non-increasing, non-negative
  Matrix vt;                // thin right factor, transposed
};

/// Thin SVD, deterministic for a given input.
SvdResult svd(const Matrix& a);

/// Solves (a + ridge*I) x = b for symmetric positive (semi)definite a.
/// Verifies the relative residual is <= 1e-10 and throws SolverError
/// otherwise.
Vector solve_spd(const Matrix& a, const Vector& b, double ridge = 0.0);

struct CgResult {
  Vector x;
  int iterations = 0;
  double relative_residual = 0.0;
  bool converged = false;
};

using LinearOperator = std::function<Vector(const Vector&)>;

/// Conjugate gradient for a symmetric PSD operator given as a callback.
/// Stops at ||apply(x) - b|| <= tol * ||b|| or at the iteration cap, in which
/// case `converged` is false and the best iterate is returned.
CgResult cg_solve(const LinearOperator& apply, const Vector& b, double tol,
                  int max_iters);

/// Exact minimum-cost perfect matching on a square cost matrix (Hungarian
/// algorithm with potentials, O(n^3)). Returns the column assigned to each
/// row.
std::vector<int> assignment_min_cost(const Matrix& cost);

/// Principal angles between the column spans of two orthonormal d x r frames,
/// in [0, pi/2], non-decreasing. Inputs are checked for orthonormality.
Vector principal_angles(const Matrix& a, const Matrix& b);

/// Ridge used for near-singular Gram systems: 1e-10 * trace(a) / n.
double default_ridge(const Matrix& a);

}  // namespace la
}  // namespace deltarec
