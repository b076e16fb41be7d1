#include "deltarec/linalg.hpp"

#include <Eigen/SVD>

#include <cmath>
#include <limits>

namespace deltarec {

namespace {

inline std::uint64_t rotl64(std::uint64_t x, int k) {
  return (x << k) | (x >> (64 - k));
}

inline std::uint64_t splitmix64(std::uint64_t& x) {
  x += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

Rng::Rng(std::uint64_t seed) {
  std::uint64_t x = seed;
  for (auto& s : state_) s = splitmix64(x);
}

Rng Rng::from(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t x = seed;
  std::uint64_t a = splitmix64(x);
  x ^= rotl64(stream, 32) + 0x9e3779b97f4a7c15ULL;
  std::uint64_t b = splitmix64(x);
  return Rng(a ^ rotl64(b, 17));
}

std::uint64_t Rng::next_u64() {
  std::uint64_t result = rotl64(state_[0] + state_[3], 23) + state_[0];
  std::uint64_t t = state_[1] << 17;
  state_[2] ^= state_[0];
  state_[3] ^= state_[1];
  state_[1] ^= state_[2];
  state_[0] ^= state_[3];
  state_[2] ^= t;
  state_[3] = rotl64(state_[3], 45);
  return result;
}

double Rng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::uint64_t Rng::uniform_below(std::uint64_t bound) {
  if (bound == 0) throw DimensionError("uniform_below: bound must be positive");
  std::uint64_t threshold = (0 - bound) % bound;
  for (;;) {
    std::uint64_t r = next_u64();
    if (r >= threshold) return r % bound;
  }
}

double Rng::gaussian() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  // 1 - uniform() lies in (0, 1], keeping the log finite.
  double u1 = 1.0 - uniform();
  double u2 = uniform();
  double radius = std::sqrt(-2.0 * std::log(u1));
  double angle = 2.0 * M_PI * u2;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

Vector Rng::gaussian_vector(Eigen::Index n) {
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = gaussian();
  return v;
}

Matrix Rng::gaussian_matrix(Eigen::Index rows, Eigen::Index cols) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = gaussian();
  return m;
}

Vector Rng::sphere_point(Eigen::Index dim, double radius) {
  for (;;) {
    Vector v = gaussian_vector(dim);
    double norm = v.norm();
    if (norm > 1e-12) return v * (radius / norm);
  }
}

namespace la {

SvdResult svd(const Matrix& a) {
  if (!a.allFinite()) throw DimensionError("svd: input has non-finite entries");
  Eigen::JacobiSVD<Matrix> dec(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  if (dec.info() != Eigen::Success)
    throw SolverError("svd: Jacobi iteration did not converge");
  SvdResult out;
  out.u = dec.matrixU();
  out.singular_values = dec.singularValues();
  out.vt = dec.matrixV().transpose();
  return out;
}

Vector solve_spd(const Matrix& a, const Vector& b, double ridge) {
  if (a.rows() != a.cols())
    throw DimensionError("solve_spd: matrix must be square");
  if (a.rows() != b.size())
    throw DimensionError("solve_spd: rhs size mismatch");
  Matrix m = a;
  if (ridge != 0.0) m.diagonal().array() += ridge;
  double bnorm = b.norm();
  if (bnorm == 0.0) return Vector::Zero(b.size());
  Eigen::LDLT<Matrix> ldlt(m);
  if (ldlt.info() != Eigen::Success)
    throw SolverError("solve_spd: LDLT factorization failed");
  Vector x = ldlt.solve(b);
  // Iterative refinement until the residual contract holds.
  Vector r = b - m * x;
  for (int pass = 0; pass < 3 && r.norm() > 1e-10 * bnorm; ++pass) {
    x += ldlt.solve(r);
    r = b - m * x;
  }
  if (!x.allFinite() || r.norm() > 1e-10 * bnorm)
    throw SolverError("solve_spd: system is singular beyond the ridge");
  return x;
}

CgResult cg_solve(const LinearOperator& apply, const Vector& b, double tol,
                  int max_iters) {
  if (tol <= 0) throw DimensionError("cg_solve: tol must be positive");
  CgResult out;
  double bnorm = b.norm();
  out.x = Vector::Zero(b.size());
  if (bnorm == 0.0) {
    out.converged = true;
    return out;
  }
  Vector r = b;
  Vector p = r;
  double rs = r.squaredNorm();
  for (int it = 1; it <= max_iters; ++it) {
    Vector ap = apply(p);
    if (!ap.allFinite())
      throw SolverError("cg_solve: operator produced non-finite values");
    double pap = p.dot(ap);
    if (pap <= 0.0) {
      // Direction with no curvature; PSD operator and consistent rhs
      // should not reach this, so stop with the best iterate.
      out.iterations = it - 1;
      out.relative_residual = std::sqrt(rs) / bnorm;
      return out;
    }
    double alpha = rs / pap;
    out.x += alpha * p;
    r -= alpha * ap;
    double rs_next = r.squaredNorm();
    out.iterations = it;
    if (std::sqrt(rs_next) <= tol * bnorm) {
      out.converged = true;
      out.relative_residual = std::sqrt(rs_next) / bnorm;
      return out;
    }
    p = r + (rs_next / rs) * p;
    rs = rs_next;
  }
  out.relative_residual = std::sqrt(rs) / bnorm;
  return out;
}

std::vector<int> assignment_min_cost(const Matrix& cost) {
  if (cost.rows() != cost.cols())
    throw DimensionError("assignment_min_cost: cost matrix must be square");
  if (!cost.allFinite())
    throw DimensionError("assignment_min_cost: cost matrix has non-finite entries");
  const int n = static_cast<int>(cost.rows());
  const double inf = std::numeric_limits<double>::infinity();
  // Hungarian algorithm with row/column potentials; 1-based internals.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      int i0 = p[j0], j1 = 0;
      double delta = inf;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> perm(n, -1);
  for (int j = 1; j <= n; ++j)
    if (p[j] != 0) perm[p[j] - 1] = j - 1;
  return perm;
}

Vector principal_angles(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionError("principal_angles: frames must share dimensions");
  auto check_frame = [](const Matrix& f, const char* name) {
    Matrix gram = f.transpose() * f;
    gram.diagonal().array() -= 1.0;
    if (gram.cwiseAbs().maxCoeff() > 1e-8)
      throw DimensionError(std::string("principal_angles: ") + name +
                           " does not have orthonormal columns");
  };
  check_frame(a, "first frame");
  check_frame(b, "second frame");
  Matrix cross = a.transpose() * b;
  Vector cosines = svd(cross).singular_values;
  // acos alone loses precision near zero angles; the residual SVD gives
  // the sines directly (Knyazev-Argentati style).
  Vector sines = svd(Matrix(b - a * cross)).singular_values;
  const Eigen::Index k = cosines.size();
  Vector angles(k);
  for (Eigen::Index i = 0; i < k; ++i) {
    double c = std::min(1.0, std::max(-1.0, cosines[i]));
    double s = std::min(1.0, std::max(0.0, sines[k - 1 - i]));
    angles[i] = c * c > 0.5 ? std::asin(s) : std::acos(c);
  }
  return angles;
}

double default_ridge(const Matrix& a) {
  return 1e-10 * a.trace() / static_cast<double>(a.rows());
}

}  // namespace la
}  // namespace deltarec
