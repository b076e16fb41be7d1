#pragma once

// Shared helpers for the test binaries. Everything here is written against
// the public headers only and avoids the library's own numerics where the
// point is to cross-check them.

#include "deltarec/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

namespace support {

using deltarec::Matrix;
using deltarec::Vector;

struct EighResult {
  Vector eigenvalues;  // descending
  Matrix eigenvectors; // columns match eigenvalues
};

// Cyclic Jacobi eigensolver for symmetric matrices. Slow but self-contained,
// used as an oracle for SVD via the eigendecomposition of a^T a.
inline EighResult jacobi_eigh(const Matrix& sym) {
  const int n = static_cast<int>(sym.rows());
  Matrix a = sym;
  Matrix v = Matrix::Identity(n, n);
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    if (off < 1e-28) break;
    for (int p = 0; p < n; ++p) {
      for (int q = p + 1; q < n; ++q) {
        if (std::abs(a(p, q)) < 1e-300) continue;
        double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
        double t = (theta >= 0 ? 1.0 : -1.0) /
                   (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        double c = 1.0 / std::sqrt(t * t + 1.0);
        double s = t * c;
        for (int k = 0; k < n; ++k) {
          double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (int k = 0; k < n; ++k) {
          double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](int i, int j) { return a(i, i) > a(j, j); });
  EighResult out;
  out.eigenvalues.resize(n);
  out.eigenvectors.resize(n, n);
  for (int i = 0; i < n; ++i) {
    out.eigenvalues[i] = a(order[i], order[i]);
    out.eigenvectors.col(i) = v.col(order[i]);
  }
  return out;
}

// Exhaustive minimum-cost assignment, usable for n <= 8 or so.
inline std::pair<std::vector<int>, double> brute_force_assignment(
    const Matrix& cost) {
  const int n = static_cast<int>(cost.rows());
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<int> best = perm;
  double best_cost = std::numeric_limits<double>::infinity();
  do {
    double c = 0.0;
    for (int i = 0; i < n; ++i) c += cost(i, perm[i]);
    if (c < best_cost) {
      best_cost = c;
      best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return {best, best_cost};
}

inline double assignment_cost(const Matrix& cost, const std::vector<int>& perm) {
  double c = 0.0;
  for (int i = 0; i < static_cast<int>(perm.size()); ++i) c += cost(i, perm[i]);
  return c;
}

// Central finite differences of a scalar function of a vector.
inline Vector finite_diff_gradient(const std::function<double(const Vector&)>& f,
                                   const Vector& x, double eps = 1e-6) {
  Vector g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Vector xp = x, xm = x;
    xp[i] += eps;
    xm[i] -= eps;
    g[i] = (f(xp) - f(xm)) / (2.0 * eps);
  }
  return g;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  return (a - b).cwiseAbs().maxCoeff();
}

inline std::string temp_path(const std::string& name) {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "deltarec_tests";
  fs::create_directories(dir);
  return (dir / name).string();
}

// CIFAR-10 style batch: per record one label byte then 3072 pixel bytes.
inline void write_cifar_batch(const std::string& path,
                              const std::vector<std::uint8_t>& labels,
                              deltarec::Rng& rng) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  for (auto label : labels) {
    out.put(static_cast<char>(label));
    for (int j = 0; j < 3072; ++j)
      out.put(static_cast<char>(rng.uniform_below(256)));
  }
}

}  // namespace support
