#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "deltarec/errors.hpp"
#include "deltarec/metrics.hpp"
#include "support.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

using namespace deltarec;

namespace {

Matrix sphere_rows(Eigen::Index n, Eigen::Index d, Rng& rng) {
  Matrix x(n, d);
  double radius = std::sqrt(static_cast<double>(d));
  for (Eigen::Index i = 0; i < n; ++i) {
    x.row(i) = rng.sphere_point(d, radius).transpose();
  }
  return x;
}

}  // namespace

TEST_CASE("rho is zero on an exact copy") {
  Rng rng(61);
  Matrix x = sphere_rows(6, 5, rng);
  RhoResult out = rho(x, x);
  CHECK(out.rho < 1e-14);  // renormalizing a sphere row moves it by an ulp
  for (int i = 0; i < 6; ++i) {
    CHECK(out.matching[static_cast<std::size_t>(i)] == i);
  }
}

TEST_CASE("rho of an antipodal pair is two") {
  Rng rng(62);
  Matrix x = sphere_rows(1, 7, rng);
  Matrix flipped = -x;
  RhoResult out = rho(x, flipped);
  CHECK(out.rho == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("rho rescales the true rows only") {
  Rng rng(63);
  Matrix x = sphere_rows(4, 3, rng);
  // shrinking the true rows must not change rho: they are renormalized
  RhoResult base = rho(x, x);
  RhoResult shrunk = rho(Matrix(0.25 * x), x);
  CHECK(base.rho == shrunk.rho);

  // shrinking the reconstructions does change it
  RhoResult off = rho(x, Matrix(0.25 * x));
  CHECK(off.rho > 0.1);
}

TEST_CASE("rho matching equals brute force on small instances") {
  Rng rng(64);
  for (int trial = 0; trial < 50; ++trial) {
    Eigen::Index n = 2 + (trial % 4);  // up to 5
    Matrix x = sphere_rows(n, 4, rng);
    Matrix xhat = sphere_rows(n, 4, rng);
    RhoResult out = rho(x, xhat);

    Matrix cost(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < n; ++j) {
        cost(i, j) = (x.row(i) - xhat.row(j)).norm();
      }
    }
    auto [best_perm, best_cost] = support::brute_force_assignment(cost);
    double norm = static_cast<double>(n) * 2.0;  // n * sqrt(4)
    CHECK(out.rho == doctest::Approx(best_cost / norm).epsilon(1e-12));
  }
}

TEST_CASE("rho is invariant under simultaneous row permutation") {
  Rng rng(65);
  Matrix x = sphere_rows(5, 6, rng);
  Matrix xhat = sphere_rows(5, 6, rng);
  double base = rho(x, xhat).rho;

  std::vector<int> perm{3, 0, 4, 1, 2};
  Matrix xp(5, 6), xhp(5, 6);
  for (int i = 0; i < 5; ++i) {
    xp.row(i) = x.row(perm[static_cast<std::size_t>(i)]);
    xhp.row(i) = xhat.row(perm[static_cast<std::size_t>(i)]);
  }
  CHECK(rho(xp, xhp).rho == doctest::Approx(base).epsilon(1e-12));

  // permuting only one side leaves the minimum unchanged too
  CHECK(rho(x, xhp).rho == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("per-point errors on trivial configurations") {
  Rng rng(66);
  Matrix x = sphere_rows(4, 5, rng);
  Vector zeros = per_point_errors(x, x);
  CHECK(zeros.maxCoeff() < 1e-14);

  Matrix single = sphere_rows(1, 5, rng);
  Matrix replicated(4, 5);
  for (int i = 0; i < 4; ++i) replicated.row(i) = single.row(0);
  Vector dists = per_point_errors(x, replicated);
  for (Eigen::Index j = 0; j < 4; ++j) {
    CHECK(dists[j] ==
          doctest::Approx((x.row(j) - single.row(0)).norm()).epsilon(1e-12));
  }
}

TEST_CASE("nearest-neighbor mean lower-bounds the assignment mean") {
  Rng rng(67);
  for (int trial = 0; trial < 30; ++trial) {
    Eigen::Index n = 2 + (trial % 6);
    Eigen::Index d = 3 + (trial % 3);
    Matrix x = sphere_rows(n, d, rng);
    Matrix xhat = sphere_rows(n, d, rng);
    double assignment = rho(x, xhat).rho;
    double nearest = per_point_errors(x, xhat).mean() /
                     std::sqrt(static_cast<double>(d));
    CHECK(nearest <= assignment + 1e-12);
  }
}

TEST_CASE("metrics shape validation") {
  Rng rng(68);
  Matrix x = sphere_rows(3, 4, rng);
  CHECK_THROWS_AS(rho(x, sphere_rows(2, 4, rng)), DimensionError);
  CHECK_THROWS_AS(rho(x, sphere_rows(3, 5, rng)), DimensionError);
  CHECK_THROWS_AS(per_point_errors(x, sphere_rows(2, 5, rng)),
                  DimensionError);
  CHECK_THROWS_AS(rho(Matrix(), Matrix()), DimensionError);

  Matrix with_zero = x;
  with_zero.row(1).setZero();
  CHECK_THROWS_AS(rho(with_zero, x), DataError);

  // per_point_errors accepts a different candidate count
  Vector ok = per_point_errors(x, sphere_rows(7, 4, rng));
  CHECK(ok.size() == 3);
}
