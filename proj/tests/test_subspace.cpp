#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "deltarec/data.hpp"
#include "deltarec/errors.hpp"
#include "deltarec/subspace.hpp"
#include "deltarec/train.hpp"
#include "support.hpp"

#include <Eigen/QR>

#include <cmath>
#include <fstream>

using namespace deltarec;

TEST_CASE("rank-one weight change recovers the single direction") {
  Rng rng(1);
  Vector a = rng.gaussian_vector(12);
  Matrix dw1 = Matrix::Zero(12, 5);
  dw1.col(0) = a;  // a * e1^T
  BasisEstimate est = estimate_basis(dw1, 1);
  REQUIRE(est.basis.cols() == 1);
  CHECK(std::abs(std::abs(est.basis(0, 0)) - 1.0) < 1e-12);
  CHECK(est.basis.col(0).tail(4).norm() < 1e-12);
  CHECK_FALSE(est.rank_warning);
  for (int i = 1; i < est.spectrum.size(); ++i)
    CHECK(est.spectrum[i] < 1e-12);
}

TEST_CASE("basis from a trained first layer aligns with the true subspace") {
  Rng data_rng(2);
  Dataset ds = gen_synthetic(100, 60, 30, 0.5, data_rng);
  Rng init_rng(3);
  Mlp m = init_mlp(60, 48, 2, 1, init_rng);
  TrainOptions opts;
  opts.lr = 1e-4;
  opts.max_epochs = 200;
  opts.loss_target = 0.0;
  TrainOutcome out = train_gd(AnyModel(m), ds, opts);
  Matrix dw1 = std::get<Mlp>(out.model).layers[0] - m.layers[0];
  BasisEstimate est = estimate_basis(dw1, 30);
  CHECK(support::max_abs_diff(est.basis.transpose() * est.basis,
                              Matrix::Identity(30, 30)) < 1e-10);
  Vector angles = la::principal_angles(est.basis, *ds.U);
  CHECK(angles.maxCoeff() <= 1e-3);

  // The spectrum drops off a cliff after rank(X) = 30.
  CHECK(detect_rank(est.spectrum) == 30);
}

TEST_CASE("estimate_basis flags requests beyond the numerical rank") {
  Rng rng(4);
  Matrix low = rng.gaussian_matrix(10, 2) * rng.gaussian_matrix(2, 6);
  BasisEstimate est = estimate_basis(low, 3);
  CHECK(est.rank_warning);
  CHECK(est.basis.cols() == 3);
  CHECK(support::max_abs_diff(est.basis.transpose() * est.basis,
                              Matrix::Identity(3, 3)) < 1e-10);
  CHECK_FALSE(estimate_basis(low, 2).rank_warning);
}

TEST_CASE("estimate_basis is invariant to left orthogonal mixing") {
  Rng rng(5);
  Matrix dw1 = rng.gaussian_matrix(14, 3) * rng.gaussian_matrix(3, 8);
  Matrix q = Eigen::HouseholderQR<Matrix>(rng.gaussian_matrix(14, 14))
                 .householderQ();
  BasisEstimate plain = estimate_basis(dw1, 3);
  BasisEstimate mixed = estimate_basis(q * dw1, 3);
  Vector angles = la::principal_angles(plain.basis, mixed.basis);
  CHECK(angles.maxCoeff() <= 1e-10);
}

TEST_CASE("estimate_basis rejects out-of-range ranks") {
  Matrix dw1 = Matrix::Identity(4, 6);
  CHECK_THROWS_AS(estimate_basis(dw1, 0), DimensionError);
  CHECK_THROWS_AS(estimate_basis(dw1, 5), DimensionError);
}

TEST_CASE("detect_rank pinned examples") {
  Vector gapped(4);
  gapped << 1.0, 1.0, 1e-9, 1e-10;
  CHECK(detect_rank(gapped, 10.0) == 2);

  Vector geometric(4);
  geometric << 1.0, 0.5, 0.25, 0.125;
  CHECK(detect_rank(geometric, 10.0) == 4);
}

TEST_CASE("detect_rank is scale invariant") {
  Rng rng(6);
  Vector s(6);
  s << 5.0, 4.0, 3.9, 0.01, 0.002, 0.0019;
  for (double c : {1e-7, 1.0, 3.14, 1e8})
    CHECK(detect_rank(c * s, 10.0) == detect_rank(s, 10.0));
}

TEST_CASE("detect_rank treats a trailing zero as an infinite drop") {
  Vector s(3);
  s << 2.0, 1.0, 0.0;
  CHECK(detect_rank(s, 10.0) == 2);
}

TEST_CASE("detect_rank validation") {
  Vector zeros = Vector::Zero(3);
  CHECK_THROWS_AS(detect_rank(zeros, 10.0), DataError);
  Vector increasing(3);
  increasing << 1.0, 2.0, 0.5;
  CHECK_THROWS_AS(detect_rank(increasing, 10.0), DimensionError);
  Vector negative(2);
  negative << 1.0, -0.5;
  CHECK_THROWS_AS(detect_rank(negative, 10.0), DimensionError);
  Vector fine(2);
  fine << 1.0, 0.5;
  CHECK_THROWS_AS(detect_rank(fine, 0.5), ConfigError);
}

TEST_CASE("spectrum csv is deterministic") {
  Vector s(3);
  s << 3.5, 1.25, 0.0625;
  std::string a = support::temp_path("spectrum_a.csv");
  std::string b = support::temp_path("spectrum_b.csv");
  save_spectrum_csv(s, a);
  save_spectrum_csv(s, b);
  std::ifstream fa(a), fb(b);
  std::string ca((std::istreambuf_iterator<char>(fa)), {});
  std::string cb((std::istreambuf_iterator<char>(fb)), {});
  CHECK(ca == cb);
  CHECK(ca.rfind("index,singular_value\n", 0) == 0);
  CHECK(ca.find("1,3.5\n") != std::string::npos);
}
