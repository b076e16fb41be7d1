#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "deltarec/errors.hpp"
#include "deltarec/train.hpp"
#include "support.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

using namespace deltarec;

namespace {

// Data with rows on the sphere and labels from a linear teacher.
Dataset sphere_dataset(Eigen::Index n, Eigen::Index d, Eigen::Index k,
                       Rng& rng, bool consistent_linear) {
  Dataset ds;
  ds.X.resize(n, d);
  double radius = std::sqrt(static_cast<double>(d));
  for (Eigen::Index i = 0; i < n; ++i)
    ds.X.row(i) = rng.sphere_point(d, radius);
  if (consistent_linear) {
    Matrix w = rng.gaussian_matrix(k, d) / radius;
    ds.Y = ds.X * w.transpose();
  } else {
    ds.Y = rng.gaussian_matrix(n, k);
  }
  ds.meta = {n, d, std::nullopt, "test"};
  return ds;
}

double power_iteration_top(const Matrix& sym, int iters) {
  Rng rng(777);
  Vector v = rng.gaussian_vector(sym.rows());
  v.normalize();
  double lambda = 0.0;
  for (int i = 0; i < iters; ++i) {
    Vector w = sym * v;
    lambda = v.dot(w);
    v = w / w.norm();
  }
  return lambda;
}

}  // namespace

TEST_CASE("defaults match the reference configuration") {
  TrainOptions opts;
  CHECK(opts.lr == 1e-4);
  CHECK(opts.loss_target == 1e-7);
  CHECK(opts.max_epochs == 1000000);
}

TEST_CASE("linear net on consistent linear data converges") {
  Rng rng(1);
  Dataset ds = sphere_dataset(8, 4, 2, rng, true);
  Mlp linear = init_mlp(4, 1, 1, 2, rng);
  TrainOptions opts;
  opts.lr = 0.01;
  opts.max_epochs = 100000;
  TrainOutcome out = train_gd(AnyModel(linear), ds, opts);
  CHECK(out.record.converged);
  CHECK(out.record.loss_trace.back() <= 1e-7);
  CHECK(mse_loss(out.model, ds) <= 1e-7);
}

TEST_CASE("record bookkeeping: delta, trace length, masked selection") {
  Rng rng(2);
  Dataset ds = sphere_dataset(6, 5, 1, rng, true);
  Mlp m = init_mlp(5, 7, 2, 1, rng);
  TrainOptions opts;
  opts.lr = 1e-3;
  opts.max_epochs = 50;
  opts.loss_target = 0.0;
  TrainOutcome out = train_gd(AnyModel(m), ds, opts);
  CHECK(out.record.epochs == 50);
  CHECK(out.record.loss_trace.size() == 51);
  CHECK_FALSE(out.record.converged);
  CHECK((out.record.theta0.array() == flatten(m).array()).all());
  CHECK((out.record.thetaf.array() == flatten(out.model).array()).all());
  Vector delta = out.record.delta();
  CHECK((delta.array() == (out.record.thetaf - out.record.theta0).array()).all());

  for (ParamMask mask : {ParamMask::all_layers, ParamMask::last_layer}) {
    Vector md = masked_delta(out.record, out.model, mask);
    Vector direct = masked_flatten(out.model, mask) -
                    masked_flatten(AnyModel(m), mask);
    CHECK((md.array() == direct.array()).all());
  }
}

TEST_CASE("loss trace is non-increasing below the curvature limit") {
  Rng rng(3);
  Dataset ds = sphere_dataset(4, 3, 1, rng, true);
  Mlp m = init_mlp(3, 5, 2, 1, rng);
  Matrix g = gradient_matrix(m, ParamMask::all_layers, ds.X);
  double top = power_iteration_top(g * g.transpose(), 200);
  TrainOptions opts;
  opts.lr = 0.2 / top;
  opts.max_epochs = 300;
  opts.loss_target = 0.0;
  TrainOutcome out = train_gd(AnyModel(m), ds, opts);
  const auto& trace = out.record.loss_trace;
  for (std::size_t i = 1; i < trace.size(); ++i)
    CHECK(trace[i] <= trace[i - 1] * (1.0 + 1e-12) + 1e-15);
}

TEST_CASE("divergent runs raise with the trace attached") {
  Rng rng(4);
  Dataset ds = sphere_dataset(4, 3, 1, rng, true);
  Mlp m = init_mlp(3, 5, 2, 1, rng);
  TrainOptions opts;
  opts.lr = 1e3;
  opts.max_epochs = 10000;
  try {
    train_gd(AnyModel(m), ds, opts);
    FAIL("expected divergence");
  } catch (const DivergenceError& err) {
    REQUIRE_FALSE(err.loss_trace().empty());
    double last = err.loss_trace().back();
    CHECK((!std::isfinite(last) || last > 1e12));
  }
}

TEST_CASE("rf training leaves the frozen layers untouched") {
  Rng rng(5);
  Dataset ds = sphere_dataset(5, 4, 1, rng, false);
  RandomFeatures rf = init_rf(4, 30, rng);
  TrainOptions opts;
  opts.lr = 0.05;
  opts.max_epochs = 200;
  opts.loss_target = 0.0;
  TrainOutcome out = train_gd(AnyModel(rf), ds, opts);
  const RandomFeatures& trained = std::get<RandomFeatures>(out.model);
  CHECK((trained.v.array() == rf.v.array()).all());
  CHECK((trained.b.array() == rf.b.array()).all());
  CHECK(out.record.theta0.norm() == 0.0);
  CHECK(out.record.loss_trace.back() < out.record.loss_trace.front());
}

TEST_CASE("gd from zero approaches the min-norm interpolator") {
  Rng rng(6);
  Dataset ds = sphere_dataset(5, 4, 1, rng, false);
  RandomFeatures rf = init_rf(4, 60, rng);
  RfFit fit = rf_min_norm(rf, ds, 0.0);

  Matrix phi = rf_features_batch(rf, ds.X);
  double top = power_iteration_top(phi * phi.transpose(), 300);
  TrainOptions opts;
  opts.lr = 1.0 / top;
  opts.max_epochs = 100000;
  opts.loss_target = 0.0;
  TrainOutcome out = train_gd(AnyModel(rf), ds, opts);
  Vector theta_gd = std::get<RandomFeatures>(out.model).theta;
  CHECK((theta_gd - fit.theta_star).norm() <=
        1e-5 * (1.0 + fit.theta_star.norm()));
}

TEST_CASE("rf_min_norm single-sample closed form") {
  Rng rng(7);
  Dataset ds = sphere_dataset(1, 3, 1, rng, false);
  RandomFeatures rf = init_rf(3, 20, rng);
  RfFit fit = rf_min_norm(rf, ds, 0.0);
  Vector phi = rf_features(rf, Vector(ds.X.row(0)));
  double y = ds.Y(0, 0);
  CHECK(fit.alpha.size() == 1);
  CHECK(fit.alpha[0] == doctest::Approx(y / phi.squaredNorm()).epsilon(1e-10));
  CHECK((fit.theta_star - phi * (y / phi.squaredNorm())).norm() < 1e-10);
}

TEST_CASE("rf_min_norm interpolates and is minimum norm") {
  Rng rng(8);
  Dataset ds = sphere_dataset(6, 5, 1, rng, false);
  RandomFeatures rf = init_rf(5, 80, rng);
  RfFit fit = rf_min_norm(rf, ds, 0.0);
  Matrix phi = rf_features_batch(rf, ds.X);
  CHECK((phi * fit.theta_star - ds.Y.col(0)).norm() < 1e-8);
  CHECK(fit.residual < 1e-8);
  CHECK(fit.ridge_used == 0.0);

  // theta* has no component in the null space of Phi.
  Matrix gram = phi * phi.transpose();
  Vector projected =
      phi.transpose() * la::solve_spd(gram, Vector(phi * fit.theta_star));
  CHECK((fit.theta_star - projected).norm() <= 1e-9);
}

TEST_CASE("rf_min_norm falls back to a ridge on duplicate samples") {
  Rng rng(9);
  Dataset ds = sphere_dataset(4, 5, 1, rng, false);
  ds.X.row(1) = ds.X.row(0);
  ds.Y(1, 0) = ds.Y(0, 0);
  RandomFeatures rf = init_rf(5, 50, rng);
  RfFit fit = rf_min_norm(rf, ds, 0.0);
  CHECK(fit.ridge_used > 0.0);
  CHECK(fit.theta_star.allFinite());
}

TEST_CASE("rf_min_norm rejects underparameterized models") {
  Rng rng(10);
  Dataset ds = sphere_dataset(8, 4, 1, rng, false);
  RandomFeatures rf = init_rf(4, 8, rng);
  CHECK_THROWS_AS(rf_min_norm(rf, ds, 0.0), DimensionError);
}

TEST_CASE("lowrank and dense first-layer paths agree") {
  Rng rng(11);
  Dataset ds = sphere_dataset(6, 40, 2, rng, false);
  for (int depth : {2, 3}) {
    Mlp m = init_mlp(40, 16, depth, 2, rng);
    TrainOptions opts;
    opts.lr = 1e-3;
    opts.max_epochs = 400;
    opts.loss_target = 0.0;
    TrainOutcome fast = train_gd(AnyModel(m), ds, opts);
    opts.allow_lowrank = false;
    TrainOutcome dense = train_gd(AnyModel(m), ds, opts);
    CHECK(fast.record.epochs == dense.record.epochs);
    CHECK((fast.record.thetaf - dense.record.thetaf).norm() <=
          1e-8 * (1.0 + dense.record.thetaf.norm()));
    for (std::size_t e = 0; e < dense.record.loss_trace.size(); ++e)
      CHECK(fast.record.loss_trace[e] ==
            doctest::Approx(dense.record.loss_trace[e]).epsilon(1e-9));
  }
}

TEST_CASE("first-layer updates stay in the span of the data") {
  Rng data_rng(12);
  Dataset ds = gen_synthetic(12, 8, 3, 0.1, data_rng);
  SUBCASE("dense path") {
    Rng rng(13);
    Mlp m = init_mlp(8, 20, 2, 1, rng);
    TrainOptions opts;
    opts.lr = 5e-4;
    opts.max_epochs = 20000;
    opts.loss_target = 1e-5;
    TrainOutcome out = train_gd(AnyModel(m), ds, opts);
    Matrix dw1 = std::get<Mlp>(out.model).layers[0] - m.layers[0];
    Vector s = la::svd(dw1).singular_values;
    // rank(X) = 3 here.
    for (int i = 3; i < s.size(); ++i) CHECK(s[i] <= 1e-7 * s[0]);
  }
  SUBCASE("lowrank path") {
    Rng data2(14);
    Dataset wide = gen_synthetic(5, 30, 2, 0.0, data2);
    Rng rng(15);
    Mlp m = init_mlp(30, 12, 2, 1, rng);
    TrainOptions opts;
    opts.lr = 1e-3;
    opts.max_epochs = 2000;
    opts.loss_target = 0.0;
    TrainOutcome out = train_gd(AnyModel(m), wide, opts);
    Matrix dw1 = std::get<Mlp>(out.model).layers[0] - m.layers[0];
    Vector s = la::svd(dw1).singular_values;
    // rank(X) = 2 here.
    for (int i = 2; i < s.size(); ++i) CHECK(s[i] <= 1e-7 * s[0]);
  }
}

TEST_CASE("trace csv has strided epochs and deterministic bytes") {
  TrainRecord record;
  record.loss_trace = {1.0, 0.5, 0.25, 0.125, 0.0625, 0.03125, 0.015625};
  record.epochs = 6;
  std::string path = support::temp_path("trace.csv");
  save_trace_csv(record, path, 3);
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  CHECK(line == "epoch,loss");
  std::vector<std::string> rows;
  while (std::getline(in, line)) rows.push_back(line);
  REQUIRE(rows.size() == 3);  // epochs 0, 3, 6
  CHECK(rows[0].rfind("0,", 0) == 0);
  CHECK(rows[1].rfind("3,", 0) == 0);
  CHECK(rows[2].rfind("6,", 0) == 0);

  std::string again = support::temp_path("trace2.csv");
  save_trace_csv(record, again, 3);
  std::ifstream a(path, std::ios::binary), b(again, std::ios::binary);
  std::stringstream sa, sb;
  sa << a.rdbuf();
  sb << b.rdbuf();
  CHECK(sa.str() == sb.str());
}

TEST_CASE("option and shape validation") {
  Rng rng(16);
  Dataset ds = sphere_dataset(4, 3, 1, rng, true);
  Mlp m = init_mlp(3, 4, 2, 1, rng);
  TrainOptions opts;
  opts.lr = 0.0;
  CHECK_THROWS_AS(train_gd(AnyModel(m), ds, opts), ConfigError);
  Mlp wrong = init_mlp(5, 4, 2, 1, rng);
  CHECK_THROWS_AS(train_gd(AnyModel(wrong), ds, TrainOptions{}),
                  DimensionError);
  Mlp wrong_out = init_mlp(3, 4, 2, 2, rng);
  CHECK_THROWS_AS(train_gd(AnyModel(wrong_out), ds, TrainOptions{}),
                  DimensionError);
}
