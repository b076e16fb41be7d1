#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "deltarec/errors.hpp"
#include "deltarec/model.hpp"
#include "support.hpp"

#include <cmath>
#include <vector>

using namespace deltarec;

namespace {

// Straight-line forward pass with scalar loops, no Eigen products.
std::vector<double> naive_mlp_forward(const Mlp& m, const Vector& x) {
  std::vector<double> h(x.data(), x.data() + x.size());
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    const Matrix& w = m.layers[l];
    std::vector<double> next(w.rows(), 0.0);
    for (Eigen::Index i = 0; i < w.rows(); ++i)
      for (Eigen::Index j = 0; j < w.cols(); ++j)
        next[i] += w(i, j) * h[j];
    if (l + 1 < m.layers.size())
      for (auto& value : next) value = std::max(0.0, value);
    h = next;
  }
  return h;
}

// Resamples until every preactivation is clear of the ReLU kink.
Vector kink_free_input(const Mlp& m, Rng& rng) {
  for (int attempt = 0; attempt < 200; ++attempt) {
    Vector x = rng.gaussian_vector(input_dim(m));
    MlpForwardCache cache = mlp_forward_cache(m, Matrix(x.transpose()));
    double closest = 1e9;
    for (std::size_t l = 0; l + 1 < m.layers.size(); ++l)
      closest = std::min(closest, cache.pre[l].cwiseAbs().minCoeff());
    if (closest > 1e-3) return x;
  }
  FAIL("could not find a kink-free input");
  return Vector();
}

Mlp random_mlp(Eigen::Index d, Eigen::Index p, Eigen::Index depth,
               Eigen::Index k, std::uint64_t seed) {
  Rng rng(seed);
  return init_mlp(d, p, depth, k, rng);
}

}  // namespace

TEST_CASE("forward matches the hand-computed two-layer example") {
  std::vector<Matrix> layers = {Matrix::Identity(2, 2), Matrix::Identity(2, 2)};
  Mlp m = make_mlp(layers);
  Vector x(2);
  x << 1, -1;
  Vector out = forward(m, x);
  CHECK(out[0] == doctest::Approx(1.0));
  CHECK(out[1] == doctest::Approx(0.0));
}

TEST_CASE("rf forward is zero when theta is zero") {
  Rng rng(1);
  RandomFeatures rf = init_rf(4, 32, rng);
  for (int i = 0; i < 5; ++i) {
    Vector x = rng.gaussian_vector(4);
    CHECK(forward(rf, x)[0] == 0.0);
  }
}

TEST_CASE("forward matches a straight-line reimplementation") {
  for (auto [depth, k] : {std::pair{2, 1}, {3, 2}, {5, 3}}) {
    Mlp m = random_mlp(6, 9, depth, k, 100 + depth);
    Rng rng(depth);
    for (int t = 0; t < 10; ++t) {
      Vector x = rng.gaussian_vector(6);
      Vector got = forward(m, x);
      auto want = naive_mlp_forward(m, x);
      REQUIRE(got.size() == static_cast<Eigen::Index>(want.size()));
      for (Eigen::Index i = 0; i < got.size(); ++i)
        CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("forward_batch equals per-sample forward") {
  Mlp m = random_mlp(5, 7, 3, 2, 42);
  Rng rng(7);
  Matrix xs = rng.gaussian_matrix(8, 5);
  Matrix batch = forward_batch(m, xs);
  for (int i = 0; i < 8; ++i) {
    Vector one = forward(m, Vector(xs.row(i)));
    CHECK((batch.row(i).transpose() - one).cwiseAbs().maxCoeff() < 1e-13);
  }
}

TEST_CASE("rf_features at the origin with zero offsets vanishes for tanh") {
  Rng rng(2);
  RandomFeatures rf = init_rf(3, 16, rng);
  rf = make_rf(rf.v, Vector::Zero(16), rf.theta, Activation::tanh);
  CHECK(rf_features(rf, Vector::Zero(3)).norm() == 0.0);
}

TEST_CASE("rf_features norm is bounded by one for tanh") {
  Rng rng(3);
  RandomFeatures rf = init_rf(6, 50, rng);
  for (int t = 0; t < 20; ++t) {
    Vector x = rng.sphere_point(6, std::sqrt(6.0));
    CHECK(rf_features(rf, x).squaredNorm() <= 1.0 + 1e-12);
  }
}

TEST_CASE("rf param_gradient equals the feature map and ignores theta") {
  Rng rng(4);
  RandomFeatures rf = init_rf(5, 24, rng);
  Vector x = rng.gaussian_vector(5);
  Matrix grad = param_gradient(rf, ParamMask::all_layers, x);
  REQUIRE(grad.rows() == 1);
  CHECK((grad.row(0).transpose() - rf_features(rf, x)).norm() < 1e-14);

  RandomFeatures moved = unflatten(rf, Vector(rng.gaussian_vector(24)));
  Matrix grad2 = param_gradient(moved, ParamMask::all_layers, x);
  CHECK((grad - grad2).norm() == 0.0);
}

TEST_CASE("last-layer gradient is the penultimate activation for K=1") {
  Mlp m = random_mlp(4, 6, 3, 1, 11);
  Rng rng(5);
  Vector x = rng.gaussian_vector(4);
  MlpForwardCache cache = mlp_forward_cache(m, Matrix(x.transpose()));
  Matrix grad = param_gradient(m, ParamMask::last_layer, x);
  REQUIRE(grad.rows() == 1);
  CHECK((grad.row(0) - cache.post.back().row(0)).cwiseAbs().maxCoeff() <
        1e-14);
}

TEST_CASE("param_gradient matches finite differences") {
  for (auto [depth, k] : {std::pair{2, 1}, {3, 2}, {5, 1}}) {
    Mlp m = random_mlp(4, 5, depth, k, 200 + depth);
    Rng rng(300 + depth);
    Vector x = kink_free_input(m, rng);
    for (ParamMask mask : {ParamMask::all_layers, ParamMask::last_layer}) {
      Matrix analytic = param_gradient(m, mask, x);
      Vector theta = masked_flatten(m, mask);
      Vector full = flatten(m);
      Eigen::Index offset =
          mask == ParamMask::all_layers ? 0 : full.size() - theta.size();
      for (Eigen::Index cls = 0; cls < k; ++cls) {
        auto f = [&](const Vector& masked) {
          Vector params = full;
          params.segment(offset, masked.size()) = masked;
          return forward(unflatten(m, params), x)[cls];
        };
        Vector fd = support::finite_diff_gradient(f, theta, 1e-5);
        CHECK((fd - analytic.row(cls).transpose()).norm() <=
              1e-5 * (1.0 + analytic.row(cls).norm()));
      }
    }
  }
}

TEST_CASE("input_gradient of a linear model is the transposed weight") {
  Rng rng(6);
  Mlp m = init_mlp(5, 1, 1, 3, rng);
  Vector x = rng.gaussian_vector(5);
  Vector u = rng.gaussian_vector(3);
  Vector grad = input_gradient(m, x, u);
  CHECK((grad - m.layers[0].transpose() * u).norm() < 1e-14);
  CHECK(input_gradient(m, x, Vector::Zero(3)).norm() == 0.0);
}

TEST_CASE("input_gradient matches finite differences away from kinks") {
  for (int depth : {2, 3, 5}) {
    Mlp m = random_mlp(4, 6, depth, 2, 400 + depth);
    Rng rng(500 + depth);
    Vector x = kink_free_input(m, rng);
    Vector u = rng.gaussian_vector(2);
    Vector analytic = input_gradient(m, x, u);
    auto f = [&](const Vector& xx) { return u.dot(forward(m, xx)); };
    Vector fd = support::finite_diff_gradient(f, x, 1e-5);
    CHECK((fd - analytic).norm() <= 1e-5 * (1.0 + analytic.norm()));
  }

  Rng rng(7);
  RandomFeatures rf = init_rf(5, 40, rng);
  rf = unflatten(rf, Vector(rng.gaussian_vector(40)));
  Vector x = rng.gaussian_vector(5);
  Vector u(1);
  u << 1.7;
  Vector analytic = input_gradient(rf, x, u);
  auto f = [&](const Vector& xx) { return u.dot(forward(rf, xx)); };
  Vector fd = support::finite_diff_gradient(f, x, 1e-5);
  CHECK((fd - analytic).norm() <= 1e-7 * (1.0 + analytic.norm()));
}

TEST_CASE("jvp against the gradient of output zero gives its squared norm") {
  Mlp m = random_mlp(3, 4, 3, 2, 21);
  Rng rng(8);
  Vector x = rng.gaussian_vector(3);
  Matrix grad = param_gradient(m, ParamMask::all_layers, x);
  Vector v = grad.row(0);
  Vector jvp = jvp_params(m, ParamMask::all_layers, x, v);
  CHECK(jvp[0] == doctest::Approx(grad.row(0).squaredNorm()).epsilon(1e-12));
}

TEST_CASE("vjp and jvp with unit vectors reproduce the dense gradient") {
  Mlp m = random_mlp(2, 3, 2, 2, 22);
  Rng rng(9);
  Vector x = rng.gaussian_vector(2);
  for (ParamMask mask : {ParamMask::all_layers, ParamMask::last_layer}) {
    Matrix dense = param_gradient(m, mask, x);
    const Eigen::Index cols = dense.cols(), k = dense.rows();
    // Columns via jvp on coordinate tangents.
    for (Eigen::Index j = 0; j < cols; ++j) {
      Vector ej = Vector::Zero(cols);
      ej[j] = 1.0;
      Vector column = jvp_params(m, mask, x, ej);
      CHECK((column - dense.col(j)).norm() < 1e-12);
    }
    // Rows via vjp on coordinate cotangents.
    for (Eigen::Index i = 0; i < k; ++i) {
      Vector ei = Vector::Zero(k);
      ei[i] = 1.0;
      Vector row = vjp_params(m, mask, x, ei);
      CHECK((row - dense.row(i).transpose()).norm() < 1e-12);
    }
  }
}

TEST_CASE("jvp is linear in the tangent") {
  Mlp m = random_mlp(4, 5, 3, 2, 23);
  Rng rng(10);
  Vector x = rng.gaussian_vector(4);
  Eigen::Index count = masked_count(m, ParamMask::all_layers);
  Vector v1 = rng.gaussian_vector(count), v2 = rng.gaussian_vector(count);
  double a = 1.3, b = -0.7;
  Vector lhs = jvp_params(m, ParamMask::all_layers, x, a * v1 + b * v2);
  Vector rhs = a * jvp_params(m, ParamMask::all_layers, x, v1) +
               b * jvp_params(m, ParamMask::all_layers, x, v2);
  CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("jvp and vjp are adjoint across the architecture grid") {
  struct Case {
    int depth, k;
  };
  for (Case c : {Case{2, 1}, Case{3, 2}, Case{5, 3}}) {
    Mlp m = random_mlp(5, 6, c.depth, c.k, 600 + c.depth);
    Rng rng(700 + c.depth);
    Vector x = rng.gaussian_vector(5);
    for (ParamMask mask : {ParamMask::all_layers, ParamMask::last_layer}) {
      Eigen::Index count = masked_count(m, mask);
      for (int t = 0; t < 5; ++t) {
        Vector v = rng.gaussian_vector(count);
        Vector u = rng.gaussian_vector(c.k);
        double lhs = u.dot(jvp_params(m, mask, x, v));
        double rhs = vjp_params(m, mask, x, u).dot(v);
        CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));
      }
    }
  }
  Rng rng(11);
  RandomFeatures rf = init_rf(4, 30, rng);
  Vector x = rng.gaussian_vector(4);
  Vector v = rng.gaussian_vector(30);
  Vector u(1);
  u << -2.2;
  CHECK(u.dot(jvp_params(rf, ParamMask::all_layers, x, v)) ==
        doctest::Approx(vjp_params(rf, ParamMask::all_layers, x, u).dot(v))
            .epsilon(1e-12));
}

TEST_CASE("relu positive homogeneity") {
  Mlp m = random_mlp(4, 6, 3, 1, 24);
  Rng rng(12);
  Vector x = rng.gaussian_vector(4);
  for (double c : {0.0, 0.5, 2.0, 7.5}) {
    MlpForwardCache base = mlp_forward_cache(m, Matrix(x.transpose()));
    MlpForwardCache scaled =
        mlp_forward_cache(m, Matrix((c * x).transpose()));
    for (std::size_t l = 1; l < base.post.size(); ++l)
      CHECK((scaled.post[l] - c * base.post[l]).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((forward(m, c * x) - c * forward(m, x)).cwiseAbs().maxCoeff() <
          1e-12);
  }
}

TEST_CASE("gradient_matrix stacks per-sample param_gradient rows") {
  Mlp m = random_mlp(3, 4, 3, 2, 25);
  Rng rng(13);
  Matrix xs = rng.gaussian_matrix(5, 3);
  for (ParamMask mask : {ParamMask::all_layers, ParamMask::last_layer}) {
    Matrix g = gradient_matrix(m, mask, xs);
    REQUIRE(g.rows() == 10);
    for (int i = 0; i < 5; ++i) {
      Matrix per = param_gradient(m, mask, Vector(xs.row(i)));
      for (int cls = 0; cls < 2; ++cls)
        CHECK((g.row(i * 2 + cls) - per.row(cls)).cwiseAbs().maxCoeff() <
              1e-13);
    }
  }
}

TEST_CASE("mlp_backprop agrees with weighted gradient rows") {
  Mlp m = random_mlp(4, 5, 3, 2, 26);
  Rng rng(14);
  Matrix xs = rng.gaussian_matrix(6, 4);
  Matrix out_grad = rng.gaussian_matrix(6, 2);
  MlpForwardCache cache = mlp_forward_cache(m, xs);
  auto grads = mlp_backprop(m, cache, out_grad);

  Matrix g = gradient_matrix(m, ParamMask::all_layers, xs);
  Vector combined = Vector::Zero(g.cols());
  for (int i = 0; i < 6; ++i)
    for (int cls = 0; cls < 2; ++cls)
      combined += out_grad(i, cls) * g.row(i * 2 + cls).transpose();

  Eigen::Index offset = 0;
  for (const auto& layer_grad : grads) {
    Vector flat = Eigen::Map<const Vector>(layer_grad.data(), layer_grad.size());
    CHECK((flat - combined.segment(offset, flat.size())).cwiseAbs().maxCoeff() <
          1e-11);
    offset += flat.size();
  }
}

TEST_CASE("flatten and unflatten round-trip bit-exactly") {
  Mlp m = random_mlp(3, 4, 4, 2, 27);
  Vector flat = flatten(m);
  Mlp back = unflatten(m, flat);
  for (std::size_t l = 0; l < m.layers.size(); ++l)
    CHECK((m.layers[l].array() == back.layers[l].array()).all());
  CHECK((flatten(back).array() == flat.array()).all());

  CHECK(param_count(m) == flat.size());
  CHECK(masked_count(m, ParamMask::last_layer) == m.layers.back().size());
}

TEST_CASE("masked_flatten selects the trailing block") {
  Mlp m = random_mlp(3, 4, 3, 2, 28);
  Vector all = masked_flatten(m, ParamMask::all_layers);
  Vector last = masked_flatten(m, ParamMask::last_layer);
  CHECK((all.tail(last.size()).array() == last.array()).all());
}

TEST_CASE("construction rejects bad shapes and activations") {
  std::vector<Matrix> bad = {Matrix::Zero(3, 2), Matrix::Zero(2, 4)};
  CHECK_THROWS_AS(make_mlp(bad), DimensionError);
  std::vector<Matrix> ok = {Matrix::Zero(3, 2), Matrix::Zero(1, 3)};
  CHECK_THROWS_AS(make_mlp(ok, Activation::tanh), ConfigError);
  CHECK_THROWS_AS(make_rf(Matrix::Zero(4, 2), Vector::Zero(3), Vector::Zero(4)),
                  DimensionError);
  CHECK_THROWS_AS(
      make_rf(Matrix::Zero(4, 2), Vector::Zero(4), Vector::Zero(4),
              Activation::relu),
      ConfigError);
}

TEST_CASE("model checkpoints round-trip") {
  Mlp m = random_mlp(4, 6, 3, 2, 29);
  std::string path = support::temp_path("model_mlp.bin");
  save_model(AnyModel(m), path);
  AnyModel loaded = load_model(path);
  const Mlp& back = std::get<Mlp>(loaded);
  REQUIRE(back.layers.size() == m.layers.size());
  for (std::size_t l = 0; l < m.layers.size(); ++l)
    CHECK((back.layers[l].array() == m.layers[l].array()).all());

  Rng rng(15);
  RandomFeatures rf = init_rf(5, 12, rng, Activation::sigmoid);
  rf = unflatten(rf, Vector(rng.gaussian_vector(12)));
  std::string rf_path = support::temp_path("model_rf.bin");
  save_model(AnyModel(rf), rf_path);
  AnyModel rf_loaded = load_model(rf_path);
  const RandomFeatures& rf_back = std::get<RandomFeatures>(rf_loaded);
  CHECK(rf_back.activation == Activation::sigmoid);
  CHECK((rf_back.v.array() == rf.v.array()).all());
  CHECK((rf_back.b.array() == rf.b.array()).all());
  CHECK((rf_back.theta.array() == rf.theta.array()).all());
}

TEST_CASE("model checkpoint corruption is detected") {
  Mlp m = random_mlp(2, 3, 2, 1, 30);
  std::string path = support::temp_path("model_bad.bin");
  save_model(AnyModel(m), path);
  {
    std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
    f.put('Z');
  }
  CHECK_THROWS_AS(load_model(path), DataError);
  CHECK_THROWS_AS(load_model(support::temp_path("model_missing.bin")),
                  DataError);
}
