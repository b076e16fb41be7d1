#pragma once

#include "deltarec/errors.hpp"
#include "deltarec/linalg.hpp"

#include <string>
#include <variant>
#include <vector>

namespace deltarec {

enum class Activation { relu, tanh, sigmoid };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& name);

Matrix activate(Activation a, const Matrix& pre);
Matrix activate_derivative(Activation a, const Matrix& pre);

// Bias-free feedforward net: W1 (p x d), hidden (p x p), WL (K x p).
// Restricted to ReLU; the reconstruction gradient relies on the activation
// being piecewise linear.
struct Mlp {
  std::vector<Matrix> layers;
  Activation activation = Activation::relu;
};

// f(x) = (1/sqrt(p)) theta^T phi(V x + b); V and b stay frozen.
struct RandomFeatures {
  Matrix v;
  Vector b;
  Vector theta;
  Activation activation = Activation::tanh;
};

enum class ParamMask { all_layers, last_layer };

using AnyModel = std::variant<Mlp, RandomFeatures>;

Mlp make_mlp(std::vector<Matrix> layers,
             Activation activation = Activation::relu);
Mlp init_mlp(Eigen::Index d, Eigen::Index p, Eigen::Index depth,
             Eigen::Index k, Rng& rng);
RandomFeatures make_rf(Matrix v, Vector b, Vector theta,
                       Activation activation = Activation::tanh);
RandomFeatures init_rf(Eigen::Index d, Eigen::Index p, Rng& rng,
                       Activation activation = Activation::tanh);

Eigen::Index input_dim(const Mlp& m);
Eigen::Index output_dim(const Mlp& m);
Eigen::Index param_count(const Mlp& m);
Eigen::Index masked_count(const Mlp& m, ParamMask mask);
Eigen::Index input_dim(const RandomFeatures& m);
Eigen::Index output_dim(const RandomFeatures& m);
Eigen::Index param_count(const RandomFeatures& m);
Eigen::Index masked_count(const RandomFeatures& m, ParamMask mask);
Eigen::Index input_dim(const AnyModel& m);
Eigen::Index output_dim(const AnyModel& m);
Eigen::Index param_count(const AnyModel& m);
Eigen::Index masked_count(const AnyModel& m, ParamMask mask);

Vector flatten(const Mlp& m);
Mlp unflatten(const Mlp& like, const Vector& flat);
Vector flatten(const RandomFeatures& m);
RandomFeatures unflatten(const RandomFeatures& like, const Vector& flat);
Vector flatten(const AnyModel& m);
AnyModel unflatten(const AnyModel& like, const Vector& flat);
Vector masked_flatten(const Mlp& m, ParamMask mask);
Vector masked_flatten(const RandomFeatures& m, ParamMask mask);
Vector masked_flatten(const AnyModel& m, ParamMask mask);

Vector forward(const Mlp& m, const Vector& x);
Vector forward(const RandomFeatures& m, const Vector& x);
Vector forward(const AnyModel& m, const Vector& x);
Matrix forward_batch(const Mlp& m, const Matrix& xs);
Matrix forward_batch(const RandomFeatures& m, const Matrix& xs);
Matrix forward_batch(const AnyModel& m, const Matrix& xs);

Vector rf_features(const RandomFeatures& m, const Vector& x);
Matrix rf_features_batch(const RandomFeatures& m, const Matrix& xs);

// Rows are output coordinates, columns the masked parameters in
// flatten order.
Matrix param_gradient(const Mlp& m, ParamMask mask, const Vector& x);
Matrix param_gradient(const RandomFeatures& m, ParamMask mask, const Vector& x);
Matrix param_gradient(const AnyModel& m, ParamMask mask, const Vector& x);

Vector input_gradient(const Mlp& m, const Vector& x, const Vector& cotangent);
Vector input_gradient(const RandomFeatures& m, const Vector& x,
                      const Vector& cotangent);
Vector input_gradient(const AnyModel& m, const Vector& x,
                      const Vector& cotangent);

Vector jvp_params(const Mlp& m, ParamMask mask, const Vector& x,
                  const Vector& v);
Vector jvp_params(const RandomFeatures& m, ParamMask mask, const Vector& x,
                  const Vector& v);
Vector jvp_params(const AnyModel& m, ParamMask mask, const Vector& x,
                  const Vector& v);
Vector vjp_params(const Mlp& m, ParamMask mask, const Vector& x,
                  const Vector& u);
Vector vjp_params(const RandomFeatures& m, ParamMask mask, const Vector& x,
                  const Vector& u);
Vector vjp_params(const AnyModel& m, ParamMask mask, const Vector& x,
                  const Vector& u);

// pre[l] holds the preactivations of layer l+1 (pre.back() is the raw
// output), post[l] the activations feeding layer l+1 (post[0] is the input).
struct MlpForwardCache {
  std::vector<Matrix> pre;
  std::vector<Matrix> post;
};

MlpForwardCache mlp_forward_cache(const Mlp& m, const Matrix& xs);

// Layer gradients of sum_i loss_i given d(loss)/d(output) rows.
std::vector<Matrix> mlp_backprop(const Mlp& m, const MlpForwardCache& cache,
                                 const Matrix& out_grad);

// Stacked gradient matrix: one row per (sample, output class) pair, sample
// major, columns in masked flatten order.
Matrix gradient_matrix(const Mlp& m, ParamMask mask, const Matrix& xs);
Matrix gradient_matrix(const RandomFeatures& m, ParamMask mask,
                       const Matrix& xs);
Matrix gradient_matrix(const AnyModel& m, ParamMask mask, const Matrix& xs);

void save_model(const AnyModel& m, const std::string& path);
AnyModel load_model(const std::string& path);

}  // namespace deltarec
