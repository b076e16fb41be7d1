#include "deltarec/model.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <utility>

namespace deltarec {

namespace {

constexpr char kModelMagic[8] = {'D', 'R', 'E', 'C', 'M', 'D', '0', '1'};

void check(bool ok, const char* msg) {
  if (!ok) throw DimensionError(msg);
}

double inv_sqrt(Eigen::Index n) {
  return 1.0 / std::sqrt(static_cast<double>(n));
}

void write_i64(std::ofstream& out, std::int64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::int64_t read_i64(std::ifstream& in) {
  std::int64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!in) throw DataError("model checkpoint: truncated header");
  return v;
}

void write_doubles(std::ofstream& out, const double* data, std::size_t count) {
  out.write(reinterpret_cast<const char*>(data),
            static_cast<std::streamsize>(sizeof(double) * count));
}

void read_doubles(std::ifstream& in, double* data, std::size_t count) {
  in.read(reinterpret_cast<char*>(data),
          static_cast<std::streamsize>(sizeof(double) * count));
  if (!in) throw DataError("model checkpoint: truncated payload");
}

}  // namespace

std::string to_string(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
    case Activation::sigmoid: return "sigmoid";
  }
  throw ConfigError("unknown activation tag");
}

Activation activation_from_string(const std::string& name) {
  if (name == "relu") return Activation::relu;
  if (name == "tanh") return Activation::tanh;
  if (name == "sigmoid") return Activation::sigmoid;
  throw ConfigError("unknown activation: " + name);
}

Matrix activate(Activation a, const Matrix& pre) {
  switch (a) {
    case Activation::relu: return pre.cwiseMax(0.0);
    case Activation::tanh: return pre.array().tanh();
    case Activation::sigmoid:
      return (1.0 / (1.0 + (-pre.array()).exp())).matrix();
  }
  throw ConfigError("unknown activation tag");
}

Matrix activate_derivative(Activation a, const Matrix& pre) {
  switch (a) {
    case Activation::relu:
      // Subgradient at 0 taken as 0.
      return (pre.array() > 0.0).cast<double>();
    case Activation::tanh:
      return (1.0 - pre.array().tanh().square()).matrix();
    case Activation::sigmoid: {
      Eigen::ArrayXXd s = 1.0 / (1.0 + (-pre.array()).exp());
      return (s * (1.0 - s)).matrix();
    }
  }
  throw ConfigError("unknown activation tag");
}

Mlp make_mlp(std::vector<Matrix> layers, Activation activation) {
  if (layers.empty()) throw DimensionError("mlp needs at least one layer");
  for (std::size_t l = 1; l < layers.size(); ++l)
    check(layers[l].cols() == layers[l - 1].rows(),
          "mlp layer shapes do not compose");
  if (activation != Activation::relu)
    throw ConfigError("mlp supports relu only");
  Mlp m;
  m.layers = std::move(layers);
  m.activation = activation;
  return m;
}

Mlp init_mlp(Eigen::Index d, Eigen::Index p, Eigen::Index depth,
             Eigen::Index k, Rng& rng) {
  check(d >= 1 && k >= 1 && depth >= 1, "init_mlp: bad dimensions");
  check(depth == 1 || p >= 1, "init_mlp: hidden width must be positive");
  std::vector<Matrix> layers;
  if (depth == 1) {
    layers.push_back(rng.gaussian_matrix(k, d) * inv_sqrt(d));
  } else {
    layers.push_back(rng.gaussian_matrix(p, d) * inv_sqrt(d));
    for (Eigen::Index l = 0; l < depth - 2; ++l)
      layers.push_back(rng.gaussian_matrix(p, p) * inv_sqrt(p));
    layers.push_back(rng.gaussian_matrix(k, p) * inv_sqrt(p));
  }
  return make_mlp(std::move(layers));
}

RandomFeatures make_rf(Matrix v, Vector b, Vector theta,
                       Activation activation) {
  check(v.rows() == b.size() && v.rows() == theta.size(),
        "random features: V, b, theta sizes disagree");
  if (activation == Activation::relu)
    throw ConfigError("random features need a bounded activation");
  RandomFeatures m;
  m.v = std::move(v);
  m.b = std::move(b);
  m.theta = std::move(theta);
  m.activation = activation;
  return m;
}

RandomFeatures init_rf(Eigen::Index d, Eigen::Index p, Rng& rng,
                       Activation activation) {
  check(d >= 1 && p >= 1, "init_rf: bad dimensions");
  Matrix v = rng.gaussian_matrix(p, d) * inv_sqrt(d);
  Vector b = rng.gaussian_vector(p);
  return make_rf(std::move(v), std::move(b), Vector::Zero(p), activation);
}

Eigen::Index input_dim(const Mlp& m) { return m.layers.front().cols(); }
Eigen::Index output_dim(const Mlp& m) { return m.layers.back().rows(); }

Eigen::Index param_count(const Mlp& m) {
  Eigen::Index total = 0;
  for (const auto& w : m.layers) total += w.size();
  return total;
}

Eigen::Index masked_count(const Mlp& m, ParamMask mask) {
  return mask == ParamMask::all_layers ? param_count(m)
                                       : m.layers.back().size();
}

Eigen::Index input_dim(const RandomFeatures& m) { return m.v.cols(); }
Eigen::Index output_dim(const RandomFeatures&) { return 1; }
Eigen::Index param_count(const RandomFeatures& m) { return m.theta.size(); }
Eigen::Index masked_count(const RandomFeatures& m, ParamMask) {
  return m.theta.size();
}

Eigen::Index input_dim(const AnyModel& m) {
  return std::visit([](const auto& inner) { return input_dim(inner); }, m);
}
Eigen::Index output_dim(const AnyModel& m) {
  return std::visit([](const auto& inner) { return output_dim(inner); }, m);
}
Eigen::Index param_count(const AnyModel& m) {
  return std::visit([](const auto& inner) { return param_count(inner); }, m);
}
Eigen::Index masked_count(const AnyModel& m, ParamMask mask) {
  return std::visit(
      [mask](const auto& inner) { return masked_count(inner, mask); }, m);
}

Vector flatten(const Mlp& m) {
  Vector flat(param_count(m));
  Eigen::Index offset = 0;
  for (const auto& w : m.layers) {
    flat.segment(offset, w.size()) =
        Eigen::Map<const Vector>(w.data(), w.size());
    offset += w.size();
  }
  return flat;
}

Mlp unflatten(const Mlp& like, const Vector& flat) {
  check(flat.size() == param_count(like), "unflatten: length mismatch");
  Mlp m = like;
  Eigen::Index offset = 0;
  for (auto& w : m.layers) {
    Eigen::Map<Vector>(w.data(), w.size()) = flat.segment(offset, w.size());
    offset += w.size();
  }
  return m;
}

Vector flatten(const RandomFeatures& m) { return m.theta; }

RandomFeatures unflatten(const RandomFeatures& like, const Vector& flat) {
  check(flat.size() == like.theta.size(), "unflatten: length mismatch");
  RandomFeatures m = like;
  m.theta = flat;
  return m;
}

Vector flatten(const AnyModel& m) {
  return std::visit([](const auto& inner) { return flatten(inner); }, m);
}

AnyModel unflatten(const AnyModel& like, const Vector& flat) {
  return std::visit(
      [&flat](const auto& inner) { return AnyModel(unflatten(inner, flat)); },
      like);
}

Vector masked_flatten(const Mlp& m, ParamMask mask) {
  if (mask == ParamMask::all_layers) return flatten(m);
  const Matrix& w = m.layers.back();
  return Eigen::Map<const Vector>(w.data(), w.size());
}

Vector masked_flatten(const RandomFeatures& m, ParamMask) { return m.theta; }

Vector masked_flatten(const AnyModel& m, ParamMask mask) {
  return std::visit(
      [mask](const auto& inner) { return masked_flatten(inner, mask); }, m);
}

Matrix forward_batch(const Mlp& m, const Matrix& xs) {
  check(xs.cols() == input_dim(m), "forward: input dimension mismatch");
  Matrix h = xs;
  for (std::size_t l = 0; l + 1 < m.layers.size(); ++l)
    h = activate(m.activation, h * m.layers[l].transpose());
  return h * m.layers.back().transpose();
}

Vector forward(const Mlp& m, const Vector& x) {
  return forward_batch(m, x.transpose()).row(0);
}

Matrix rf_features_batch(const RandomFeatures& m, const Matrix& xs) {
  check(xs.cols() == input_dim(m), "rf_features: input dimension mismatch");
  Matrix pre = xs * m.v.transpose();
  pre.rowwise() += m.b.transpose();
  return activate(m.activation, pre) * inv_sqrt(m.theta.size());
}

Vector rf_features(const RandomFeatures& m, const Vector& x) {
  return rf_features_batch(m, x.transpose()).row(0);
}

Matrix forward_batch(const RandomFeatures& m, const Matrix& xs) {
  return rf_features_batch(m, xs) * m.theta;
}

Vector forward(const RandomFeatures& m, const Vector& x) {
  return forward_batch(m, x.transpose()).row(0);
}

Vector forward(const AnyModel& m, const Vector& x) {
  return std::visit([&x](const auto& inner) { return forward(inner, x); }, m);
}

Matrix forward_batch(const AnyModel& m, const Matrix& xs) {
  return std::visit(
      [&xs](const auto& inner) { return forward_batch(inner, xs); }, m);
}

MlpForwardCache mlp_forward_cache(const Mlp& m, const Matrix& xs) {
  check(xs.cols() == input_dim(m), "forward: input dimension mismatch");
  MlpForwardCache cache;
  cache.post.push_back(xs);
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    cache.pre.push_back(cache.post.back() * m.layers[l].transpose());
    if (l + 1 < m.layers.size())
      cache.post.push_back(activate(m.activation, cache.pre.back()));
  }
  return cache;
}

std::vector<Matrix> mlp_backprop(const Mlp& m, const MlpForwardCache& cache,
                                 const Matrix& out_grad) {
  const std::size_t depth = m.layers.size();
  std::vector<Matrix> grads(depth);
  Matrix delta = out_grad;
  for (std::size_t l = depth; l-- > 0;) {
    grads[l] = delta.transpose() * cache.post[l];
    if (l > 0)
      delta = (delta * m.layers[l]).cwiseProduct(
          activate_derivative(m.activation, cache.pre[l - 1]));
  }
  return grads;
}

Matrix gradient_matrix(const Mlp& m, ParamMask mask, const Matrix& xs) {
  const Eigen::Index n = xs.rows();
  const Eigen::Index k = output_dim(m);
  const Eigen::Index cols = masked_count(m, mask);
  const std::size_t depth = m.layers.size();
  const std::size_t first_layer =
      mask == ParamMask::all_layers ? 0 : depth - 1;

  MlpForwardCache cache = mlp_forward_cache(m, xs);
  Matrix g = Matrix::Zero(n * k, cols);
  for (Eigen::Index cls = 0; cls < k; ++cls) {
    // Backward pass seeded with output coordinate cls for every sample.
    Matrix delta = Matrix::Zero(n, k);
    delta.col(cls).setOnes();
    for (std::size_t l = depth; l-- > 0;) {
      if (l >= first_layer) {
        Eigen::Index offset = 0;
        if (mask == ParamMask::all_layers)
          for (std::size_t j = 0; j < l; ++j) offset += m.layers[j].size();
        const Eigen::Index rows_l = m.layers[l].rows();
        const Eigen::Index cols_l = m.layers[l].cols();
        for (Eigen::Index i = 0; i < n; ++i) {
          double* dst = g.data() + (i * k + cls) * g.cols() + offset;
          Eigen::Map<Matrix>(dst, rows_l, cols_l).noalias() =
              delta.row(i).transpose() * cache.post[l].row(i);
        }
      }
      if (l == first_layer) break;
      delta = (delta * m.layers[l]).cwiseProduct(
          activate_derivative(m.activation, cache.pre[l - 1]));
    }
  }
  return g;
}

Matrix gradient_matrix(const RandomFeatures& m, ParamMask, const Matrix& xs) {
  return rf_features_batch(m, xs);
}

Matrix gradient_matrix(const AnyModel& m, ParamMask mask, const Matrix& xs) {
  return std::visit(
      [&](const auto& inner) { return gradient_matrix(inner, mask, xs); }, m);
}

Matrix param_gradient(const Mlp& m, ParamMask mask, const Vector& x) {
  return gradient_matrix(m, mask, Matrix(x.transpose()));
}

Matrix param_gradient(const RandomFeatures& m, ParamMask mask,
                      const Vector& x) {
  return gradient_matrix(m, mask, Matrix(x.transpose()));
}

Matrix param_gradient(const AnyModel& m, ParamMask mask, const Vector& x) {
  return std::visit(
      [&](const auto& inner) { return param_gradient(inner, mask, x); }, m);
}

Vector input_gradient(const Mlp& m, const Vector& x, const Vector& cotangent) {
  check(x.size() == input_dim(m), "input_gradient: input dimension mismatch");
  check(cotangent.size() == output_dim(m),
        "input_gradient: cotangent dimension mismatch");
  MlpForwardCache cache = mlp_forward_cache(m, Matrix(x.transpose()));
  Matrix delta = cotangent.transpose();
  for (std::size_t l = m.layers.size(); l-- > 1;)
    delta = (delta * m.layers[l]).cwiseProduct(
        activate_derivative(m.activation, cache.pre[l - 1]));
  return (delta * m.layers[0]).row(0);
}

Vector input_gradient(const RandomFeatures& m, const Vector& x,
                      const Vector& cotangent) {
  check(x.size() == input_dim(m), "input_gradient: input dimension mismatch");
  check(cotangent.size() == 1, "input_gradient: cotangent dimension mismatch");
  Vector pre = m.v * x + m.b;
  Vector weighted = activate_derivative(m.activation, pre)
                        .cwiseProduct(m.theta) *
                    (cotangent[0] * inv_sqrt(m.theta.size()));
  return m.v.transpose() * weighted;
}

Vector input_gradient(const AnyModel& m, const Vector& x,
                      const Vector& cotangent) {
  return std::visit(
      [&](const auto& inner) { return input_gradient(inner, x, cotangent); },
      m);
}

Vector jvp_params(const Mlp& m, ParamMask mask, const Vector& x,
                  const Vector& v) {
  check(v.size() == masked_count(m, mask), "jvp: tangent length mismatch");
  check(x.size() == input_dim(m), "jvp: input dimension mismatch");
  const std::size_t depth = m.layers.size();
  const std::size_t first_layer =
      mask == ParamMask::all_layers ? 0 : depth - 1;
  Vector h = x;
  Vector dh = Vector::Zero(x.size());
  Eigen::Index offset = 0;
  for (std::size_t l = 0; l < depth; ++l) {
    const Matrix& w = m.layers[l];
    Vector a = w * h;
    Vector da = w * dh;
    if (l >= first_layer) {
      Eigen::Map<const Matrix> dw(v.data() + offset, w.rows(), w.cols());
      da += dw * h;
      offset += w.size();
    }
    if (l + 1 == depth) return da;
    Matrix deriv = activate_derivative(m.activation, Matrix(a.transpose()));
    dh = deriv.row(0).transpose().cwiseProduct(da);
    h = activate(m.activation, Matrix(a.transpose())).row(0);
  }
  throw Error("jvp: empty model");
}

Vector vjp_params(const Mlp& m, ParamMask mask, const Vector& x,
                  const Vector& u) {
  check(u.size() == output_dim(m), "vjp: cotangent dimension mismatch");
  check(x.size() == input_dim(m), "vjp: input dimension mismatch");
  const std::size_t depth = m.layers.size();
  const std::size_t first_layer =
      mask == ParamMask::all_layers ? 0 : depth - 1;
  MlpForwardCache cache = mlp_forward_cache(m, Matrix(x.transpose()));
  Vector out = Vector::Zero(masked_count(m, mask));
  Matrix delta = u.transpose();
  for (std::size_t l = depth; l-- > 0;) {
    if (l >= first_layer) {
      Eigen::Index offset = 0;
      if (mask == ParamMask::all_layers)
        for (std::size_t j = 0; j < l; ++j) offset += m.layers[j].size();
      Eigen::Map<Matrix>(out.data() + offset, m.layers[l].rows(),
                         m.layers[l].cols()) =
          delta.transpose() * cache.post[l];
    }
    if (l == first_layer) break;
    delta = (delta * m.layers[l]).cwiseProduct(
        activate_derivative(m.activation, cache.pre[l - 1]));
  }
  return out;
}

Vector jvp_params(const RandomFeatures& m, ParamMask, const Vector& x,
                  const Vector& v) {
  check(v.size() == m.theta.size(), "jvp: tangent length mismatch");
  Vector out(1);
  out[0] = rf_features(m, x).dot(v);
  return out;
}

Vector vjp_params(const RandomFeatures& m, ParamMask, const Vector& x,
                  const Vector& u) {
  check(u.size() == 1, "vjp: cotangent dimension mismatch");
  return rf_features(m, x) * u[0];
}

Vector jvp_params(const AnyModel& m, ParamMask mask, const Vector& x,
                  const Vector& v) {
  return std::visit(
      [&](const auto& inner) { return jvp_params(inner, mask, x, v); }, m);
}

Vector vjp_params(const AnyModel& m, ParamMask mask, const Vector& x,
                  const Vector& u) {
  return std::visit(
      [&](const auto& inner) { return vjp_params(inner, mask, x, u); }, m);
}

void save_model(const AnyModel& m, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("model checkpoint: cannot open " + path);
  out.write(kModelMagic, sizeof(kModelMagic));
  if (const Mlp* mlp = std::get_if<Mlp>(&m)) {
    write_i64(out, 0);
    write_i64(out, static_cast<std::int64_t>(mlp->activation));
    write_i64(out, static_cast<std::int64_t>(mlp->layers.size()));
    for (const auto& w : mlp->layers) {
      write_i64(out, w.rows());
      write_i64(out, w.cols());
    }
    for (const auto& w : mlp->layers) write_doubles(out, w.data(), w.size());
  } else {
    const RandomFeatures& rf = std::get<RandomFeatures>(m);
    write_i64(out, 1);
    write_i64(out, static_cast<std::int64_t>(rf.activation));
    write_i64(out, rf.v.rows());
    write_i64(out, rf.v.cols());
    write_doubles(out, rf.v.data(), rf.v.size());
    write_doubles(out, rf.b.data(), rf.b.size());
    write_doubles(out, rf.theta.data(), rf.theta.size());
  }
  if (!out) throw DataError("model checkpoint: write failed for " + path);
}

AnyModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("model checkpoint: cannot open " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kModelMagic, sizeof(kModelMagic)) != 0)
    throw DataError("model checkpoint: bad magic in " + path);
  std::int64_t kind = read_i64(in);
  std::int64_t act_tag = read_i64(in);
  if (act_tag < 0 || act_tag > 2)
    throw DataError("model checkpoint: bad activation tag");
  Activation act = static_cast<Activation>(act_tag);
  if (kind == 0) {
    std::int64_t depth = read_i64(in);
    if (depth < 1 || depth > 1024)
      throw DataError("model checkpoint: implausible depth");
    std::vector<std::pair<std::int64_t, std::int64_t>> shapes;
    for (std::int64_t l = 0; l < depth; ++l) {
      std::int64_t rows = read_i64(in), cols = read_i64(in);
      if (rows < 1 || cols < 1)
        throw DataError("model checkpoint: implausible layer shape");
      shapes.emplace_back(rows, cols);
    }
    std::vector<Matrix> layers;
    for (auto [rows, cols] : shapes) {
      Matrix w(rows, cols);
      read_doubles(in, w.data(), w.size());
      layers.push_back(std::move(w));
    }
    return make_mlp(std::move(layers), act);
  }
  if (kind == 1) {
    std::int64_t p = read_i64(in), d = read_i64(in);
    if (p < 1 || d < 1) throw DataError("model checkpoint: implausible shape");
    Matrix v(p, d);
    Vector b(p), theta(p);
    read_doubles(in, v.data(), v.size());
    read_doubles(in, b.data(), b.size());
    read_doubles(in, theta.data(), theta.size());
    return make_rf(std::move(v), std::move(b), std::move(theta), act);
  }
  throw DataError("model checkpoint: unknown model kind");
}

}  // namespace deltarec
