#include "deltarec/reconstruct.hpp"

#include "deltarec/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

namespace deltarec {

namespace {

constexpr Eigen::Index kDenseParamLimit = 200000;
constexpr double kCgTol = 1e-10;

std::string format_g(double value) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", value);
  return buf;
}

double clamp_loss(double loss, double delta_sq) {
  if (loss < 0.0 && loss >= -1e-9 * std::max(1.0, delta_sq)) return 0.0;
  return loss;
}

Vector solve_gram(const Matrix& gram, const Vector& rhs, double requested,
                  double* ridge_used) {
  if (requested >= 0.0) {
    *ridge_used = requested;
    return la::solve_spd(gram, rhs, requested);
  }
  try {
    *ridge_used = 0.0;
    return la::solve_spd(gram, rhs, 0.0);
  } catch (const SolverError&) {
    double fallback = la::default_ridge(gram);
    *ridge_used = fallback;
    return la::solve_spd(gram, rhs, fallback);
  }
}

struct EvalState {
  double loss = 0.0;
  Vector alpha;
  Matrix grad;  // empty unless requested
  ReconDiagnostics diag;
};

// Pulls d(loss)/d(xhat) back through the network with alpha held at its
// optimum; relu patterns are treated as locally constant.
Matrix mlp_pullback(const Mlp& m, ParamMask mask, const MlpForwardCache& cache,
                    const Matrix& alpha_mat,
                    const std::vector<Matrix>& res_blocks) {
  const auto& layers = m.layers;
  const std::size_t depth = layers.size();
  Matrix t = alpha_mat * res_blocks.back();
  Matrix delta = alpha_mat;
  for (std::size_t v = depth - 1; v >= 1; --v) {
    Matrix d = activate_derivative(m.activation, cache.pre[v - 1]);
    t = (t.array() * d.array()).matrix() * layers[v - 1];
    if (mask == ParamMask::all_layers) {
      delta = ((delta * layers[v]).array() * d.array()).matrix();
      t += delta * res_blocks[v - 1];
    }
  }
  return -2.0 * t;
}

// Residual unflattened into per-layer matrices, masked flatten order.
std::vector<Matrix> split_residual(const Mlp& m, ParamMask mask,
                                   const Vector& residual) {
  std::vector<Matrix> blocks;
  if (mask == ParamMask::last_layer) {
    const Matrix& last = m.layers.back();
    blocks.emplace_back(Eigen::Map<const Matrix>(residual.data(), last.rows(),
                                                 last.cols()));
    return blocks;
  }
  Eigen::Index offset = 0;
  for (const Matrix& w : m.layers) {
    blocks.emplace_back(
        Eigen::Map<const Matrix>(residual.data() + offset, w.rows(), w.cols()));
    offset += w.size();
  }
  return blocks;
}

EvalState eval_dense(const ReconProblem& problem, const Matrix& xhat,
                     bool want_grad) {
  EvalState out;
  Matrix g = gradient_matrix(problem.model, problem.mask, xhat);
  Matrix gram = g * g.transpose();
  Vector rhs = g * problem.delta;
  out.alpha = solve_gram(gram, rhs, problem.ridge, &out.diag.ridge_used);
  double delta_sq = problem.delta.squaredNorm();
  out.loss = clamp_loss(delta_sq - rhs.dot(out.alpha), delta_sq);
  out.diag.used_dense = true;
  if (!want_grad) return out;

  Vector residual = problem.delta - g.transpose() * out.alpha;
  const Eigen::Index n = xhat.rows();
  const Eigen::Index k = output_dim(problem.model);
  Eigen::Map<const Matrix> alpha_mat(out.alpha.data(), n, k);
  if (const auto* rf = std::get_if<RandomFeatures>(&problem.model)) {
    Matrix pre = xhat * rf->v.transpose();
    pre.rowwise() += rf->b.transpose();
    Matrix weights = activate_derivative(rf->activation, pre);
    weights.array().rowwise() *= residual.transpose().array();
    weights.array().colwise() *= out.alpha.array();
    double scale = -2.0 / std::sqrt(static_cast<double>(rf->v.rows()));
    out.grad = scale * (weights * rf->v);
  } else {
    const Mlp& m = std::get<Mlp>(problem.model);
    MlpForwardCache cache = mlp_forward_cache(m, xhat);
    out.grad = mlp_pullback(m, problem.mask, cache, alpha_mat,
                            split_residual(m, problem.mask, residual));
  }
  return out;
}

// Last-layer mlp case: the gram is block diagonal over classes with the
// shared block H H^T, so solve per class against the penultimate features.
EvalState eval_structured(const ReconProblem& problem, const Matrix& xhat,
                          bool want_grad) {
  const Mlp& m = std::get<Mlp>(problem.model);
  const Matrix& last = m.layers.back();
  const Eigen::Index k = last.rows();
  const Eigen::Index p = last.cols();
  const Eigen::Index n = xhat.rows();

  MlpForwardCache cache = mlp_forward_cache(m, xhat);
  const Matrix& h = cache.post.back();
  Matrix s = h * h.transpose();
  Eigen::Map<const Matrix> dw(problem.delta.data(), k, p);
  Matrix rhs = h * dw.transpose();  // n x k

  EvalState out;
  out.diag.used_dense = true;
  Matrix alpha_mat(n, k);
  double ridge = problem.ridge;
  for (int attempt = 0; attempt < 2; ++attempt) {
    try {
      double used = 0.0;
      for (Eigen::Index c = 0; c < k; ++c) {
        alpha_mat.col(c) =
            solve_gram(s, rhs.col(c), std::max(ridge, 0.0), &used);
      }
      out.diag.ridge_used = std::max(ridge, 0.0);
      break;
    } catch (const SolverError&) {
      if (attempt == 1 || ridge >= 0.0) throw;
      ridge = la::default_ridge(s);
    }
  }

  double delta_sq = problem.delta.squaredNorm();
  out.loss =
      clamp_loss(delta_sq - (rhs.array() * alpha_mat.array()).sum(), delta_sq);
  out.alpha = Vector(n * k);
  Eigen::Map<Matrix>(out.alpha.data(), n, k) = alpha_mat;
  if (!want_grad) return out;

  Matrix res_block = dw - alpha_mat.transpose() * h;  // k x p
  out.grad = mlp_pullback(m, ParamMask::last_layer, cache, alpha_mat,
                          {std::move(res_block)});
  return out;
}

EvalState eval_cg(const ReconProblem& problem, const Matrix& xhat,
                  bool want_grad) {
  const Eigen::Index n = xhat.rows();
  const Eigen::Index k = output_dim(problem.model);
  const Eigen::Index nk = n * k;
  const Eigen::Index m_params = problem.delta.size();

  auto apply_gt = [&](const Vector& w) {
    Vector t = Vector::Zero(m_params);
    for (Eigen::Index i = 0; i < n; ++i) {
      t += vjp_params(problem.model, problem.mask, xhat.row(i).transpose(),
                      w.segment(i * k, k));
    }
    return t;
  };
  auto apply_g = [&](const Vector& t) {
    Vector out(nk);
    for (Eigen::Index i = 0; i < n; ++i) {
      out.segment(i * k, k) =
          jvp_params(problem.model, problem.mask, xhat.row(i).transpose(), t);
    }
    return out;
  };

  Vector rhs = apply_g(problem.delta);
  int max_iters = static_cast<int>(5 * nk);

  auto run_cg = [&](double ridge) {
    la::LinearOperator op = [&, ridge](const Vector& w) {
      Vector out = apply_g(apply_gt(w));
      if (ridge > 0.0) out += ridge * w;
      return out;
    };
    return la::cg_solve(op, rhs, kCgTol, max_iters);
  };

  EvalState out;
  out.diag.used_dense = false;
  double ridge = std::max(problem.ridge, 0.0);
  la::CgResult cg = run_cg(ridge);
  if (!cg.converged && problem.ridge < 0.0) {
    double trace = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index c = 0; c < k; ++c) {
        Vector unit = Vector::Zero(k);
        unit[c] = 1.0;
        trace += vjp_params(problem.model, problem.mask,
                            xhat.row(i).transpose(), unit)
                     .squaredNorm();
      }
    }
    ridge = 1e-10 * trace / static_cast<double>(nk);
    cg = run_cg(ridge);
  }
  out.diag.ridge_used = ridge;
  out.diag.cg_iterations = static_cast<int>(cg.iterations);
  out.diag.cg_converged = cg.converged;
  out.alpha = cg.x;

  double delta_sq = problem.delta.squaredNorm();
  out.loss = clamp_loss(delta_sq - rhs.dot(out.alpha), delta_sq);
  if (!want_grad) return out;

  Vector residual = problem.delta - apply_gt(out.alpha);
  Eigen::Map<const Matrix> alpha_mat(out.alpha.data(), n, k);
  if (const auto* rf = std::get_if<RandomFeatures>(&problem.model)) {
    Matrix pre = xhat * rf->v.transpose();
    pre.rowwise() += rf->b.transpose();
    Matrix weights = activate_derivative(rf->activation, pre);
    weights.array().rowwise() *= residual.transpose().array();
    weights.array().colwise() *= out.alpha.array();
    double scale = -2.0 / std::sqrt(static_cast<double>(rf->v.rows()));
    out.grad = scale * (weights * rf->v);
  } else {
    const Mlp& m = std::get<Mlp>(problem.model);
    MlpForwardCache cache = mlp_forward_cache(m, xhat);
    out.grad = mlp_pullback(m, problem.mask, cache, alpha_mat,
                            split_residual(m, problem.mask, residual));
  }
  return out;
}

void check_candidates(const ReconProblem& problem, const Matrix& xhat) {
  const Eigen::Index d = input_dim(problem.model);
  if (xhat.rows() != problem.n_candidates || xhat.cols() != d) {
    throw DimensionError("recon: candidate matrix must be n_candidates x d");
  }
  // Loose on purpose: finite-difference probes of the loss nudge rows
  // slightly off the sphere.
  const double radius = std::sqrt(static_cast<double>(d));
  for (Eigen::Index i = 0; i < xhat.rows(); ++i) {
    if (std::abs(xhat.row(i).norm() - radius) > 1e-4 * radius) {
      throw DimensionError(
          "recon: candidate rows must sit on the sqrt(d) sphere");
    }
  }
}

EvalState evaluate(const ReconProblem& problem, const Matrix& xhat,
                   bool want_grad) {
  check_candidates(problem, xhat);
  const bool structured = std::holds_alternative<Mlp>(problem.model) &&
                          problem.mask == ParamMask::last_layer;
  switch (problem.solver) {
    case ReconSolver::dense_gram:
      return structured ? eval_structured(problem, xhat, want_grad)
                        : eval_dense(problem, xhat, want_grad);
    case ReconSolver::matrix_free_cg:
      return eval_cg(problem, xhat, want_grad);
    case ReconSolver::auto_select:
      break;
  }
  if (structured) return eval_structured(problem, xhat, want_grad);
  if (problem.delta.size() <= kDenseParamLimit) {
    return eval_dense(problem, xhat, want_grad);
  }
  return eval_cg(problem, xhat, want_grad);
}

void check_options(const ReconOptions& opts) {
  if (!(opts.lr > 0.0)) throw ConfigError("recon: lr must be positive");
  if (opts.momentum < 0.0 || opts.momentum >= 1.0) {
    throw ConfigError("recon: momentum must be in [0, 1)");
  }
  if (opts.iters < 0) throw ConfigError("recon: iters must be non-negative");
  if (opts.trace_stride < 1) {
    throw ConfigError("recon: trace_stride must be positive");
  }
}

ReconResult run_loop(const ReconProblem& problem,
                     const std::optional<Matrix>& init,
                     const std::optional<Matrix>& basis,
                     const ReconOptions& opts, Rng& rng) {
  validate_problem(problem);
  check_options(opts);
  const Eigen::Index d = input_dim(problem.model);
  const Eigen::Index dim = basis ? basis->cols() : d;
  const double radius = std::sqrt(static_cast<double>(d));

  Matrix z;
  if (init) {
    if (init->rows() != problem.n_candidates || init->cols() != dim) {
      throw DimensionError("recon: init must be n_candidates x search dim");
    }
    for (Eigen::Index i = 0; i < init->rows(); ++i) {
      if (std::abs(init->row(i).norm() - radius) > 1e-4 * radius) {
        throw DimensionError("recon: init rows must have norm sqrt(d)");
      }
    }
    z = *init;
  } else {
    std::optional<Matrix> shape_basis = basis;
    z = init_candidates(problem.n_candidates, d, shape_basis, rng);
  }

  Matrix velocity = Matrix::Zero(z.rows(), z.cols());
  ReconResult result;
  result.iterations = opts.iters;
  result.trace_stride = opts.trace_stride;
  result.best_loss = std::numeric_limits<double>::infinity();

  for (long it = 0; it <= opts.iters; ++it) {
    Matrix x = basis ? Matrix(z * basis->transpose()) : z;
    EvalState state = evaluate(problem, x, it < opts.iters);
    if (it % opts.trace_stride == 0 || it == opts.iters) {
      result.loss_trace.push_back(state.loss);
    }
    if (!std::isfinite(state.loss)) {
      throw DivergenceError("recon: loss is not finite",
                            std::move(result.loss_trace));
    }
    if (state.loss < result.best_loss) {
      result.best_loss = state.loss;
      result.best_iteration = it;
      result.xhat = x;
      if (basis) result.zhat = z;
      result.alpha = state.alpha;
      result.diag = state.diag;
    }
    if (it == opts.iters) break;

    Matrix step_grad = basis ? Matrix(state.grad * (*basis)) : state.grad;
    velocity = opts.momentum * velocity + step_grad;
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
      Vector moved = (z.row(i) - opts.lr * velocity.row(i)).transpose();
      z.row(i) = project_to_sphere(moved, radius).transpose();
    }
  }
  return result;
}

}  // namespace

std::string to_string(ReconSolver s) {
  switch (s) {
    case ReconSolver::auto_select: return "auto";
    case ReconSolver::dense_gram: return "dense";
    case ReconSolver::matrix_free_cg: return "cg";
  }
  return "auto";
}

void validate_problem(const ReconProblem& problem) {
  if (problem.n_candidates < 1) {
    throw DimensionError("recon: n_candidates must be at least 1");
  }
  if (problem.delta.size() != masked_count(problem.model, problem.mask)) {
    throw DimensionError("recon: delta length must match the masked count");
  }
  if (problem.basis) {
    const Matrix& u = *problem.basis;
    if (u.rows() != input_dim(problem.model) || u.cols() < 1 ||
        u.cols() > u.rows()) {
      throw DimensionError("recon: basis must be d x r with 1 <= r <= d");
    }
    Matrix gram = u.transpose() * u;
    gram -= Matrix::Identity(u.cols(), u.cols());
    if (gram.cwiseAbs().maxCoeff() > 1e-8) {
      throw DimensionError("recon: basis columns must be orthonormal");
    }
  }
}

ReconLoss recon_loss_and_alpha(const ReconProblem& problem,
                               const Matrix& xhat) {
  validate_problem(problem);
  EvalState state = evaluate(problem, xhat, false);
  return ReconLoss{state.loss, std::move(state.alpha), state.diag};
}

Matrix recon_loss_gradient(const ReconProblem& problem, const Matrix& xhat) {
  validate_problem(problem);
  return evaluate(problem, xhat, true).grad;
}

RawProjection projection_loss(const Matrix& g, const Vector& delta,
                              double ridge) {
  if (g.cols() != delta.size()) {
    throw DimensionError("projection_loss: delta length must match g columns");
  }
  Matrix gram = g * g.transpose();
  Vector rhs = g * delta;
  RawProjection out;
  out.alpha = solve_gram(gram, rhs, ridge, &out.ridge_used);
  double delta_sq = delta.squaredNorm();
  out.loss = clamp_loss(delta_sq - rhs.dot(out.alpha), delta_sq);
  return out;
}

Matrix init_candidates(Eigen::Index n, Eigen::Index d,
                       const std::optional<Matrix>& basis, Rng& rng) {
  if (n < 1 || d < 1) {
    throw DimensionError("init_candidates: need n >= 1 and d >= 1");
  }
  const Eigen::Index dim = basis ? basis->cols() : d;
  if (basis && (basis->rows() != d || dim < 1 || dim > d)) {
    throw DimensionError("init_candidates: basis must be d x r with r <= d");
  }
  const double radius = std::sqrt(static_cast<double>(d));
  Matrix out(n, dim);
  for (Eigen::Index i = 0; i < n; ++i) {
    out.row(i) = rng.sphere_point(dim, radius).transpose();
  }
  return out;
}

ReconResult run_full_space(const ReconProblem& problem,
                           const std::optional<Matrix>& init,
                           const ReconOptions& opts, Rng& rng) {
  if (problem.basis) {
    throw ConfigError("recon: full-space run does not take a basis");
  }
  return run_loop(problem, init, std::nullopt, opts, rng);
}

ReconResult run_subspace(const ReconProblem& problem,
                         const std::optional<Matrix>& init_z,
                         const ReconOptions& opts, Rng& rng) {
  if (!problem.basis) {
    throw ConfigError("recon: subspace run needs a basis");
  }
  return run_loop(problem, init_z, problem.basis, opts, rng);
}

void save_recon_trace_csv(const ReconResult& result, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write trace csv: " + path);
  out << "iteration,loss\n";
  for (std::size_t j = 0; j < result.loss_trace.size(); ++j) {
    long it = std::min(static_cast<long>(j) * result.trace_stride,
                       result.iterations);
    out << it << ',' << format_g(result.loss_trace[j]) << '\n';
  }
  if (!out) throw DataError("failed writing trace csv: " + path);
}

void save_recon_jsonl(const ReconResult& result, const std::string& path) {
  nlohmann::ordered_json record;
  record["best_loss"] = result.best_loss;
  record["best_iteration"] = result.best_iteration;
  record["iterations"] = result.iterations;
  record["solver"] = result.diag.used_dense ? "dense" : "cg";
  record["ridge_used"] = result.diag.ridge_used;
  record["cg_iterations"] = result.diag.cg_iterations;
  record["cg_converged"] = result.diag.cg_converged;
  record["n"] = result.xhat.rows();
  record["d"] = result.xhat.cols();
  std::ofstream out(path, std::ios::app);
  if (!out) throw DataError("cannot write diagnostics: " + path);
  out << record.dump() << '\n';
  if (!out) throw DataError("failed writing diagnostics: " + path);
}

Dataset recon_as_dataset(const ReconResult& result, Eigen::Index k) {
  if (k < 1 || result.alpha.size() != result.xhat.rows() * k) {
    throw DimensionError("recon_as_dataset: alpha does not factor as n x k");
  }
  Dataset ds;
  ds.X = result.xhat;
  ds.Y = Eigen::Map<const Matrix>(result.alpha.data(), result.xhat.rows(), k);
  ds.meta.n = ds.X.rows();
  ds.meta.d = ds.X.cols();
  ds.meta.source = "recon";
  return ds;
}

}  // namespace deltarec
