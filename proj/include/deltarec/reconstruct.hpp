#pragma once

#include "deltarec/data.hpp"
#include "deltarec/model.hpp"

#include <optional>
#include <string>
#include <vector>

namespace deltarec {

enum class ReconSolver { auto_select, dense_gram, matrix_free_cg };

std::string to_string(ReconSolver s);

struct ReconProblem {
  AnyModel model;               // trained parameters
  Vector delta;                 // masked parameter change
  ParamMask mask = ParamMask::all_layers;
  Eigen::Index n_candidates = 0;
  std::optional<Matrix> basis;  // d x r
  ReconSolver solver = ReconSolver::auto_select;
  // Negative requests ridge on demand: zero first, the trace-scaled
  // default only when the plain solve fails.
  double ridge = -1.0;
};

void validate_problem(const ReconProblem& problem);

struct ReconDiagnostics {
  bool used_dense = true;
  int cg_iterations = 0;
  bool cg_converged = true;
  double ridge_used = 0.0;
};

struct ReconLoss {
  double loss = 0.0;
  Vector alpha;  // candidate-major, class-minor
  ReconDiagnostics diag;
};

// Projection loss ||delta||^2 - delta^T G^T alpha with
// (G G^T + ridge I) alpha = G delta.
ReconLoss recon_loss_and_alpha(const ReconProblem& problem, const Matrix& xhat);

// d(loss)/d(xhat) with alpha at its optimum; exact almost everywhere
// for relu and everywhere for smooth feature maps.
Matrix recon_loss_gradient(const ReconProblem& problem, const Matrix& xhat);

// Shared core over an explicit gradient matrix, exposed for oracles.
struct RawProjection {
  double loss = 0.0;
  Vector alpha;
  double ridge_used = 0.0;
};
RawProjection projection_loss(const Matrix& g, const Vector& delta,
                              double ridge = -1.0);

struct ReconOptions {
  double lr = 20.0;
  double momentum = 0.9;
  long iters = 10000;
  long trace_stride = 100;
};

struct ReconResult {
  Matrix xhat;                    // n x d, rows on the sqrt(d) sphere
  std::optional<Matrix> zhat;     // n x r for subspace runs
  Vector alpha;                   // at the best iterate
  double best_loss = 0.0;
  long best_iteration = 0;
  long iterations = 0;
  long trace_stride = 100;
  std::vector<double> loss_trace; // strided, always includes first and last
  ReconDiagnostics diag;
};

Matrix init_candidates(Eigen::Index n, Eigen::Index d,
                       const std::optional<Matrix>& basis, Rng& rng);

ReconResult run_full_space(const ReconProblem& problem,
                           const std::optional<Matrix>& init,
                           const ReconOptions& opts, Rng& rng);

ReconResult run_subspace(const ReconProblem& problem,
                         const std::optional<Matrix>& init_z,
                         const ReconOptions& opts, Rng& rng);

void save_recon_trace_csv(const ReconResult& result, const std::string& path);
void save_recon_jsonl(const ReconResult& result, const std::string& path);
Dataset recon_as_dataset(const ReconResult& result, Eigen::Index k);

}  // namespace deltarec
