#pragma once

#include "deltarec/errors.hpp"
#include "deltarec/linalg.hpp"

#include <optional>
#include <string>

namespace deltarec {

struct DatasetMeta {
  Eigen::Index n = 0;
  Eigen::Index d = 0;
  std::optional<Eigen::Index> r;
  std::string source;
};

// Samples live in rows of X, each on the sphere of radius sqrt(d).
struct Dataset {
  Matrix X;                  // n x d
  Matrix Y;                  // n x K
  std::optional<Matrix> U;   // d x r, orthonormal columns
  std::optional<Vector> g;   // synthetic linear teacher, not serialized
  DatasetMeta meta;

  Eigen::Index n() const { return X.rows(); }
  Eigen::Index d() const { return X.cols(); }
  Eigen::Index k() const { return Y.cols(); }
};

// Random r-dimensional subspace, points rescaled to the sphere, linear
// teacher with Gaussian noise of scale sigma.
Dataset gen_synthetic(Eigen::Index n, Eigen::Index d, Eigen::Index r,
                      double sigma, Rng& rng);

// Reads CIFAR-10 binary batches from a file or a directory holding
// data_batch_*.bin; picks n/10 images per class via a seeded shuffle.
Dataset load_cifar10(const std::string& path, Eigen::Index n, Rng& rng);

Vector project_to_sphere(const Vector& x, double radius);

// Checks the sphere and subspace invariants, throwing DataError on failure.
void validate_dataset(const Dataset& ds);

// Flat binary container so experiments can pin exact data.
void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

}  // namespace deltarec
