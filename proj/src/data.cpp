#include "deltarec/data.hpp"

#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <vector>

namespace deltarec {

namespace {

constexpr char kMagic[8] = {'D', 'R', 'E', 'C', 'D', 'S', '0', '1'};
constexpr std::size_t kCifarRecordBytes = 3073;  // 1 label + 32*32*3 pixels
constexpr Eigen::Index kCifarDim = 3072;
constexpr Eigen::Index kCifarClasses = 10;

void write_i64(std::ofstream& out, std::int64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::int64_t read_i64(std::ifstream& in) {
  std::int64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!in) throw DataError("dataset container: truncated header");
  return v;
}

void write_matrix(std::ofstream& out, const Matrix& m) {
  out.write(reinterpret_cast<const char*>(m.data()),
            static_cast<std::streamsize>(sizeof(double) * m.size()));
}

Matrix read_matrix(std::ifstream& in, Eigen::Index rows, Eigen::Index cols) {
  Matrix m(rows, cols);
  in.read(reinterpret_cast<char*>(m.data()),
          static_cast<std::streamsize>(sizeof(double) * m.size()));
  if (!in) throw DataError("dataset container: truncated payload");
  return m;
}

std::vector<std::filesystem::path> cifar_batch_files(const std::string& path) {
  namespace fs = std::filesystem;
  fs::path p(path);
  if (fs::is_regular_file(p)) return {p};
  if (!fs::is_directory(p))
    throw DataError("cifar10: path is neither a file nor a directory: " + path);
  std::vector<fs::path> files;
  for (int i = 1; i <= 5; ++i) {
    fs::path batch = p / ("data_batch_" + std::to_string(i) + ".bin");
    if (fs::is_regular_file(batch)) files.push_back(batch);
  }
  if (files.empty())
    throw DataError("cifar10: no data_batch_*.bin files under " + path);
  return files;
}

}  // namespace

Vector project_to_sphere(const Vector& x, double radius) {
  double norm = x.norm();
  if (norm == 0.0)
    throw DataError("project_to_sphere: zero vector has no direction");
  return x * (radius / norm);
}

Dataset gen_synthetic(Eigen::Index n, Eigen::Index d, Eigen::Index r,
                      double sigma, Rng& rng) {
  if (r < 1 || r > d)
    throw DimensionError("gen_synthetic: need 1 <= r <= d");
  if (n < 1) throw DimensionError("gen_synthetic: need n >= 1");
  if (sigma < 0) throw DimensionError("gen_synthetic: sigma must be >= 0");

  Matrix raw = rng.gaussian_matrix(d, r);
  Matrix u = Eigen::HouseholderQR<Matrix>(raw).householderQ() *
             Matrix::Identity(d, r);
  Matrix z = rng.gaussian_matrix(n, r);
  Vector g = rng.gaussian_vector(d) / std::sqrt(static_cast<double>(d));
  double radius = std::sqrt(static_cast<double>(d));

  Dataset ds;
  ds.X.resize(n, d);
  for (Eigen::Index i = 0; i < n; ++i)
    ds.X.row(i) = project_to_sphere(u * z.row(i).transpose(), radius);
  ds.Y.resize(n, 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    double noise = sigma > 0 ? sigma * rng.gaussian() : 0.0;
    ds.Y(i, 0) = ds.X.row(i).dot(g) + noise;
  }
  ds.U = u;
  ds.g = g;
  ds.meta = {n, d, r, "synthetic"};
  return ds;
}

Dataset load_cifar10(const std::string& path, Eigen::Index n, Rng& rng) {
  if (n < kCifarClasses || n % kCifarClasses != 0)
    throw DataError("cifar10: n must be a positive multiple of 10");

  std::vector<std::uint8_t> bytes;
  for (const auto& file : cifar_batch_files(path)) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw DataError("cifar10: cannot open " + file.string());
    std::vector<std::uint8_t> chunk(std::istreambuf_iterator<char>(in), {});
    if (chunk.empty() || chunk.size() % kCifarRecordBytes != 0)
      throw DataError("cifar10: malformed file length in " + file.string());
    bytes.insert(bytes.end(), chunk.begin(), chunk.end());
  }
  const std::size_t records = bytes.size() / kCifarRecordBytes;

  std::vector<std::vector<std::size_t>> by_class(kCifarClasses);
  for (std::size_t rec = 0; rec < records; ++rec) {
    std::uint8_t label = bytes[rec * kCifarRecordBytes];
    if (label >= kCifarClasses)
      throw DataError("cifar10: label byte out of range");
    by_class[label].push_back(rec);
  }

  const Eigen::Index per_class = n / kCifarClasses;
  const double radius = std::sqrt(static_cast<double>(kCifarDim));
  Dataset ds;
  ds.X.resize(n, kCifarDim);
  ds.Y = Matrix::Zero(n, kCifarClasses);
  Eigen::Index row = 0;
  for (Eigen::Index c = 0; c < kCifarClasses; ++c) {
    auto& candidates = by_class[c];
    if (static_cast<Eigen::Index>(candidates.size()) < per_class)
      throw DataError("cifar10: class " + std::to_string(c) +
                      " has too few images");
    rng.shuffle(candidates);
    std::vector<std::size_t> chosen(candidates.begin(),
                                    candidates.begin() + per_class);
    std::sort(chosen.begin(), chosen.end());
    for (std::size_t rec : chosen) {
      const std::uint8_t* pixels = &bytes[rec * kCifarRecordBytes + 1];
      Vector x(kCifarDim);
      for (Eigen::Index j = 0; j < kCifarDim; ++j)
        x[j] = static_cast<double>(pixels[j]) / 255.0;
      ds.X.row(row) = project_to_sphere(x, radius);
      ds.Y(row, c) = 1.0;
      ++row;
    }
  }
  ds.meta = {n, kCifarDim, std::nullopt, "cifar10"};
  return ds;
}

void validate_dataset(const Dataset& ds) {
  const Eigen::Index n = ds.X.rows(), d = ds.X.cols();
  if (ds.Y.rows() != n)
    throw DataError("dataset: X and Y row counts differ");
  double radius = std::sqrt(static_cast<double>(d));
  for (Eigen::Index i = 0; i < n; ++i)
    if (std::abs(ds.X.row(i).norm() - radius) > 1e-9)
      throw DataError("dataset: row " + std::to_string(i) +
                      " is off the sqrt(d) sphere");
  if (ds.U) {
    const Matrix& u = *ds.U;
    if (u.rows() != d) throw DataError("dataset: U row count differs from d");
    Matrix gram = u.transpose() * u;
    gram.diagonal().array() -= 1.0;
    if (gram.cwiseAbs().maxCoeff() > 1e-9)
      throw DataError("dataset: U columns are not orthonormal");
    Matrix residual = ds.X - (ds.X * u) * u.transpose();
    if (residual.norm() > 1e-8 * ds.X.norm())
      throw DataError("dataset: X does not lie in the span of U");
  }
}

void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("dataset container: cannot open " + path);
  out.write(kMagic, sizeof(kMagic));
  write_i64(out, ds.X.rows());
  write_i64(out, ds.X.cols());
  write_i64(out, ds.Y.cols());
  write_i64(out, ds.U ? ds.U->cols() : 0);
  write_matrix(out, ds.X);
  write_matrix(out, ds.Y);
  if (ds.U) write_matrix(out, *ds.U);
  if (!out) throw DataError("dataset container: write failed for " + path);
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("dataset container: cannot open " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw DataError("dataset container: bad magic in " + path);
  std::int64_t n = read_i64(in), d = read_i64(in), k = read_i64(in),
               r = read_i64(in);
  if (n < 1 || d < 1 || k < 1 || r < 0 || r > d)
    throw DataError("dataset container: implausible header in " + path);
  Dataset ds;
  ds.X = read_matrix(in, n, d);
  ds.Y = read_matrix(in, n, k);
  if (r > 0) ds.U = read_matrix(in, d, r);
  ds.meta = {n, d,
             r > 0 ? std::optional<Eigen::Index>(r) : std::nullopt,
             "container"};
  validate_dataset(ds);
  return ds;
}

}  // namespace deltarec
