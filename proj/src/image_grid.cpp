#include "deltarec/image_grid.hpp"

#include "deltarec/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>

namespace deltarec {

namespace {

constexpr Eigen::Index kDim = 3072;
constexpr int kSide = 32;
constexpr int kPad = 2;

// CIFAR rows are planar (R plane, G plane, B plane), each 32x32 row-major.
void paint_tile(std::vector<std::uint8_t>& canvas, int canvas_w, int x0,
                int y0, const Eigen::Ref<const Eigen::RowVectorXd>& row) {
  double scale = row.maxCoeff();
  for (int r = 0; r < kSide; ++r) {
    for (int c = 0; c < kSide; ++c) {
      for (int plane = 0; plane < 3; ++plane) {
        double v = scale > 0.0
                       ? row[plane * kSide * kSide + r * kSide + c] / scale
                       : 0.0;
        v = std::clamp(v, 0.0, 1.0);
        std::size_t at =
            3 * (static_cast<std::size_t>(y0 + r) *
                     static_cast<std::size_t>(canvas_w) +
                 static_cast<std::size_t>(x0 + c)) +
            static_cast<std::size_t>(plane);
        canvas[at] = static_cast<std::uint8_t>(std::lround(255.0 * v));
      }
    }
  }
}

int skip_ppm_space(std::istream& in) {
  int ch = in.get();
  while (ch == ' ' || ch == '\t' || ch == '\n' || ch == '\r' || ch == '#') {
    if (ch == '#') {
      while (ch != '\n' && ch != EOF) ch = in.get();
    }
    ch = in.get();
  }
  return ch;
}

int read_ppm_int(std::istream& in) {
  int ch = skip_ppm_space(in);
  if (ch < '0' || ch > '9') throw DataError("ppm: expected an integer");
  int value = 0;
  while (ch >= '0' && ch <= '9') {
    value = value * 10 + (ch - '0');
    ch = in.get();
  }
  in.unget();
  return value;
}

}  // namespace

void image_grid(const Matrix& x_true, const Matrix& x_hat,
                const std::vector<int>& matching, const std::string& path) {
  if (x_true.cols() != kDim || x_hat.cols() != kDim)
    throw DimensionError("image_grid: rows must have 3072 entries");
  const Eigen::Index n = x_true.rows();
  if (n < 1 || x_hat.rows() < 1)
    throw DimensionError("image_grid: need at least one row on each side");
  if (static_cast<Eigen::Index>(matching.size()) != n)
    throw DimensionError("image_grid: matching length must equal true rows");
  for (int m : matching) {
    if (m < 0 || m >= x_hat.rows())
      throw DimensionError("image_grid: matching index out of range");
  }

  const int cols = static_cast<int>(n);
  const int canvas_w = cols * kSide + (cols + 1) * kPad;
  const int canvas_h = 2 * kSide + 3 * kPad;
  std::vector<std::uint8_t> canvas(
      static_cast<std::size_t>(canvas_w) * canvas_h * 3, 255);

  for (int i = 0; i < cols; ++i) {
    int x0 = kPad + i * (kSide + kPad);
    paint_tile(canvas, canvas_w, x0, kPad, x_true.row(i));
    paint_tile(canvas, canvas_w, x0, 2 * kPad + kSide,
               x_hat.row(matching[static_cast<std::size_t>(i)]));
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("image_grid: cannot open " + path);
  out << "P6\n" << canvas_w << " " << canvas_h << "\n255\n";
  out.write(reinterpret_cast<const char*>(canvas.data()),
            static_cast<std::streamsize>(canvas.size()));
  if (!out) throw DataError("image_grid: write failed for " + path);
}

Matrix read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("ppm: cannot open " + path);
  char magic[2];
  in.read(magic, 2);
  if (!in || magic[0] != 'P' || magic[1] != '6')
    throw DataError("ppm: not a P6 file: " + path);
  int w = read_ppm_int(in);
  int h = read_ppm_int(in);
  int maxval = read_ppm_int(in);
  if (w < 1 || h < 1 || maxval != 255)
    throw DataError("ppm: unsupported header in " + path);
  in.get();  // single whitespace after maxval

  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(w) * h * 3);
  in.read(reinterpret_cast<char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (!in) throw DataError("ppm: truncated pixel data in " + path);

  Matrix out(h, 3 * w);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < 3 * w; ++c) {
      out(r, c) =
          static_cast<double>(
              bytes[static_cast<std::size_t>(r) * 3 * w + c]) /
          255.0;
    }
  }
  return out;
}

}  // namespace deltarec
