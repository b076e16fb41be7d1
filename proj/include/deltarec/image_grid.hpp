#pragma once

#include "deltarec/linalg.hpp"

#include <string>
#include <vector>

namespace deltarec {

// Writes true rows over their matched reconstructions as a two-row tile
// grid in binary PPM (P6). Rows must be CIFAR-shaped (3072 = 3 color
// planes of 32x32). matching[i] picks the reconstructed row shown under
// true row i; pass an identity matching for side-by-side dumps.
//
// The loader's sphere projection discards each image's overall scale, so
// tiles are de-normalized by saturating their brightest channel; negative
// values clip to black.
void image_grid(const Matrix& x_true, const Matrix& x_hat,
                const std::vector<int>& matching, const std::string& path);

// Minimal P6 reader for round-trip checks; returns rows of packed RGB
// in [0, 1], one row per image-grid pixel row.
Matrix read_ppm(const std::string& path);

}  // namespace deltarec
