#pragma once

#include <filesystem>

#include "anovit/ndarray.hpp"

namespace anovit {

struct ScoreMap {
  NdArray<double> values;  // [H, W], non-negative
  bool smoothed = false;
  double sigma = 0.0;

  std::size_t height() const { return values.dim(0); }
  std::size_t width() const { return values.dim(1); }
};

// M[i][j] = sqrt(mean_c (X[i][j][c] - Xhat[i][j][c])^2) for [H, W, C] images.
template <typename T>
ScoreMap score_map(const NdArray<T>& image, const NdArray<T>& reconstruction);

// Separable Gaussian, radius ceil(3 sigma), unit-mass kernel, half-sample
// symmetric (reflect) boundary. sigma == 0 returns the input.
ScoreMap gaussian_smooth(const ScoreMap& map, double sigma);

// Normalized 1-D kernel of length 2 * ceil(3 sigma) + 1.
std::vector<double> gaussian_kernel(double sigma);

// Maximum of the map.
double anomaly_score(const ScoreMap& map);

// 16-bit grayscale PNG, min-max normalized; `<path minus extension>.json`
// records min, max, extents and smoothing.
void export_score_png(const ScoreMap& map, const std::filesystem::path& png_path);
// Raw little-endian f32, row-major.
void export_score_raw(const ScoreMap& map, const std::filesystem::path& path);

}  // namespace anovit
