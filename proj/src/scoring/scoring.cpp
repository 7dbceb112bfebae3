#include "anovit/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "anovit/image.hpp"

namespace anovit {

template <typename T>
ScoreMap score_map(const NdArray<T>& image, const NdArray<T>& reconstruction) {
  require_same_shape(image.shape(), reconstruction.shape(), "score_map");
  if (image.rank() != 3) throw DimensionError("score_map expects [H, W, C], got " + shape_str(image.shape()));
  const std::size_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
  ScoreMap out{NdArray<double>({h, w})};
  for (std::size_t p = 0; p < h * w; ++p) {
    double acc = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
      const double d = static_cast<double>(image[p * c + k]) - static_cast<double>(reconstruction[p * c + k]);
      acc += d * d;
    }
    out.values[p] = std::sqrt(acc / static_cast<double>(c));
  }
  return out;
}

template ScoreMap score_map<float>(const NdArray<float>&, const NdArray<float>&);
template ScoreMap score_map<double>(const NdArray<double>&, const NdArray<double>&);

std::vector<double> gaussian_kernel(double sigma) {
  if (!(sigma > 0.0)) throw ConfigError("gaussian kernel needs sigma > 0");
  const auto radius = static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (std::ptrdiff_t i = -radius; i <= radius; ++i) {
    const double v = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
    k[static_cast<std::size_t>(i + radius)] = v;
    sum += v;
  }
  for (double& v : k) v /= sum;
  return k;
}

namespace {

// Half-sample symmetric index: ... b a | a b c d | d c ...
std::size_t reflect(std::ptrdiff_t i, std::ptrdiff_t n) {
  const std::ptrdiff_t period = 2 * n;
  i %= period;
  if (i < 0) i += period;
  return static_cast<std::size_t>(i < n ? i : period - 1 - i);
}

// Convolves along one axis: `count` lines of `len` samples, `stride` apart.
void smooth_axis(const double* in, double* out, std::size_t lines, std::size_t line_step, std::size_t len,
                 std::size_t stride, const std::vector<double>& kernel) {
  const auto radius = static_cast<std::ptrdiff_t>(kernel.size() / 2);
  const auto n = static_cast<std::ptrdiff_t>(len);
  for (std::size_t l = 0; l < lines; ++l) {
    const double* src = in + l * line_step;
    double* dst = out + l * line_step;
    for (std::ptrdiff_t i = 0; i < n; ++i) {
      double acc = 0.0;
      for (std::ptrdiff_t t = -radius; t <= radius; ++t)
        acc += kernel[static_cast<std::size_t>(t + radius)] * src[reflect(i + t, n) * stride];
      dst[static_cast<std::size_t>(i) * stride] = acc;
    }
  }
}

}  // namespace

ScoreMap gaussian_smooth(const ScoreMap& map, double sigma) {
  if (!(sigma >= 0.0)) throw ConfigError("sigma must be >= 0");
  if (sigma == 0.0) return map;
  const std::vector<double> kernel = gaussian_kernel(sigma);
  const std::size_t h = map.height(), w = map.width();
  NdArray<double> tmp({h, w});
  NdArray<double> out({h, w});
  smooth_axis(map.values.ptr(), tmp.ptr(), h, w, w, 1, kernel);  // along rows
  smooth_axis(tmp.ptr(), out.ptr(), w, 1, h, w, kernel);         // along columns
  return ScoreMap{std::move(out), true, sigma};
}

double anomaly_score(const ScoreMap& map) {
  if (map.values.empty()) throw DimensionError("anomaly_score of an empty map");
  return *std::max_element(map.values.data().begin(), map.values.data().end());
}

void export_score_png(const ScoreMap& map, const std::filesystem::path& png_path) {
  const auto [lo_it, hi_it] = std::minmax_element(map.values.data().begin(), map.values.data().end());
  const double lo = *lo_it, hi = *hi_it;
  const double range = hi > lo ? hi - lo : 1.0;
  Image img({map.height(), map.width(), 1});
  for (std::size_t i = 0; i < map.values.size(); ++i)
    img[i] = static_cast<float>((map.values[i] - lo) / range);
  write_png(png_path, img, 16);

  nlohmann::json side = {{"min", lo},           {"max", hi},
                         {"height", map.height()}, {"width", map.width()},
                         {"bit_depth", 16},      {"smoothed", map.smoothed},
                         {"sigma", map.sigma},   {"encoding", "value = min + pixel / 65535 * (max - min)"}};
  std::filesystem::path json_path = png_path;
  json_path.replace_extension(".json");
  std::ofstream out(json_path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + json_path.string() + " for writing");
  out << side.dump(2) << "\n";
  if (!out) throw IoError("write failed: " + json_path.string());
}

void export_score_raw(const ScoreMap& map, const std::filesystem::path& path) {
  std::vector<float> data(map.values.size());
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = static_cast<float>(map.values[i]);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(float)));
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace anovit
