#include "anovit/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "anovit/init.hpp"

namespace anovit {

AugmentDraw draw_augment(std::uint64_t seed, const AugmentConfig& config, std::size_t height, std::size_t width) {
  Rng rng(seed);
  // Every field consumes one draw so streams stay aligned across configs.
  const double u_h = uniform01(rng), u_v = uniform01(rng), u_r = uniform01(rng);
  const double u_x = uniform01(rng), u_y = uniform01(rng);
  AugmentDraw d;
  d.hflip = u_h < config.hflip_prob;
  d.vflip = u_v < config.vflip_prob;
  d.rotation_deg = (2.0 * u_r - 1.0) * config.max_rotation_deg;
  d.shift_x = (2.0 * u_x - 1.0) * config.max_translation * static_cast<double>(width);
  d.shift_y = (2.0 * u_y - 1.0) * config.max_translation * static_cast<double>(height);
  return d;
}

Image apply_augment(const Image& image, const AugmentDraw& draw) {
  if (image.rank() != 3) throw DimensionError("augment expects [H, W, C], got " + shape_str(image.shape()));
  const std::size_t h = image.dim(0), w = image.dim(1), c = image.dim(2);

  Image flipped(image.shape());
  for (std::size_t y = 0; y < h; ++y) {
    const std::size_t sy = draw.vflip ? h - 1 - y : y;
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t sx = draw.hflip ? w - 1 - x : x;
      for (std::size_t k = 0; k < c; ++k) flipped[(y * w + x) * c + k] = image[(sy * w + sx) * c + k];
    }
  }
  if (draw.rotation_deg == 0.0 && draw.shift_x == 0.0 && draw.shift_y == 0.0) return flipped;

  const double theta = draw.rotation_deg * std::numbers::pi / 180.0;
  const double cs = std::cos(theta), sn = std::sin(theta);
  const double cx = (static_cast<double>(w) - 1.0) / 2.0, cy = (static_cast<double>(h) - 1.0) / 2.0;
  const double max_x = static_cast<double>(w - 1), max_y = static_cast<double>(h - 1);
  Image out(image.shape());
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      // Inverse map: source = R^-1 (dst - center - shift) + center.
      const double dx = static_cast<double>(x) - cx - draw.shift_x;
      const double dy = static_cast<double>(y) - cy - draw.shift_y;
      const double sx = std::clamp(cs * dx + sn * dy + cx, 0.0, max_x);
      const double sy = std::clamp(-sn * dx + cs * dy + cy, 0.0, max_y);
      const auto x0 = static_cast<std::size_t>(sx), y0 = static_cast<std::size_t>(sy);
      const std::size_t x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
      const double fx = sx - static_cast<double>(x0), fy = sy - static_cast<double>(y0);
      for (std::size_t k = 0; k < c; ++k) {
        const double a = flipped[(y0 * w + x0) * c + k], b = flipped[(y0 * w + x1) * c + k];
        const double d = flipped[(y1 * w + x0) * c + k], e = flipped[(y1 * w + x1) * c + k];
        const double top = a + (b - a) * fx, bottom = d + (e - d) * fx;
        out[(y * w + x) * c + k] = static_cast<float>(top + (bottom - top) * fy);
      }
    }
  }
  return out;
}

}  // namespace anovit
