#include <cmath>

#include "anovit/image.hpp"

namespace anovit {

namespace {

void require_image(const Image& image, const char* what) {
  if (image.rank() != 3) throw DimensionError(std::string(what) + " expects [H, W, C], got " + shape_str(image.shape()));
}

}  // namespace

Image resize_bilinear(const Image& image, std::size_t height, std::size_t width) {
  require_image(image, "resize_bilinear");
  if (height == 0 || width == 0) throw ConfigError("resize target must be positive");
  const std::size_t ih = image.dim(0), iw = image.dim(1), c = image.dim(2);
  if (ih == height && iw == width) return image;
  auto coord = [](std::size_t o, std::size_t in, std::size_t out) {
    return out == 1 ? 0.0 : static_cast<double>(o) * static_cast<double>(in - 1) / static_cast<double>(out - 1);
  };
  Image out({height, width, c});
  for (std::size_t y = 0; y < height; ++y) {
    const double sy = coord(y, ih, height);
    const std::size_t y0 = std::min(static_cast<std::size_t>(sy), ih - 1);
    const std::size_t y1 = std::min(y0 + 1, ih - 1);
    const double fy = sy - static_cast<double>(y0);
    for (std::size_t x = 0; x < width; ++x) {
      const double sx = coord(x, iw, width);
      const std::size_t x0 = std::min(static_cast<std::size_t>(sx), iw - 1);
      const std::size_t x1 = std::min(x0 + 1, iw - 1);
      const double fx = sx - static_cast<double>(x0);
      for (std::size_t k = 0; k < c; ++k) {
        const double a = image[(y0 * iw + x0) * c + k], b = image[(y0 * iw + x1) * c + k];
        const double d = image[(y1 * iw + x0) * c + k], e = image[(y1 * iw + x1) * c + k];
        const double top = a + (b - a) * fx;
        const double bottom = d + (e - d) * fx;
        out[(y * width + x) * c + k] = static_cast<float>(top + (bottom - top) * fy);
      }
    }
  }
  return out;
}

Image convert_channels(const Image& image, std::size_t channels) {
  require_image(image, "convert_channels");
  const std::size_t c = image.dim(2);
  if (c == channels) return image;
  const std::size_t pixels = image.dim(0) * image.dim(1);
  Image out({image.dim(0), image.dim(1), channels});
  if (c == 1) {
    for (std::size_t p = 0; p < pixels; ++p)
      for (std::size_t k = 0; k < channels; ++k) out[p * channels + k] = image[p];
    return out;
  }
  if (c == 3 && channels == 1) {
    for (std::size_t p = 0; p < pixels; ++p)
      out[p] = static_cast<float>(0.299 * image[3 * p] + 0.587 * image[3 * p + 1] + 0.114 * image[3 * p + 2]);
    return out;
  }
  throw ConfigError("cannot convert " + std::to_string(c) + "-channel image to " + std::to_string(channels) +
                    " channels");
}

NdArray<float> binarize_mask(const NdArray<float>& mask, float threshold) {
  if (mask.rank() != 2 && !(mask.rank() == 3 && mask.dim(2) == 1))
    throw DimensionError("mask must be [H, W] or [H, W, 1], got " + shape_str(mask.shape()));
  NdArray<float> out({mask.dim(0), mask.dim(1)});
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = mask[i] >= threshold ? 1.0f : 0.0f;
  return out;
}

}  // namespace anovit
