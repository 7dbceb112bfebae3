#pragma once

#include <cstdint>

#include "anovit/image.hpp"

namespace anovit {

struct AugmentConfig {
  double hflip_prob = 0.5;
  double vflip_prob = 0.5;
  double max_rotation_deg = 10.0;
  double max_translation = 0.05;  // fraction of width/height
};

struct AugmentDraw {
  bool hflip = false;
  bool vflip = false;
  double rotation_deg = 0.0;
  double shift_x = 0.0;  // pixels
  double shift_y = 0.0;
};

AugmentDraw draw_augment(std::uint64_t seed, const AugmentConfig& config, std::size_t height, std::size_t width);

// Flips, then rotation about the image center and translation, resampled
// bilinearly with replicated borders.
Image apply_augment(const Image& image, const AugmentDraw& draw);

inline Image augment(const Image& image, std::uint64_t seed, const AugmentConfig& config = {}) {
  return apply_augment(image, draw_augment(seed, config, image.dim(0), image.dim(1)));
}

}  // namespace anovit
