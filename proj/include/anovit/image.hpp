#pragma once

// Images are NdArray<float> of shape [H, W, C] with values in [0, 1].
// Masks are [H, W] arrays holding exactly 0 or 1.

#include <filesystem>

#include "anovit/ndarray.hpp"

namespace anovit {

using Image = NdArray<float>;

// Corner-aligned bilinear resize: output pixel o samples source coordinate
// o * (in - 1) / (out - 1). Same-size resize is the identity.
Image resize_bilinear(const Image& image, std::size_t height, std::size_t width);

// 1 -> C replicates the gray plane; 3 -> 1 uses Rec. 601 luma.
Image convert_channels(const Image& image, std::size_t channels);

// [H, W, 1] or [H, W] to a {0, 1} [H, W] mask (values >= threshold become 1).
NdArray<float> binarize_mask(const NdArray<float>& mask, float threshold = 0.5f);

// Decodes PNG (8/16-bit gray, gray+alpha, RGB, RGBA, palette) or binary
// PGM/PPM (P5/P6). Alpha is dropped. Throws IoError/FormatError with the path.
Image read_image(const std::filesystem::path& path);

// 8- or 16-bit PNG; C must be 1 or 3. Values are clamped to [0, 1] and
// rounded to the nearest level.
void write_png(const std::filesystem::path& path, const Image& image, int bit_depth = 8);

// Binary PGM (C=1) or PPM (C=3), 8-bit.
void write_pnm(const std::filesystem::path& path, const Image& image);

}  // namespace anovit
