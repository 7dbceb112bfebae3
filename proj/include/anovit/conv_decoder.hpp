#pragma once

// Token-to-image decoder: [cls] is dropped, the patch tokens are laid back on
// their patch grid and a stack of transposed convolutions grows the grid to
// the image resolution.

#include <string>
#include <vector>

#include "anovit/autograd.hpp"
#include "anovit/init.hpp"
#include "anovit/vit_encoder.hpp"

namespace anovit {

struct DecoderBlockSpec {
  std::size_t out_channels = 0;
  std::size_t kernel = 4;
  std::size_t stride = 2;
  std::size_t padding = 1;

  friend bool operator==(const DecoderBlockSpec&, const DecoderBlockSpec&) = default;
};

struct DecoderConfig {
  std::vector<DecoderBlockSpec> blocks;
  std::size_t out_h = 0;
  std::size_t out_w = 0;
  std::size_t out_channels = 0;

  // Six blocks. Stride-2 blocks (K=4, pad=1) double the grid as long as it
  // stays within the image, the rest are stride-1 (K=3, pad=1). Widths halve
  // from D down to max(D/16, 16).
  static DecoderConfig default_for(const EncoderConfig& encoder, std::size_t num_blocks = 6);

  // Grid side after every block, starting from `in_side`. Throws
  // GeometryError for invalid block geometry.
  std::vector<std::size_t> trace_geometry(std::size_t in_side) const;

  std::vector<std::string> violations(std::size_t in_side) const;
  void validate(std::size_t in_side) const;
};

// [B, N+1, D] -> [B, sqrt(N), sqrt(N), D] (or unbatched [N+1, D] -> [s, s, D]).
// Cell (i, j) holds token row 1 + i*sqrt(N) + j. No learned layer is involved.
template <typename T>
Var<T> rearrange_feature_map(const Var<T>& tokens);

template <typename T>
class ConvDecoder {
 public:
  ConvDecoder(const DecoderConfig& config, std::size_t in_side, std::size_t in_channels, ParameterStore<T>& store,
              Rng& rng, const std::string& prefix = "decoder");

  // Feature map [B, s, s, D] -> image [B, H, W, C] in [0, 1]:
  // (transposed conv -> ReLU) per block, nearest upsample to (H, W),
  // 1x1 conv to C channels, sigmoid.
  Var<T> decode(const Var<T>& feature_map) const;

  const DecoderConfig& config() const noexcept { return config_; }

 private:
  struct Block {
    DecoderBlockSpec spec;
    Parameter<T>* weight;
    Parameter<T>* bias;
  };

  DecoderConfig config_;
  std::size_t in_side_;
  std::size_t in_channels_;
  std::vector<Block> blocks_;
  Parameter<T>* head_weight_;
  Parameter<T>* head_bias_;
};

extern template class ConvDecoder<float>;
extern template class ConvDecoder<double>;

}  // namespace anovit
