#include "anovit/conv_decoder.hpp"

#include <algorithm>
#include <cmath>

#include "anovit/ops.hpp"

namespace anovit {

DecoderConfig DecoderConfig::default_for(const EncoderConfig& encoder, std::size_t num_blocks) {
  DecoderConfig cfg;
  cfg.out_h = encoder.image_h;
  cfg.out_w = encoder.image_w;
  cfg.out_channels = encoder.channels;
  const std::size_t d = encoder.embed_dim;
  const std::size_t floor_width = std::max<std::size_t>(d / 16, 16);
  std::size_t side = encoder.grid_side();
  std::size_t width = d;
  for (std::size_t i = 0; i < num_blocks; ++i) {
    width = std::max(width / 2, floor_width);
    DecoderBlockSpec spec;
    spec.out_channels = width;
    if (side > 0 && side * 2 <= std::min(cfg.out_h, cfg.out_w)) {
      spec.kernel = 4;
      spec.stride = 2;
      spec.padding = 1;
      side *= 2;
    } else {
      spec.kernel = 3;
      spec.stride = 1;
      spec.padding = 1;
    }
    cfg.blocks.push_back(spec);
  }
  return cfg;
}

std::vector<std::size_t> DecoderConfig::trace_geometry(std::size_t in_side) const {
  std::vector<std::size_t> sides;
  std::size_t side = in_side;
  for (const auto& b : blocks) {
    side = ops::transposed_conv_out_extent(side, b.kernel, b.stride, b.padding);
    sides.push_back(side);
  }
  return sides;
}

std::vector<std::string> DecoderConfig::violations(std::size_t in_side) const {
  std::vector<std::string> out;
  if (blocks.empty()) out.emplace_back("decoder needs at least one block");
  if (out_h == 0 || out_w == 0 || out_channels == 0) out.emplace_back("decoder output extents must be positive");
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    if (blocks[i].out_channels == 0) out.emplace_back("decoder block " + std::to_string(i) + " has zero channels");
  }
  try {
    const auto sides = trace_geometry(in_side);
    if (!sides.empty() && (sides.back() > out_h || sides.back() > out_w)) {
      out.emplace_back("decoder grid grows to " + std::to_string(sides.back()) + ", beyond the " +
                       std::to_string(out_h) + "x" + std::to_string(out_w) + " output");
    }
  } catch (const GeometryError& e) {
    out.emplace_back(e.what());
  }
  return out;
}

void DecoderConfig::validate(std::size_t in_side) const {
  const auto v = violations(in_side);
  if (v.empty()) return;
  std::string msg = "invalid decoder config:";
  for (const auto& s : v) msg += "\n  - " + s;
  throw ConfigError(msg);
}

template <typename T>
Var<T> rearrange_feature_map(const Var<T>& tokens) {
  const Shape& s = tokens.shape();
  if (s.size() != 2 && s.size() != 3) {
    throw DimensionError("rearrange_feature_map: expected [N+1, D] or [B, N+1, D], got " + shape_str(s));
  }
  const std::size_t rows = s[s.size() - 2];
  const std::size_t d = s.back();
  if (rows < 2) throw ConfigError("rearrange_feature_map: no patch tokens in " + shape_str(s));
  const std::size_t n = rows - 1;
  auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(n))));
  if (side * side != n) {
    throw ConfigError("rearrange_feature_map: N=" + std::to_string(n) + " is not a perfect square");
  }
  auto patches = ops::slice(tokens, s.size() - 2, 1, n);
  if (s.size() == 2) return ops::reshape(patches, {side, side, d});
  return ops::reshape(patches, {s[0], side, side, d});
}

template <typename T>
ConvDecoder<T>::ConvDecoder(const DecoderConfig& config, std::size_t in_side, std::size_t in_channels,
                            ParameterStore<T>& store, Rng& rng, const std::string& prefix)
    : config_(config), in_side_(in_side), in_channels_(in_channels) {
  config_.validate(in_side);
  std::size_t cin = in_channels;
  for (std::size_t i = 0; i < config_.blocks.size(); ++i) {
    const auto& spec = config_.blocks[i];
    const std::string name = prefix + ".blocks." + std::to_string(i);
    // Each output sees about Cin * (K / stride)^2 inputs.
    const double ratio = double(spec.kernel) / double(spec.stride);
    const double fan_in = double(cin) * ratio * ratio;
    auto& w = store.add(name + ".weight", he_uniform_init<T>({spec.kernel, spec.kernel, cin, spec.out_channels}, fan_in, rng));
    auto& b = store.add(name + ".bias", NdArray<T>({spec.out_channels}));
    blocks_.push_back(Block{spec, &w, &b});
    cin = spec.out_channels;
  }
  head_weight_ = &store.add(prefix + ".head.weight", he_uniform_init<T>({1, 1, cin, config_.out_channels}, double(cin), rng));
  head_bias_ = &store.add(prefix + ".head.bias", NdArray<T>({config_.out_channels}));
}

template <typename T>
Var<T> ConvDecoder<T>::decode(const Var<T>& feature_map) const {
  using V = Var<T>;
  const Shape& s = feature_map.shape();
  if (s.size() < 3 || s[s.size() - 3] != in_side_ || s[s.size() - 2] != in_side_ || s.back() != in_channels_) {
    throw DimensionError("decode: feature map " + shape_str(s) + ", expected " + std::to_string(in_side_) + "x" +
                         std::to_string(in_side_) + "x" + std::to_string(in_channels_));
  }
  V x = feature_map;
  for (const auto& block : blocks_) {
    x = ops::transposed_conv2d(x, V::param(*block.weight), block.spec.stride, block.spec.padding);
    x = ops::relu(ops::add_trailing(x, V::param(*block.bias)));
  }
  x = ops::upsample_nearest(x, config_.out_h, config_.out_w);
  x = ops::add_trailing(ops::conv2d(x, V::param(*head_weight_), 1, 0), V::param(*head_bias_));
  return ops::sigmoid(x);
}

template Var<float> rearrange_feature_map(const Var<float>&);
template Var<double> rearrange_feature_map(const Var<double>&);
template class ConvDecoder<float>;
template class ConvDecoder<double>;

}  // namespace anovit
