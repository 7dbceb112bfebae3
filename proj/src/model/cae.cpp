#include "anovit/cae.hpp"

#include "anovit/ops.hpp"

namespace anovit {

CaeConfig CaeConfig::desk(std::size_t h, std::size_t w, std::size_t c) { return desk_blocks(4, h, w, c); }

CaeConfig CaeConfig::desk_blocks(std::size_t blocks, std::size_t h, std::size_t w, std::size_t c) {
  static constexpr std::size_t kWidths[] = {32, 64, 64, 64};
  if (blocks == 0 || blocks > 4) throw ConfigError("CAE desk layout supports 1..4 blocks");
  CaeConfig cfg;
  cfg.image_h = h;
  cfg.image_w = w;
  cfg.channels = c;
  for (std::size_t i = 0; i < blocks; ++i) cfg.encoder.push_back(ConvBlockSpec{kWidths[i], 4, 2, 1});
  // Mirror: decoder block i restores the input width of encoder block (blocks-1-i).
  for (std::size_t i = 0; i < blocks; ++i) {
    const std::size_t src = blocks - 1 - i;
    const std::size_t width = src == 0 ? c : kWidths[src - 1];
    cfg.decoder.push_back(DecoderBlockSpec{width, 4, 2, 1});
  }
  return cfg;
}

Shape CaeConfig::latent_shape() const {
  std::size_t h = image_h;
  std::size_t w = image_w;
  std::size_t c = channels;
  for (const auto& b : encoder) {
    h = ops::conv_out_extent(h, b.kernel, b.stride, b.padding);
    w = ops::conv_out_extent(w, b.kernel, b.stride, b.padding);
    c = b.out_channels;
  }
  return {h, w, c};
}

std::vector<std::string> CaeConfig::violations() const {
  std::vector<std::string> out;
  if (image_h == 0 || image_w == 0 || channels == 0) out.emplace_back("image extents and channels must be positive");
  if (encoder.empty()) out.emplace_back("CAE encoder needs at least one block");
  if (decoder.empty()) out.emplace_back("CAE decoder needs at least one block");
  if (!out.empty()) return out;
  if (decoder.back().out_channels != channels) {
    out.emplace_back("last CAE decoder block must emit " + std::to_string(channels) + " channels");
  }
  try {
    const Shape latent = latent_shape();
    std::size_t h = latent[0];
    std::size_t w = latent[1];
    for (const auto& b : decoder) {
      h = ops::transposed_conv_out_extent(h, b.kernel, b.stride, b.padding);
      w = ops::transposed_conv_out_extent(w, b.kernel, b.stride, b.padding);
    }
    if (h > image_h || w > image_w) {
      out.emplace_back("CAE decoder output " + std::to_string(h) + "x" + std::to_string(w) +
                       " exceeds the image; geometries are not mirrored");
    }
  } catch (const GeometryError& e) {
    out.emplace_back(e.what());
  }
  return out;
}

void CaeConfig::validate() const {
  const auto v = violations();
  if (v.empty()) return;
  std::string msg = "invalid CAE config:";
  for (const auto& s : v) msg += "\n  - " + s;
  throw ConfigError(msg);
}

void check_parameter_parity(std::size_t anovit_params, std::size_t cae_params) {
  if (cae_params * 2 < anovit_params || cae_params > anovit_params * 2) {
    throw ConfigError("CAE has " + std::to_string(cae_params) + " parameters vs " + std::to_string(anovit_params) +
                      " for AnoViT; the baseline must be within 2x");
  }
}

template <typename T>
ConvAutoencoder<T>::ConvAutoencoder(const CaeConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  std::size_t cin = config_.channels;
  for (std::size_t i = 0; i < config_.encoder.size(); ++i) {
    const auto& b = config_.encoder[i];
    const std::string name = "cae.encoder." + std::to_string(i);
    auto& w = this->params_.add(name + ".weight", he_uniform_init<T>({b.kernel, b.kernel, cin, b.out_channels},
                                                                     double(b.kernel * b.kernel * cin), rng));
    auto& bias = this->params_.add(name + ".bias", NdArray<T>({b.out_channels}));
    encoder_.push_back(Layer{b.stride, b.padding, &w, &bias});
    cin = b.out_channels;
  }
  for (std::size_t i = 0; i < config_.decoder.size(); ++i) {
    const auto& b = config_.decoder[i];
    const std::string name = "cae.decoder." + std::to_string(i);
    const double ratio = double(b.kernel) / double(b.stride);
    auto& w = this->params_.add(name + ".weight", he_uniform_init<T>({b.kernel, b.kernel, cin, b.out_channels},
                                                                     double(cin) * ratio * ratio, rng));
    auto& bias = this->params_.add(name + ".bias", NdArray<T>({b.out_channels}));
    decoder_.push_back(Layer{b.stride, b.padding, &w, &bias});
    cin = b.out_channels;
  }
}

template <typename T>
Var<T> ConvAutoencoder<T>::forward(const NdArray<T>& images) {
  using V = Var<T>;
  this->check_input(images);
  V x = V::constant(images);
  for (const auto& l : encoder_) {
    x = ops::relu(ops::add_trailing(ops::conv2d(x, V::param(*l.weight), l.stride, l.padding), V::param(*l.bias)));
  }
  for (std::size_t i = 0; i < decoder_.size(); ++i) {
    const auto& l = decoder_[i];
    x = ops::add_trailing(ops::transposed_conv2d(x, V::param(*l.weight), l.stride, l.padding), V::param(*l.bias));
    if (i + 1 < decoder_.size()) x = ops::relu(x);
  }
  x = ops::upsample_nearest(x, config_.image_h, config_.image_w);
  return ops::sigmoid(x);
}

template class ConvAutoencoder<float>;
template class ConvAutoencoder<double>;

}  // namespace anovit
