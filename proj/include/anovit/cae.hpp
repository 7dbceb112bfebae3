#pragma once

// Convolutional autoencoder baseline trained with the same squared-error
// objective. This is a compact stand-in for the reference l2-CAE, not its
// exact layer table: strided conv + ReLU encoder to a spatial latent (no
// fully-connected bottleneck) and a mirrored transposed-conv decoder.

#include <vector>

#include "anovit/model.hpp"

namespace anovit {

struct ConvBlockSpec {
  std::size_t out_channels = 0;
  std::size_t kernel = 4;
  std::size_t stride = 2;
  std::size_t padding = 1;

  friend bool operator==(const ConvBlockSpec&, const ConvBlockSpec&) = default;
};

struct CaeConfig {
  std::size_t image_h = 32;
  std::size_t image_w = 32;
  std::size_t channels = 1;
  std::vector<ConvBlockSpec> encoder;
  // The last decoder block emits `channels` maps and has no ReLU.
  std::vector<DecoderBlockSpec> decoder;

  // 4 stride-2 K=4 conv blocks (32, 64, 64, 64) to a 2x2x64 latent for a
  // 32x32 input, decoder mirrored (64, 64, 32, C).
  static CaeConfig desk(std::size_t h = 32, std::size_t w = 32, std::size_t c = 1);
  // First `blocks` encoder/decoder stages of the desk layout (used by small
  // gradient checks); the last decoder block still emits C channels.
  static CaeConfig desk_blocks(std::size_t blocks, std::size_t h = 32, std::size_t w = 32, std::size_t c = 1);

  Shape latent_shape() const;  // {h, w, c} after the encoder
  std::vector<std::string> violations() const;
  void validate() const;
};

template <typename T>
class ConvAutoencoder final : public ReconstructionModel<T> {
 public:
  ConvAutoencoder(const CaeConfig& config, std::uint64_t seed);

  ModelKind kind() const override { return ModelKind::cae; }
  Shape image_shape() const override { return {config_.image_h, config_.image_w, config_.channels}; }
  Var<T> forward(const NdArray<T>& images) override;

  const CaeConfig& config() const noexcept { return config_; }

 private:
  struct Layer {
    std::size_t stride, padding;
    Parameter<T>* weight;
    Parameter<T>* bias;
  };
  CaeConfig config_;
  std::vector<Layer> encoder_;
  std::vector<Layer> decoder_;
};

// Fair-comparison guard: the baseline must have between half and twice the
// parameters of the AnoViT it is compared against.
void check_parameter_parity(std::size_t anovit_params, std::size_t cae_params);

extern template class ConvAutoencoder<float>;
extern template class ConvAutoencoder<double>;

}  // namespace anovit
