#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <string_view>

#include "anovit/autograd.hpp"
#include "anovit/conv_decoder.hpp"
#include "anovit/vit_encoder.hpp"

namespace anovit {

enum class ModelKind { anovit, cae };

std::string_view model_kind_name(ModelKind kind);
ModelKind parse_model_kind(std::string_view name);  // throws ConfigError

// Common surface of every reconstruction model f: images [B,H,W,C] (or a
// single [H,W,C]) to reconstructions of the same shape with values in [0, 1].
template <typename T>
class ReconstructionModel {
 public:
  virtual ~ReconstructionModel() = default;
  ReconstructionModel() = default;
  ReconstructionModel(const ReconstructionModel&) = delete;
  ReconstructionModel& operator=(const ReconstructionModel&) = delete;

  virtual ModelKind kind() const = 0;
  virtual Shape image_shape() const = 0;  // {H, W, C}

  // Records onto the active tape when one exists.
  virtual Var<T> forward(const NdArray<T>& images) = 0;

  // Inference-only forward.
  NdArray<T> reconstruct(const NdArray<T>& images) {
    NoGradGuard<T> guard;
    return forward(images).value();
  }

  ParameterStore<T>& parameters() noexcept { return params_; }
  const ParameterStore<T>& parameters() const noexcept { return params_; }

 protected:
  void check_input(const NdArray<T>& images) const;

  ParameterStore<T> params_;
};

template <typename T>
class AnoVit final : public ReconstructionModel<T> {
 public:
  AnoVit(const EncoderConfig& encoder, const DecoderConfig& decoder, std::uint64_t seed);

  ModelKind kind() const override { return ModelKind::anovit; }
  Shape image_shape() const override;
  Var<T> forward(const NdArray<T>& images) override;

  // E' for the given images.
  Var<T> encode(const NdArray<T>& images, std::vector<NdArray<T>>* attention = nullptr) {
    return encoder_.encode(images, attention);
  }
  // decode(rearrange(E')). Row 0 of E' never reaches the output.
  Var<T> decode_tokens(const Var<T>& tokens) { return decoder_.decode(rearrange_feature_map(tokens)); }

  const VitEncoder<T>& encoder() const noexcept { return encoder_; }
  const ConvDecoder<T>& decoder() const noexcept { return decoder_; }

 private:
  // Seeded generator consumed by the sub-module constructors.
  struct Init {
    Rng rng;
  };
  Init init_;
  VitEncoder<T> encoder_;
  ConvDecoder<T> decoder_;
};

extern template class ReconstructionModel<float>;
extern template class ReconstructionModel<double>;
extern template class AnoVit<float>;
extern template class AnoVit<double>;

}  // namespace anovit
