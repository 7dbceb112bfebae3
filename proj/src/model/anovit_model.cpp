#include "anovit/model.hpp"

namespace anovit {

std::string_view model_kind_name(ModelKind kind) {
  switch (kind) {
    case ModelKind::anovit: return "anovit";
    case ModelKind::cae: return "cae";
  }
  return "unknown";
}

ModelKind parse_model_kind(std::string_view name) {
  if (name == "anovit") return ModelKind::anovit;
  if (name == "cae") return ModelKind::cae;
  throw ConfigError("unknown model kind '" + std::string(name) + "' (expected anovit or cae)");
}

template <typename T>
void ReconstructionModel<T>::check_input(const NdArray<T>& images) const {
  const Shape expect = image_shape();
  const Shape& s = images.shape();
  const bool ok = (s.size() == 3 || s.size() == 4) && std::equal(expect.begin(), expect.end(), s.end() - 3);
  if (!ok) {
    throw DimensionError(std::string(model_kind_name(kind())) + ": input " + shape_str(s) +
                         " does not match model image shape " + shape_str(expect));
  }
}

template <typename T>
AnoVit<T>::AnoVit(const EncoderConfig& encoder, const DecoderConfig& decoder, std::uint64_t seed)
    : init_{Rng(seed)},
      encoder_(encoder, this->params_, init_.rng),
      decoder_(decoder, encoder.grid_side(), encoder.embed_dim, this->params_, init_.rng) {
  if (decoder.out_h != encoder.image_h || decoder.out_w != encoder.image_w ||
      decoder.out_channels != encoder.channels) {
    throw ConfigError("AnoViT: decoder output " + std::to_string(decoder.out_h) + "x" +
                      std::to_string(decoder.out_w) + "x" + std::to_string(decoder.out_channels) +
                      " differs from the encoder input image");
  }
}

template <typename T>
Shape AnoVit<T>::image_shape() const {
  const auto& c = encoder_.config();
  return {c.image_h, c.image_w, c.channels};
}

template <typename T>
Var<T> AnoVit<T>::forward(const NdArray<T>& images) {
  this->check_input(images);
  return decode_tokens(encode(images));
}

template class ReconstructionModel<float>;
template class ReconstructionModel<double>;
template class AnoVit<float>;
template class AnoVit<double>;

}  // namespace anovit
