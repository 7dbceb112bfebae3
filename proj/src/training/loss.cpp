#include <cmath>

#include "anovit/ops.hpp"
#include "anovit/training.hpp"

namespace anovit {

std::string_view loss_reduction_name(LossReduction r) {
  return r == LossReduction::sum_per_image ? "sum_per_image" : "mean_per_element";
}

LossReduction parse_loss_reduction(std::string_view name) {
  if (name == "sum_per_image") return LossReduction::sum_per_image;
  if (name == "mean_per_element") return LossReduction::mean_per_element;
  throw ConfigError("unknown loss reduction '" + std::string(name) +
                    "' (expected sum_per_image or mean_per_element)");
}

template <typename T>
NdArray<T> stack_batch(std::span<const NdArray<T>> images) {
  if (images.empty()) throw DimensionError("batch is empty");
  const Shape& first = images.front().shape();
  if (first.size() != 3) throw DimensionError("batch images must be [H, W, C], got " + shape_str(first));
  Shape shape{images.size()};
  shape.insert(shape.end(), first.begin(), first.end());
  NdArray<T> out(shape);
  const std::size_t per = shape_size(first);
  for (std::size_t i = 0; i < images.size(); ++i) {
    require_same_shape(images[i].shape(), first, "stack_batch");
    std::copy(images[i].ptr(), images[i].ptr() + per, out.ptr() + i * per);
  }
  return out;
}

namespace {

double loss_factor(const Shape& shape, LossReduction reduction) {
  if (shape.size() != 3 && shape.size() != 4)
    throw DimensionError("loss expects [H, W, C] or [B, H, W, C], got " + shape_str(shape));
  const std::size_t m = shape.size() == 4 ? shape[0] : 1;
  double factor = 1.0 / static_cast<double>(m);
  if (reduction == LossReduction::mean_per_element) factor /= static_cast<double>(shape_size(shape) / m);
  return factor;
}

}  // namespace

template <typename T>
Var<T> reconstruction_loss(const Var<T>& reconstruction, const NdArray<T>& batch, LossReduction reduction) {
  require_same_shape(reconstruction.shape(), batch.shape(), "reconstruction_loss");
  return ops::sum_squared_error(reconstruction, batch, loss_factor(batch.shape(), reduction));
}

template <typename T>
Var<T> reconstruction_loss(ReconstructionModel<T>& model, std::span<const NdArray<T>> images,
                           LossReduction reduction) {
  NdArray<T> batch = stack_batch(images);
  return reconstruction_loss(model.forward(batch), batch, reduction);
}

template <typename T>
double reconstruction_loss_value(const NdArray<T>& reconstruction, const NdArray<T>& batch, LossReduction reduction) {
  require_same_shape(reconstruction.shape(), batch.shape(), "reconstruction_loss_value");
  double acc = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const double d = static_cast<double>(reconstruction[i]) - static_cast<double>(batch[i]);
    acc += d * d;
  }
  return acc * loss_factor(batch.shape(), reduction);
}

template <typename T>
GradCheckReport check_reconstruction_gradients(ReconstructionModel<T>& model, const NdArray<T>& batch,
                                               LossReduction reduction, const GradCheckOptions& options,
                                               ReconstructionModel<double>* reference) {
  GradCheckProblem<T> problem;
  problem.loss = [&] { return reconstruction_loss(model.forward(batch), batch, reduction); };
  if (reference) {
    for (const auto& p : model.parameters())
      require_same_shape(reference->parameters().get(p.name).value.shape(), p.value.shape(), p.name.c_str());
    const NdArray<double> batch64 = batch.template cast<double>();
    problem.loss_value = [&model, reference, batch64, reduction] {
      for (const auto& p : model.parameters()) {
        NdArray<double>& dst = reference->parameters().get(p.name).value;
        std::copy(p.value.ptr(), p.value.ptr() + p.value.size(), dst.ptr());
      }
      return reconstruction_loss_value(reference->reconstruct(batch64), batch64, reduction);
    };
  } else {
    problem.loss_value = [&] { return reconstruction_loss_value(model.reconstruct(batch), batch, reduction); };
  }
  return grad_check(problem, model.parameters(), options);
}

#define ANOVIT_INSTANTIATE(T)                                                                             \
  template NdArray<T> stack_batch<T>(std::span<const NdArray<T>>);                                        \
  template Var<T> reconstruction_loss<T>(const Var<T>&, const NdArray<T>&, LossReduction);                \
  template Var<T> reconstruction_loss<T>(ReconstructionModel<T>&, std::span<const NdArray<T>>, LossReduction); \
  template double reconstruction_loss_value<T>(const NdArray<T>&, const NdArray<T>&, LossReduction);     \
  template GradCheckReport check_reconstruction_gradients<T>(ReconstructionModel<T>&, const NdArray<T>&,  \
                                                             LossReduction, const GradCheckOptions&, \
                                                             ReconstructionModel<double>*);
ANOVIT_INSTANTIATE(float)
ANOVIT_INSTANTIATE(double)
#undef ANOVIT_INSTANTIATE

}  // namespace anovit
