#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "anovit/augment.hpp"
#include "anovit/checkpoint.hpp"
#include "anovit/gradcheck.hpp"
#include "anovit/model.hpp"

namespace anovit {

enum class LossReduction {
  sum_per_image,     // (1/m) sum_i ||X_i - f(X_i)||^2
  mean_per_element,  // additionally divided by H*W*C
};

std::string_view loss_reduction_name(LossReduction r);
LossReduction parse_loss_reduction(std::string_view name);

// Stacks [H,W,C] images into [B,H,W,C]. Throws on an empty span or mixed shapes.
template <typename T>
NdArray<T> stack_batch(std::span<const NdArray<T>> images);

// Squared reconstruction error of `reconstruction` against `batch` ([B,H,W,C]).
template <typename T>
Var<T> reconstruction_loss(const Var<T>& reconstruction, const NdArray<T>& batch, LossReduction reduction);

// Runs the model on the batch and returns the loss.
template <typename T>
Var<T> reconstruction_loss(ReconstructionModel<T>& model, std::span<const NdArray<T>> images,
                           LossReduction reduction);

// Same quantity evaluated without a tape, accumulated in double.
template <typename T>
double reconstruction_loss_value(const NdArray<T>& reconstruction, const NdArray<T>& batch, LossReduction reduction);

// Finite-difference check of the loss gradient with respect to every model
// parameter. The finite differences evaluate the loss in double: on
// `reference` when given (a 64-bit model of the same architecture that
// receives a copy of the current, possibly perturbed, parameter values before
// every evaluation), otherwise on the model's own forward pass.
template <typename T>
GradCheckReport check_reconstruction_gradients(ReconstructionModel<T>& model, const NdArray<T>& batch,
                                               LossReduction reduction, const GradCheckOptions& options,
                                               ReconstructionModel<double>* reference = nullptr);

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  // One bias-corrected update of every trainable parameter from its grad.
  void step(ParameterStore<T>& params);

  std::size_t steps() const noexcept { return steps_; }
  const AdamConfig& config() const noexcept { return config_; }

  // Moment access for checkpointing, keyed by parameter name.
  const NdArray<T>* first_moment(const std::string& name) const;
  const NdArray<T>* second_moment(const std::string& name) const;
  void restore(std::size_t steps, std::map<std::string, std::pair<NdArray<T>, NdArray<T>>> moments);

 private:
  AdamConfig config_;
  std::size_t steps_ = 0;
  std::map<std::string, std::pair<NdArray<T>, NdArray<T>>> moments_;
};

struct TrainConfig {
  std::size_t epochs = 150;
  std::size_t batch_size = 8;
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 7;
  LossReduction reduction = LossReduction::sum_per_image;
  bool augment = true;
  AugmentConfig augmentation;
  std::size_t checkpoint_every = 0;  // epochs; 0 writes only the final checkpoint

  std::vector<std::string> violations() const;
  AdamConfig adam() const { return {learning_rate, beta1, beta2, adam_eps}; }
};

// Zeroes gradients, runs forward/backward, applies one Adam update and
// returns the loss measured before the update. Throws NumericError naming the
// offending op or parameter when the loss is not finite.
template <typename T>
double train_step(ReconstructionModel<T>& model, const NdArray<T>& batch, Adam<T>& optimizer,
                  LossReduction reduction);

struct EpochStats {
  std::size_t epoch = 0;  // 1-based count of completed epochs
  std::size_t step = 0;
  double mean_loss = 0.0;
};

struct FitOptions {
  // Periodic and final checkpoints are written here when set.
  std::optional<std::filesystem::path> checkpoint_dir;
  // Continue from this checkpoint (parameters, optimizer state, counters).
  const Checkpoint* resume = nullptr;
  // Stored verbatim in the checkpoint manifest.
  nlohmann::json run_config = nlohmann::json::object();
  std::string config_digest;
  std::function<void(const EpochStats&)> on_epoch;
};

// Epoch loop over the normal-only training images: seeded shuffle per epoch,
// optional augmentation, mini-batches of batch_size (last one may be short).
Checkpoint fit(std::span<const NdArray<float>> train_images, ReconstructionModel<float>& model,
               const TrainConfig& config, const FitOptions& options = {});

extern template class Adam<float>;
extern template class Adam<double>;

}  // namespace anovit
