#include <cmath>
#include <numeric>

#include "anovit/init.hpp"
#include "anovit/training.hpp"

namespace anovit {

std::vector<std::string> TrainConfig::violations() const {
  std::vector<std::string> out;
  if (batch_size < 1) out.push_back("train.batch_size must be >= 1");
  if (!(learning_rate > 0.0)) out.push_back("train.learning_rate must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) out.push_back("train.beta1 must be in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) out.push_back("train.beta2 must be in [0, 1)");
  if (!(adam_eps > 0.0)) out.push_back("train.adam_eps must be > 0");
  if (augmentation.hflip_prob < 0 || augmentation.hflip_prob > 1 || augmentation.vflip_prob < 0 ||
      augmentation.vflip_prob > 1)
    out.push_back("train.augmentation flip probabilities must be in [0, 1]");
  if (augmentation.max_rotation_deg < 0 || augmentation.max_translation < 0 || augmentation.max_translation >= 0.5)
    out.push_back("train.augmentation ranges must be non-negative (translation < 0.5)");
  return out;
}

template <typename T>
double train_step(ReconstructionModel<T>& model, const NdArray<T>& batch, Adam<T>& optimizer,
                  LossReduction reduction) {
  ParameterStore<T>& params = model.parameters();
  params.zero_grad();
  Tape<T> tape;
  Var<T> loss = reconstruction_loss(model.forward(batch), batch, reduction);
  const double value = loss.value()[0];
  if (!std::isfinite(value)) {
    std::string where = tape.first_non_finite();
    for (const auto& p : params)
      if (!p.value.all_finite()) {
        where += (where.empty() ? "" : ", ") + std::string("parameter ") + p.name;
        break;
      }
    throw NumericError("loss is not finite (" + std::to_string(value) + ")" +
                       (where.empty() ? "" : "; first non-finite: " + where));
  }
  tape.backward(loss);
  for (const auto& p : params)
    if (p.trainable && !p.grad.all_finite()) throw NumericError("non-finite gradient for parameter " + p.name);
  optimizer.step(params);
  return value;
}

template double train_step<float>(ReconstructionModel<float>&, const NdArray<float>&, Adam<float>&, LossReduction);
template double train_step<double>(ReconstructionModel<double>&, const NdArray<double>&, Adam<double>&,
                                   LossReduction);

namespace {

constexpr std::uint64_t kShuffleStream = 0x5348;
constexpr std::uint64_t kAugmentStream = 0x4147;

Checkpoint snapshot(ReconstructionModel<float>& model, const Adam<float>& optimizer, const TrainConfig& config,
                    const FitOptions& options, std::size_t epoch, const std::vector<double>& history) {
  Checkpoint ckpt;
  ckpt.model_kind = std::string(model_kind_name(model.kind()));
  ckpt.config = options.run_config;
  ckpt.config_digest = options.config_digest;
  ckpt.seed = config.seed;
  ckpt.epoch = epoch;
  ckpt.step = optimizer.steps();
  ckpt.loss_history = history;
  ckpt.params = snapshot_parameters(model.parameters());
  if (optimizer.steps() > 0) {
    for (const auto& p : ckpt.params) {
      const NdArray<float>* m = optimizer.first_moment(p.name);
      const NdArray<float>* v = optimizer.second_moment(p.name);
      std::vector<float> zeros(p.data.size(), 0.0f);
      ckpt.adam_m.push_back({p.name, p.shape, m ? m->storage() : zeros});
      ckpt.adam_v.push_back({p.name, p.shape, v ? v->storage() : zeros});
    }
  }
  return ckpt;
}

}  // namespace

Checkpoint fit(std::span<const NdArray<float>> train_images, ReconstructionModel<float>& model,
               const TrainConfig& config, const FitOptions& options) {
  if (auto v = config.violations(); !v.empty()) {
    std::string msg = "invalid training config:";
    for (const auto& s : v) msg += "\n  " + s;
    throw ConfigError(msg);
  }
  if (train_images.empty()) throw ConfigError("training set is empty");

  Adam<float> optimizer(config.adam());
  std::vector<double> history;
  std::size_t start_epoch = 0;
  if (options.resume) {
    const Checkpoint& r = *options.resume;
    if (r.model_kind != model_kind_name(model.kind()))
      throw FormatError("checkpoint holds a " + r.model_kind + " model, not " +
                        std::string(model_kind_name(model.kind())));
    restore_parameters(r, model.parameters());
    std::map<std::string, std::pair<NdArray<float>, NdArray<float>>> moments;
    for (std::size_t i = 0; i < r.adam_m.size(); ++i)
      moments.emplace(r.adam_m[i].name, std::pair{NdArray<float>(r.adam_m[i].shape, r.adam_m[i].data),
                                                  NdArray<float>(r.adam_v[i].shape, r.adam_v[i].data)});
    optimizer.restore(r.step, std::move(moments));
    history = r.loss_history;
    start_epoch = r.epoch;
  }

  const std::size_t n = train_images.size();
  for (std::size_t epoch = start_epoch; epoch < config.epochs; ++epoch) {
    Rng shuffle_rng(mix_seed({config.seed, kShuffleStream, epoch}));
    const std::vector<std::size_t> order = shuffled_indices(n, shuffle_rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t end = std::min(n, start + config.batch_size);
      std::vector<NdArray<float>> items;
      items.reserve(end - start);
      for (std::size_t i = start; i < end; ++i) {
        const std::size_t idx = order[i];
        items.push_back(config.augment
                            ? augment(train_images[idx], mix_seed({config.seed, kAugmentStream, epoch, idx}),
                                      config.augmentation)
                            : train_images[idx]);
      }
      loss_sum += train_step(model, stack_batch<float>(items), optimizer, config.reduction);
      ++batches;
    }
    history.push_back(loss_sum / static_cast<double>(batches));
    if (options.on_epoch) options.on_epoch({epoch + 1, optimizer.steps(), history.back()});
    if (options.checkpoint_dir && config.checkpoint_every > 0 && (epoch + 1) % config.checkpoint_every == 0 &&
        epoch + 1 < config.epochs)
      save_checkpoint(snapshot(model, optimizer, config, options, epoch + 1, history), *options.checkpoint_dir);
  }

  Checkpoint final_ckpt =
      snapshot(model, optimizer, config, options, std::max(start_epoch, config.epochs), history);
  if (options.checkpoint_dir) save_checkpoint(final_ckpt, *options.checkpoint_dir);
  return final_ckpt;
}

}  // namespace anovit
