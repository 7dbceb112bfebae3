#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "anovit/cae.hpp"
#include "anovit/dataset.hpp"
#include "anovit/evaluation.hpp"
#include "anovit/training.hpp"

namespace anovit {

// Everything needed to reproduce a run, parsed from one JSON file. Every
// section is optional; omitted fields take the desk defaults.
struct RunConfig {
  ModelKind model = ModelKind::anovit;
  std::size_t image_h = 32;
  std::size_t image_w = 32;
  std::size_t channels = 1;

  // encoder.* (image fields are taken from the image section)
  EncoderConfig encoder = EncoderConfig::desk();
  // Empty means DecoderConfig::default_for(encoder, decoder_num_blocks).
  std::vector<DecoderBlockSpec> decoder_blocks;
  std::size_t decoder_num_blocks = 6;
  // Empty means CaeConfig::desk for the image geometry.
  std::vector<ConvBlockSpec> cae_encoder;
  std::vector<DecoderBlockSpec> cae_decoder;

  TrainConfig train;

  double sigma = 4.0;
  bool smooth = true;
  PixelAurocMode pixel_mode = PixelAurocMode::global;
  std::size_t pixel_budget = 0;

  std::string data_root;
  std::string data_layout = "mvtec";  // mvtec | oneclass
  std::string category = "synth";     // normal class for oneclass
  double train_fraction = 0.8;
  std::string output_dir;

  // Throws ConfigError listing every problem found (unknown keys, wrong types,
  // violated invariants).
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::filesystem::path& path);

  nlohmann::json to_json() const;
  // Hyperparameter sections only (no paths), with derived defaults expanded.
  nlohmann::json canonical() const;
  // FNV-1a 64 of canonical().dump(), as 16 hex digits.
  std::string digest() const;

  EncoderConfig encoder_config() const;
  DecoderConfig decoder_config() const;
  CaeConfig cae_config() const;
  LoadOptions load_options() const { return {image_h, image_w, channels}; }
  EvalOptions eval_options() const;

  std::vector<std::string> violations() const;

  // Initialized from train.seed.
  std::unique_ptr<ReconstructionModel<float>> build_model() const;
  template <typename T>
  std::unique_ptr<ReconstructionModel<T>> build_model_as() const;
};

std::uint64_t fnv1a64(std::string_view bytes);

// Loads the split named by the data section.
OneClassSplit load_split(const RunConfig& config);

}  // namespace anovit
