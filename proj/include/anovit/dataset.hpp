#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "anovit/image.hpp"

namespace anovit {

struct TestItem {
  Image image;
  int label = 0;                       // 1 = anomalous
  std::optional<NdArray<float>> mask;  // [H, W] binary
  std::string path;
  std::string group;  // defect type or class name
};

struct OneClassSplit {
  std::string category;
  std::vector<Image> train;  // normal only
  std::vector<std::string> train_paths;
  std::vector<Image> validation;  // held-out normal images, may be empty
  std::vector<TestItem> test;

  std::size_t n_normal() const;
  std::size_t n_anomalous() const;
  bool has_masks() const;  // every test item carries a mask
};

struct LoadOptions {
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t channels = 1;
};

// <root>/<category>/{train/good, test/<type>, ground_truth/<type>/<stem>_mask.png}.
OneClassSplit load_mvtec_layout(const std::filesystem::path& root, const std::string& category,
                                const LoadOptions& options);

// Class-per-folder data. With <root>/train and <root>/test present, the
// normal training folder is split 80/20 into train/validation and the test
// set is every class under <root>/test. Otherwise the normal class folder is
// split 80/20 and the held-out 20% joins all other classes as the test set.
OneClassSplit load_oneclass_split(const std::filesystem::path& root, const std::string& normal_class,
                                  const LoadOptions& options, std::uint64_t seed = 7, double train_fraction = 0.8);

enum class Texture { uniform, stripes, noise };
enum class DefectKind { square, line, blob };

struct SynthSpec {
  std::string category = "synth";
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t channels = 1;
  Texture texture = Texture::stripes;
  DefectKind defect = DefectKind::square;
  double delta = 0.4;
  double noise_std = 0.02;
  std::size_t n_train = 64;
  std::size_t n_test_normal = 16;
  std::size_t n_test_anomalous = 16;
  std::uint64_t seed = 7;

  std::vector<std::string> violations() const;
  void validate() const;

  nlohmann::json to_json() const;
  static SynthSpec from_json(const nlohmann::json& j);  // unknown keys rejected
};

std::string_view texture_name(Texture t);
std::string_view defect_name(DefectKind d);

// Builds the dataset in memory and, when out_dir is set, writes it in the
// MVTec layout under <out_dir>/<category> with <out_dir>/manifest.json.
// Pixel values are quantized to 8 bits, so the written PNGs decode to exactly
// the returned arrays.
OneClassSplit generate_synth(const SynthSpec& spec, const std::optional<std::filesystem::path>& out_dir);

}  // namespace anovit
