#pragma once

// Checkpoint directory layout (format_version 1):
//
//   manifest.json          model kind, run config + digest, seed, counters,
//                          loss history, parameter and optimizer tables
//   params/<name>.bin      raw little-endian f32, row-major
//   optim/<name>.m.bin     Adam first moment (optional)
//   optim/<name>.v.bin     Adam second moment (optional)

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "anovit/autograd.hpp"

namespace anovit {

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

struct Checkpoint {
  static constexpr int kFormatVersion = 1;

  std::string model_kind;
  nlohmann::json config = nlohmann::json::object();
  std::string config_digest;
  std::uint64_t seed = 0;
  std::size_t epoch = 0;
  std::size_t step = 0;
  std::vector<double> loss_history;
  std::vector<NamedArray> params;
  // Parallel to params when present.
  std::vector<NamedArray> adam_m;
  std::vector<NamedArray> adam_v;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

std::vector<NamedArray> snapshot_parameters(const ParameterStore<float>& store);

// Copies checkpoint values into the store. Every store parameter must be
// present with an identical shape; throws FormatError otherwise.
void restore_parameters(const Checkpoint& ckpt, ParameterStore<float>& store);

}  // namespace anovit
