#include "anovit/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <set>

namespace anovit {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint blobs assume a little-endian host");

void write_file(const fs::path& path, const char* data, std::size_t bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(data, static_cast<std::streamsize>(bytes));
  if (!out) throw IoError("write failed: " + path.string());
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed: " + path.string());
  return bytes;
}

void write_blob(const fs::path& path, const std::vector<float>& data) {
  write_file(path, reinterpret_cast<const char*>(data.data()), data.size() * sizeof(float));
}

std::vector<float> read_blob(const fs::path& path, const Shape& shape) {
  const std::string bytes = read_file(path);
  const std::size_t expected = shape_size(shape) * sizeof(float);
  if (bytes.size() != expected)
    throw FormatError(path.string() + ": blob holds " + std::to_string(bytes.size()) + " bytes, manifest shape " +
                      shape_str(shape) + " needs " + std::to_string(expected));
  std::vector<float> out(shape_size(shape));
  std::memcpy(out.data(), bytes.data(), expected);
  return out;
}

std::string param_file(const std::string& name) { return "params/" + name + ".bin"; }

void check_name(const std::string& name) {
  if (name.empty() || name.find('/') != std::string::npos || name.find("..") != std::string::npos)
    throw FormatError("parameter name '" + name + "' is not a valid blob file name");
}

Shape parse_shape(const json& j, const std::string& name) {
  if (!j.is_array() || j.empty()) throw FormatError("parameter '" + name + "': shape must be a non-empty array");
  Shape shape;
  for (const auto& e : j) {
    if (!e.is_number_unsigned() || e.get<std::size_t>() == 0)
      throw FormatError("parameter '" + name + "': shape extents must be positive integers");
    shape.push_back(e.get<std::size_t>());
  }
  return shape;
}

template <typename V>
V field(const json& j, const char* key) {
  if (!j.contains(key)) throw FormatError(std::string("manifest is missing '") + key + "'");
  try {
    return j.at(key).get<V>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("manifest field '") + key + "': " + e.what());
  }
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const fs::path& dir) {
  const bool has_moments = !ckpt.adam_m.empty();
  if (has_moments && (ckpt.adam_m.size() != ckpt.params.size() || ckpt.adam_v.size() != ckpt.params.size()))
    throw FormatError("optimizer moments must parallel the parameter list");

  std::error_code ec;
  fs::create_directories(dir / "params", ec);
  if (ec) throw IoError("cannot create " + (dir / "params").string() + ": " + ec.message());
  if (has_moments) {
    fs::create_directories(dir / "optim", ec);
    if (ec) throw IoError("cannot create " + (dir / "optim").string() + ": " + ec.message());
  }

  json params = json::array();
  json moments = json::array();
  for (std::size_t i = 0; i < ckpt.params.size(); ++i) {
    const NamedArray& p = ckpt.params[i];
    check_name(p.name);
    if (shape_size(p.shape) != p.data.size())
      throw FormatError("parameter '" + p.name + "': shape " + shape_str(p.shape) + " does not match " +
                        std::to_string(p.data.size()) + " values");
    params.push_back({{"name", p.name}, {"shape", p.shape}, {"dtype", "f32"}, {"file", param_file(p.name)}});
    write_blob(dir / param_file(p.name), p.data);
    if (has_moments) {
      if (ckpt.adam_m[i].name != p.name || ckpt.adam_v[i].name != p.name ||
          ckpt.adam_m[i].data.size() != p.data.size() || ckpt.adam_v[i].data.size() != p.data.size())
        throw FormatError("optimizer moments for '" + p.name + "' do not match the parameter");
      const std::string m_file = "optim/" + p.name + ".m.bin";
      const std::string v_file = "optim/" + p.name + ".v.bin";
      write_blob(dir / m_file, ckpt.adam_m[i].data);
      write_blob(dir / v_file, ckpt.adam_v[i].data);
      moments.push_back({{"name", p.name}, {"m_file", m_file}, {"v_file", v_file}});
    }
  }

  json manifest = {
      {"format_version", Checkpoint::kFormatVersion},
      {"model", ckpt.model_kind},
      {"config", ckpt.config},
      {"config_digest", ckpt.config_digest},
      {"seed", ckpt.seed},
      {"epoch", ckpt.epoch},
      {"step", ckpt.step},
      {"loss_history", ckpt.loss_history},
      {"parameters", params},
  };
  if (has_moments) manifest["optimizer"] = {{"kind", "adam"}, {"moments", moments}};
  const std::string text = manifest.dump(2) + "\n";
  write_file(dir / "manifest.json", text.data(), text.size());
}

Checkpoint load_checkpoint(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  json manifest;
  try {
    manifest = json::parse(read_file(manifest_path));
  } catch (const json::parse_error& e) {
    throw FormatError(manifest_path.string() + ": " + e.what());
  }
  const int version = field<int>(manifest, "format_version");
  if (version != Checkpoint::kFormatVersion)
    throw FormatError(manifest_path.string() + ": unsupported format_version " + std::to_string(version) +
                      " (expected " + std::to_string(Checkpoint::kFormatVersion) + ")");

  Checkpoint ckpt;
  ckpt.model_kind = field<std::string>(manifest, "model");
  ckpt.config = manifest.value("config", json::object());
  ckpt.config_digest = field<std::string>(manifest, "config_digest");
  ckpt.seed = field<std::uint64_t>(manifest, "seed");
  ckpt.epoch = field<std::size_t>(manifest, "epoch");
  ckpt.step = field<std::size_t>(manifest, "step");
  ckpt.loss_history = field<std::vector<double>>(manifest, "loss_history");

  std::set<std::string> seen;
  for (const auto& entry : field<json>(manifest, "parameters")) {
    const auto name = field<std::string>(entry, "name");
    check_name(name);
    if (!seen.insert(name).second) throw FormatError("duplicate parameter '" + name + "' in manifest");
    const auto dtype = field<std::string>(entry, "dtype");
    if (dtype != "f32") throw FormatError("parameter '" + name + "': unsupported dtype '" + dtype + "'");
    Shape shape = parse_shape(entry.at("shape"), name);
    auto data = read_blob(dir / field<std::string>(entry, "file"), shape);
    ckpt.params.push_back({name, std::move(shape), std::move(data)});
  }

  if (manifest.contains("optimizer")) {
    const json& opt = manifest["optimizer"];
    if (field<std::string>(opt, "kind") != "adam") throw FormatError("unsupported optimizer kind");
    const json& moments = opt.at("moments");
    if (moments.size() != ckpt.params.size()) throw FormatError("optimizer moments must parallel the parameter list");
    for (std::size_t i = 0; i < moments.size(); ++i) {
      const NamedArray& p = ckpt.params[i];
      if (field<std::string>(moments[i], "name") != p.name)
        throw FormatError("optimizer moment " + std::to_string(i) + " is not for '" + p.name + "'");
      ckpt.adam_m.push_back({p.name, p.shape, read_blob(dir / field<std::string>(moments[i], "m_file"), p.shape)});
      ckpt.adam_v.push_back({p.name, p.shape, read_blob(dir / field<std::string>(moments[i], "v_file"), p.shape)});
    }
  }
  return ckpt;
}

std::vector<NamedArray> snapshot_parameters(const ParameterStore<float>& store) {
  std::vector<NamedArray> out;
  out.reserve(store.size());
  for (const auto& p : store) out.push_back({p.name, p.value.shape(), p.value.storage()});
  return out;
}

void restore_parameters(const Checkpoint& ckpt, ParameterStore<float>& store) {
  std::map<std::string_view, const NamedArray*> by_name;
  for (const auto& p : ckpt.params) by_name[p.name] = &p;
  for (auto& p : store) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw FormatError("checkpoint is missing parameter '" + p.name + "'");
    if (it->second->shape != p.value.shape())
      throw FormatError("parameter '" + p.name + "': checkpoint shape " + shape_str(it->second->shape) +
                        " does not match model shape " + shape_str(p.value.shape()));
  }
  if (by_name.size() != store.size()) {
    for (const auto& p : ckpt.params)
      if (!store.contains(p.name)) throw FormatError("checkpoint has unknown parameter '" + p.name + "'");
  }
  for (auto& p : store) p.value = NdArray<float>(p.value.shape(), by_name[p.name]->data);
}

}  // namespace anovit
