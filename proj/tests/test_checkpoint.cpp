#include <gtest/gtest.h>

#include <cstring>
#include <fstream>
#include <sstream>

#include "anovit/checkpoint.hpp"
#include "anovit/training.hpp"
#include "test_support.hpp"

using namespace anovit;
using anovit::testing::random_array;
using anovit::testing::temp_dir;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = slurp(e.path());
  return out;
}

// Desk AnoViT after two real Adam steps, so moments are non-trivial.
Checkpoint trained_desk_checkpoint(AnoVit<float>& model) {
  Adam<float> adam(AdamConfig{1e-3});
  const auto batch = random_array<float>({2, 32, 32, 1}, 4, 0, 1);
  Checkpoint ckpt;
  ckpt.model_kind = "anovit";
  ckpt.config = {{"model", "anovit"}, {"train", {{"epochs", 3}}}};
  ckpt.config_digest = "0123456789abcdef";
  ckpt.seed = 7;
  for (int i = 0; i < 2; ++i)
    ckpt.loss_history.push_back(train_step(model, batch, adam, LossReduction::sum_per_image));
  ckpt.epoch = 2;
  ckpt.step = adam.steps();
  ckpt.params = snapshot_parameters(model.parameters());
  for (const auto& p : ckpt.params) {
    const auto* m = adam.first_moment(p.name);
    const auto* v = adam.second_moment(p.name);
    ckpt.adam_m.push_back({p.name, p.shape, m->storage()});
    ckpt.adam_v.push_back({p.name, p.shape, v->storage()});
  }
  return ckpt;
}

}  // namespace

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  AnoVit<float> model(EncoderConfig::desk(), DecoderConfig::default_for(EncoderConfig::desk()), 3);
  const auto ckpt = trained_desk_checkpoint(model);
  const auto a = temp_dir("ckpt_a"), b = temp_dir("ckpt_b");
  save_checkpoint(ckpt, a);
  const auto loaded = load_checkpoint(a);
  save_checkpoint(loaded, b);
  const auto ta = tree(a), tb = tree(b);
  EXPECT_EQ(ta.size(), 1 + 3 * ckpt.params.size());
  EXPECT_TRUE(ta == tb);

  EXPECT_EQ(loaded.step, 2u);
  EXPECT_EQ(loaded.loss_history, ckpt.loss_history);
  EXPECT_EQ(loaded.config, ckpt.config);
  for (std::size_t i = 0; i < ckpt.params.size(); ++i) {
    EXPECT_EQ(loaded.params[i].data, ckpt.params[i].data);
    EXPECT_EQ(loaded.adam_v[i].data, ckpt.adam_v[i].data);
  }
}

TEST(Checkpoint, RestoreIntoFreshModel) {
  AnoVit<float> model(EncoderConfig::desk(), DecoderConfig::default_for(EncoderConfig::desk()), 3);
  const auto ckpt = trained_desk_checkpoint(model);
  AnoVit<float> other(EncoderConfig::desk(), DecoderConfig::default_for(EncoderConfig::desk()), 4);
  restore_parameters(ckpt, other.parameters());
  const auto x = random_array<float>({32, 32, 1}, 8, 0, 1);
  EXPECT_EQ(other.reconstruct(x), model.reconstruct(x));
}

TEST(Checkpoint, BlobsAreLittleEndianF32) {
  Checkpoint ckpt;
  ckpt.model_kind = "cae";
  ckpt.params.push_back({"w", {2}, {1.0f, -2.5f}});
  const auto dir = temp_dir("ckpt_le");
  save_checkpoint(ckpt, dir);
  const std::string bytes = slurp(dir / "params" / "w.bin");
  ASSERT_EQ(bytes.size(), 8u);
  const unsigned char one[4] = {0x00, 0x00, 0x80, 0x3f};
  EXPECT_EQ(std::memcmp(bytes.data(), one, 4), 0);
  const auto manifest = nlohmann::json::parse(slurp(dir / "manifest.json"));
  EXPECT_EQ(manifest["format_version"], 1);
  EXPECT_EQ(manifest["parameters"][0]["dtype"], "f32");
}

TEST(Checkpoint, CorruptedBlobLengthRejected) {
  Checkpoint ckpt;
  ckpt.model_kind = "cae";
  ckpt.params.push_back({"w", {2, 3}, std::vector<float>(6, 1.0f)});
  const auto dir = temp_dir("ckpt_corrupt");
  save_checkpoint(ckpt, dir);
  fs::resize_file(dir / "params" / "w.bin", 20);
  try {
    load_checkpoint(dir);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("w.bin"), std::string::npos) << e.what();
  }
}

TEST(Checkpoint, MissingParameterRejectedOnRestore) {
  AnoVit<float> model(EncoderConfig::desk(), DecoderConfig::default_for(EncoderConfig::desk()), 3);
  Checkpoint ckpt;
  ckpt.params = snapshot_parameters(model.parameters());
  const std::string dropped = ckpt.params[3].name;
  ckpt.params.erase(ckpt.params.begin() + 3);
  try {
    restore_parameters(ckpt, model.parameters());
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find(dropped), std::string::npos);
  }
}

TEST(Checkpoint, ShapeMismatchAndUnknownParameterRejected) {
  AnoVit<float> model(EncoderConfig::desk(), DecoderConfig::default_for(EncoderConfig::desk()), 3);
  Checkpoint ckpt;
  ckpt.params = snapshot_parameters(model.parameters());
  auto bad_shape = ckpt;
  bad_shape.params[0].shape = {bad_shape.params[0].data.size()};
  EXPECT_THROW(restore_parameters(bad_shape, model.parameters()), FormatError);
  auto extra = ckpt;
  extra.params.push_back({"stray", {1}, {0.0f}});
  EXPECT_THROW(restore_parameters(extra, model.parameters()), FormatError);
}

TEST(Checkpoint, ManifestErrorsAreFormatErrors) {
  Checkpoint ckpt;
  ckpt.model_kind = "cae";
  ckpt.params.push_back({"w", {1}, {1.0f}});
  const auto dir = temp_dir("ckpt_manifest");
  save_checkpoint(ckpt, dir);
  auto manifest = nlohmann::json::parse(slurp(dir / "manifest.json"));

  auto write = [&](const nlohmann::json& j) { std::ofstream(dir / "manifest.json") << j.dump(2); };
  auto v2 = manifest;
  v2["format_version"] = 2;
  write(v2);
  EXPECT_THROW(load_checkpoint(dir), FormatError);

  auto f64 = manifest;
  f64["parameters"][0]["dtype"] = "f64";
  write(f64);
  EXPECT_THROW(load_checkpoint(dir), FormatError);

  auto dup = manifest;
  dup["parameters"].push_back(dup["parameters"][0]);
  write(dup);
  EXPECT_THROW(load_checkpoint(dir), FormatError);

  std::ofstream(dir / "manifest.json") << "{ not json";
  EXPECT_THROW(load_checkpoint(dir), FormatError);

  EXPECT_THROW(load_checkpoint(dir / "nowhere"), IoError);
}
