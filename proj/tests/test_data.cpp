#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "anovit/augment.hpp"
#include "anovit/dataset.hpp"
#include "anovit/image.hpp"
#include "test_support.hpp"

using namespace anovit;
using anovit::testing::random_array;
using anovit::testing::temp_dir;
namespace fs = std::filesystem;

namespace {

void put(const fs::path& p, const Image& img) {
  fs::create_directories(p.parent_path());
  write_png(p, img);
}

Image gray(std::size_t h, std::size_t w, float v) { return Image({h, w, 1}, v); }

// cat/train/good: 3, test/good: 2, test/crack: 2 (with masks).
fs::path small_mvtec(const std::string& name) {
  const auto root = temp_dir(name);
  const auto base = root / "cat";
  for (int i = 0; i < 3; ++i) put(base / "train/good" / ("00" + std::to_string(i) + ".png"), gray(40, 40, 0.2f));
  for (int i = 0; i < 2; ++i) put(base / "test/good" / ("00" + std::to_string(i) + ".png"), gray(40, 40, 0.2f));
  for (int i = 0; i < 2; ++i) {
    const std::string stem = "00" + std::to_string(i);
    put(base / "test/crack" / (stem + ".png"), gray(40, 40, 0.7f));
    Image mask({40, 40, 1});
    for (std::size_t y = 10; y < 20; ++y)
      for (std::size_t x = 10; x < 20; ++x) mask[y * 40 + x] = 1.0f;
    put(base / "ground_truth/crack" / (stem + "_mask.png"), mask);
  }
  return root;
}

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

std::size_t components(const NdArray<float>& mask) {
  const std::size_t h = mask.dim(0), w = mask.dim(1);
  std::vector<int> seen(h * w, 0);
  std::size_t count = 0;
  for (std::size_t s = 0; s < h * w; ++s) {
    if (mask[s] == 0.0f || seen[s]) continue;
    ++count;
    std::vector<std::size_t> stack{s};
    seen[s] = 1;
    while (!stack.empty()) {
      const std::size_t p = stack.back();
      stack.pop_back();
      const std::size_t y = p / w, x = p % w;
      const std::size_t nb[4] = {y > 0 ? p - w : p, y + 1 < h ? p + w : p, x > 0 ? p - 1 : p, x + 1 < w ? p + 1 : p};
      for (std::size_t q : nb)
        if (mask[q] != 0.0f && !seen[q]) {
          seen[q] = 1;
          stack.push_back(q);
        }
    }
  }
  return count;
}

}  // namespace

TEST(MvtecLayout, SplitCounts) {
  const auto root = small_mvtec("mvtec_counts");
  const auto split = load_mvtec_layout(root, "cat", LoadOptions{});
  EXPECT_EQ(split.train.size(), 3u);
  EXPECT_EQ(split.test.size(), 4u);
  EXPECT_EQ(split.n_normal(), 2u);
  EXPECT_EQ(split.n_anomalous(), 2u);
  EXPECT_TRUE(split.has_masks());
  for (const auto& item : split.test) {
    ASSERT_TRUE(item.mask);
    const float mx = *std::max_element(item.mask->storage().begin(), item.mask->storage().end());
    EXPECT_EQ(mx, item.label ? 1.0f : 0.0f);
    EXPECT_EQ(item.image.shape(), (Shape{32, 32, 1}));
    for (float v : item.image.data()) {
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 1.0f);
    }
  }
}

TEST(MvtecLayout, MasksAreStrictlyBinary) {
  const auto root = small_mvtec("mvtec_binary");
  Image soft({40, 40, 1});
  for (std::size_t i = 0; i < soft.size(); ++i) soft[i] = float(i % 5) / 4.0f;
  put(root / "cat/ground_truth/crack/000_mask.png", soft);
  const auto split = load_mvtec_layout(root, "cat", LoadOptions{});
  for (const auto& item : split.test)
    for (float v : item.mask->data()) EXPECT_TRUE(v == 0.0f || v == 1.0f);
}

TEST(MvtecLayout, MissingMaskNamesTheFile) {
  const auto root = small_mvtec("mvtec_missing");
  fs::remove(root / "cat/ground_truth/crack/001_mask.png");
  try {
    load_mvtec_layout(root, "cat", LoadOptions{});
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("001"), std::string::npos) << e.what();
  }
}

TEST(MvtecLayout, MaskExtentMismatchAndBadImageReported) {
  const auto root = small_mvtec("mvtec_extent");
  put(root / "cat/ground_truth/crack/000_mask.png", gray(20, 40, 1.0f));
  EXPECT_THROW(load_mvtec_layout(root, "cat", LoadOptions{}), DimensionError);

  const auto root2 = small_mvtec("mvtec_badimage");
  std::ofstream(root2 / "cat/train/good/bad.png") << "not an image";
  try {
    load_mvtec_layout(root2, "cat", LoadOptions{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("bad.png"), std::string::npos) << e.what();
  }
  EXPECT_THROW(load_mvtec_layout(root2, "dog", LoadOptions{}), IoError);
}

TEST(MvtecLayout, GrayReplicatedToThreeChannels) {
  const auto root = small_mvtec("mvtec_rgb");
  const auto split = load_mvtec_layout(root, "cat", LoadOptions{32, 32, 3});
  const auto& img = split.train[0];
  ASSERT_EQ(img.shape(), (Shape{32, 32, 3}));
  for (std::size_t p = 0; p < 32 * 32; ++p) {
    EXPECT_EQ(img[p * 3], img[p * 3 + 1]);
    EXPECT_EQ(img[p * 3], img[p * 3 + 2]);
  }
}

TEST(OneClass, TenClassProtocol) {
  const auto root = temp_dir("oneclass10");
  for (int c = 0; c < 10; ++c)
    for (int i = 0; i < 5; ++i)
      put(root / std::to_string(c) / (std::to_string(i) + ".png"), gray(28, 28, float(c) / 10.0f));
  const auto split = load_oneclass_split(root, "0", LoadOptions{}, 7, 0.8);
  EXPECT_EQ(split.train.size(), 4u);
  EXPECT_EQ(split.n_normal(), 1u);
  EXPECT_EQ(split.n_anomalous(), 45u);
  std::set<std::string> anomalous_groups;
  for (const auto& t : split.test) {
    EXPECT_EQ(t.label, t.group == "0" ? 0 : 1);
    EXPECT_FALSE(t.mask.has_value());
    if (t.label) anomalous_groups.insert(t.group);
  }
  EXPECT_EQ(anomalous_groups.size(), 9u);
  EXPECT_FALSE(split.has_masks());
  // Held-out normal image is not in train.
  const auto again = load_oneclass_split(root, "0", LoadOptions{}, 7, 0.8);
  EXPECT_EQ(again.train_paths, split.train_paths);
}

TEST(OneClass, TrainTestLayoutSplitsTrainingFolder) {
  const auto root = temp_dir("oneclass_tt");
  for (int c = 0; c < 3; ++c) {
    for (int i = 0; i < 10; ++i) put(root / "train" / std::to_string(c) / (std::to_string(i) + ".png"), gray(8, 8, 0.1f));
    for (int i = 0; i < 2; ++i) put(root / "test" / std::to_string(c) / (std::to_string(i) + ".png"), gray(8, 8, 0.1f));
  }
  const auto split = load_oneclass_split(root, "1", LoadOptions{}, 3, 0.8);
  EXPECT_EQ(split.train.size(), 8u);
  EXPECT_EQ(split.validation.size(), 2u);
  EXPECT_EQ(split.n_normal(), 2u);
  EXPECT_EQ(split.n_anomalous(), 4u);
}

TEST(OneClass, UnknownClassListsAvailableAndEmptyClassRejected) {
  const auto root = temp_dir("oneclass_err");
  put(root / "cats/0.png", gray(8, 8, 0.1f));
  fs::create_directories(root / "dogs");
  try {
    load_oneclass_split(root, "birds", LoadOptions{});
    FAIL();
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("cats"), std::string::npos) << msg;
    EXPECT_NE(msg.find("dogs"), std::string::npos) << msg;
  }
  EXPECT_THROW(load_oneclass_split(root, "dogs", LoadOptions{}), IoError);
}

TEST(ImageOps, ResizeIdentityAndCornerAlignment) {
  const auto img = random_array<float>({5, 7, 2}, 1, 0, 1);
  EXPECT_EQ(resize_bilinear(img, 5, 7), img);
  const Image two({2, 2, 1}, std::vector<float>{0, 1, 2, 3});
  const auto three = resize_bilinear(two, 3, 3);
  EXPECT_EQ(three[0], 0.0f);
  EXPECT_EQ(three[2], 1.0f);
  EXPECT_EQ(three[8], 3.0f);
  EXPECT_FLOAT_EQ(three[4], 1.5f);
  EXPECT_EQ(resize_bilinear(img, 9, 3), resize_bilinear(img, 9, 3));
}

TEST(ImageOps, ChannelConversion) {
  const Image rgb({1, 1, 3}, std::vector<float>{1.0f, 0.5f, 0.0f});
  EXPECT_NEAR(convert_channels(rgb, 1)[0], 0.299 + 0.587 * 0.5, 1e-6);
  const auto binar = binarize_mask(NdArray<float>({2, 2}, std::vector<float>{0.49f, 0.5f, 0.0f, 0.9f}));
  EXPECT_EQ(binar.storage(), (std::vector<float>{0, 1, 0, 1}));
}

TEST(ImageIo, PngAndPnmRoundTrip) {
  const auto dir = temp_dir("imageio");
  Image img({3, 5, 3});
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = float(i * 7 % 256) / 255.0f;
  write_png(dir / "a.png", img);
  EXPECT_EQ(read_image(dir / "a.png"), img);
  write_pnm(dir / "a.ppm", img);
  EXPECT_EQ(read_image(dir / "a.ppm"), img);
  Image g({4, 4, 1});
  for (std::size_t i = 0; i < 16; ++i) g[i] = float(i * 4000) / 65535.0f;
  write_png(dir / "g16.png", g, 16);
  EXPECT_EQ(read_image(dir / "g16.png"), g);
  EXPECT_THROW(read_image(dir / "none.png"), IoError);
}

TEST(Augment, SeedDeterminesOutput) {
  const auto img = random_array<float>({32, 32, 1}, 2, 0, 1);
  EXPECT_EQ(augment(img, 11), augment(img, 11));
  EXPECT_EQ(draw_augment(11, {}, 32, 32).rotation_deg, draw_augment(11, {}, 32, 32).rotation_deg);
}

TEST(Augment, DrawsRespectRanges) {
  AugmentConfig cfg;
  std::size_t h = 0, v = 0;
  for (std::uint64_t s = 0; s < 2000; ++s) {
    const auto d = draw_augment(s, cfg, 40, 20);
    EXPECT_LE(std::abs(d.rotation_deg), 10.0);
    EXPECT_LE(std::abs(d.shift_x), 0.05 * 20);
    EXPECT_LE(std::abs(d.shift_y), 0.05 * 40);
    h += d.hflip;
    v += d.vflip;
  }
  EXPECT_NEAR(double(h) / 2000, 0.5, 0.05);
  EXPECT_NEAR(double(v) / 2000, 0.5, 0.05);
}

TEST(Augment, FlipsPreserveHistogramExactly) {
  const auto img = random_array<float>({9, 12, 3}, 3, 0, 1);
  for (bool hf : {false, true})
    for (bool vf : {false, true}) {
      const auto out = apply_augment(img, AugmentDraw{hf, vf, 0, 0, 0});
      auto a = img.storage(), b = out.storage();
      std::sort(a.begin(), a.end());
      std::sort(b.begin(), b.end());
      EXPECT_EQ(a, b);
    }
  const auto h = apply_augment(img, AugmentDraw{true, false, 0, 0, 0});
  EXPECT_EQ(h[0], img[11 * 3]);
}

TEST(Augment, IdentityDrawLeavesInputUnchanged) {
  const auto img = random_array<float>({16, 16, 1}, 4, 0, 1);
  EXPECT_EQ(apply_augment(img, AugmentDraw{}), img);
  AugmentConfig none{0, 0, 0, 0};
  EXPECT_EQ(augment(img, 99, none), img);
}

TEST(Augment, AffineStaysInRange) {
  const auto img = random_array<float>({16, 16, 1}, 5, 0, 1);
  const auto out = apply_augment(img, AugmentDraw{false, false, 9.0, 0.7, -0.6});
  for (float v : out.data()) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
  EXPECT_NE(out, img);
}

TEST(Synth, DefaultSpecStructure) {
  const auto data = generate_synth(SynthSpec{}, std::nullopt);
  EXPECT_EQ(data.train.size(), 64u);
  EXPECT_EQ(data.n_normal(), 16u);
  EXPECT_EQ(data.n_anomalous(), 16u);
  for (const auto& item : data.test) {
    double area = 0;
    for (float m : item.mask->data()) area += m;
    if (item.label) {
      EXPECT_EQ(components(*item.mask), 1u);
      EXPECT_GT(area, 0.0);
      EXPECT_LT(area, 0.25 * 32 * 32);
    } else {
      EXPECT_EQ(area, 0.0);
    }
  }
}

TEST(Synth, EveryDefectKindIsOneComponent) {
  for (auto kind : {DefectKind::square, DefectKind::line, DefectKind::blob})
    for (auto tex : {Texture::uniform, Texture::stripes, Texture::noise}) {
      SynthSpec spec;
      spec.defect = kind;
      spec.texture = tex;
      spec.n_train = 1;
      const auto data = generate_synth(spec, std::nullopt);
      for (const auto& item : data.test)
        if (item.label) EXPECT_EQ(components(*item.mask), 1u) << defect_name(kind);
    }
}

TEST(Synth, ByteIdenticalAcrossRunsAndRoundTrips) {
  const auto a = temp_dir("synth_a"), b = temp_dir("synth_b");
  const auto mem = generate_synth(SynthSpec{}, a);
  generate_synth(SynthSpec{}, b);
  EXPECT_TRUE(tree(a) == tree(b));
  EXPECT_TRUE(fs::exists(a / "manifest.json"));

  const auto loaded = load_mvtec_layout(a, "synth", LoadOptions{});
  ASSERT_EQ(loaded.train.size(), mem.train.size());
  for (std::size_t i = 0; i < mem.train.size(); ++i) EXPECT_EQ(loaded.train[i], mem.train[i]);
  ASSERT_EQ(loaded.test.size(), mem.test.size());
  std::size_t matched = 0;
  for (const auto& t : loaded.test)
    for (const auto& m : mem.test)
      if (t.image == m.image && t.label == m.label && *t.mask == *m.mask) {
        ++matched;
        break;
      }
  EXPECT_EQ(matched, mem.test.size());
}

TEST(Synth, ZeroDeltaIsStatisticallyNormal) {
  SynthSpec spec;
  spec.delta = 0.0;
  const auto data = generate_synth(spec, std::nullopt);
  double sum[2] = {0, 0};
  double n[2] = {0, 0};
  for (const auto& t : data.test)
    for (float v : t.image.data()) {
      sum[t.label] += v;
      n[t.label] += 1;
    }
  EXPECT_NEAR(sum[0] / n[0], sum[1] / n[1], 0.01);
}

TEST(Synth, SpecValidationAndJson) {
  SynthSpec spec;
  spec.delta = 2;
  spec.channels = 2;
  spec.n_train = 0;
  EXPECT_EQ(spec.violations().size(), 3u);
  EXPECT_THROW(generate_synth(spec, std::nullopt), ConfigError);

  SynthSpec ok;
  ok.defect = DefectKind::blob;
  ok.seed = 99;
  const auto back = SynthSpec::from_json(ok.to_json());
  EXPECT_EQ(back.to_json(), ok.to_json());
  auto j = ok.to_json();
  j["colour"] = "red";
  EXPECT_THROW(SynthSpec::from_json(j), ConfigError);
}
