#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <set>

#include "anovit/dataset.hpp"
#include "anovit/init.hpp"

namespace anovit {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view texture_name(Texture t) {
  switch (t) {
    case Texture::uniform: return "uniform";
    case Texture::stripes: return "stripes";
    case Texture::noise: return "noise";
  }
  return "?";
}

std::string_view defect_name(DefectKind d) {
  switch (d) {
    case DefectKind::square: return "square";
    case DefectKind::line: return "line";
    case DefectKind::blob: return "blob";
  }
  return "?";
}

namespace {

Texture parse_texture(const std::string& s) {
  for (Texture t : {Texture::uniform, Texture::stripes, Texture::noise})
    if (texture_name(t) == s) return t;
  throw ConfigError("unknown texture '" + s + "' (expected uniform, stripes or noise)");
}

DefectKind parse_defect(const std::string& s) {
  for (DefectKind d : {DefectKind::square, DefectKind::line, DefectKind::blob})
    if (defect_name(d) == s) return d;
  throw ConfigError("unknown defect '" + s + "' (expected square, line or blob)");
}

std::size_t draw_int(Rng& rng, std::size_t lo, std::size_t hi) {
  return lo + std::min(hi - lo, static_cast<std::size_t>(uniform01(rng) * static_cast<double>(hi - lo + 1)));
}

double draw_normal(Rng& rng) {
  const double u1 = uniform01(rng), u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(1.0 - u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

float quantize8(double v) { return static_cast<float>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0); }

// Background plus sensor noise, before quantization.
std::vector<double> background(const SynthSpec& spec, Rng& rng) {
  const std::size_t h = spec.height, w = spec.width, c = spec.channels;
  std::vector<double> v(h * w * c);
  const double offset = 0.1 * (uniform01(rng) - 0.5);
  const double phase = 2.0 * std::numbers::pi * uniform01(rng);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      double base = 0.3;
      switch (spec.texture) {
        case Texture::uniform: base += offset; break;
        case Texture::stripes: base += 0.1 * std::sin(2.0 * std::numbers::pi * static_cast<double>(x) / 8.0 + phase); break;
        case Texture::noise: base += 0.2 * (uniform01(rng) - 0.5); break;
      }
      for (std::size_t k = 0; k < c; ++k) v[(y * w + x) * c + k] = base;
    }
  for (double& p : v) p += spec.noise_std * draw_normal(rng);
  return v;
}

// One connected defect region as a [H, W] 0/1 mask.
NdArray<float> defect_mask(const SynthSpec& spec, Rng& rng) {
  const std::size_t h = spec.height, w = spec.width, m = std::min(h, w);
  NdArray<float> mask({h, w});
  switch (spec.defect) {
    case DefectKind::square: {
      const std::size_t s = draw_int(rng, std::max<std::size_t>(2, m / 8), m / 4);
      const std::size_t y0 = draw_int(rng, 0, h - s), x0 = draw_int(rng, 0, w - s);
      for (std::size_t y = y0; y < y0 + s; ++y)
        for (std::size_t x = x0; x < x0 + s; ++x) mask[y * w + x] = 1.0f;
      break;
    }
    case DefectKind::line: {
      const std::size_t t = std::max<std::size_t>(1, m / 16);
      const std::size_t len = draw_int(rng, m / 4, m / 2);
      const bool horizontal = uniform01(rng) < 0.5;
      const std::size_t lh = horizontal ? t : len, lw = horizontal ? len : t;
      const std::size_t y0 = draw_int(rng, 0, h - lh), x0 = draw_int(rng, 0, w - lw);
      for (std::size_t y = y0; y < y0 + lh; ++y)
        for (std::size_t x = x0; x < x0 + lw; ++x) mask[y * w + x] = 1.0f;
      break;
    }
    case DefectKind::blob: {
      const std::size_t r = draw_int(rng, std::max<std::size_t>(1, m / 16), std::max<std::size_t>(1, m / 8));
      const std::size_t cy = draw_int(rng, r, h - 1 - r), cx = draw_int(rng, r, w - 1 - r);
      for (std::size_t y = cy - r; y <= cy + r; ++y)
        for (std::size_t x = cx - r; x <= cx + r; ++x) {
          const double dy = static_cast<double>(y) - static_cast<double>(cy);
          const double dx = static_cast<double>(x) - static_cast<double>(cx);
          if (dx * dx + dy * dy <= static_cast<double>(r * r)) mask[y * w + x] = 1.0f;
        }
      break;
    }
  }
  return mask;
}

Image finish(const SynthSpec& spec, const std::vector<double>& values) {
  Image img({spec.height, spec.width, spec.channels});
  for (std::size_t i = 0; i < values.size(); ++i) img[i] = quantize8(values[i]);
  return img;
}

std::string numbered(std::size_t i, const char* suffix) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%03zu%s.png", i, suffix);
  return buf;
}

void make_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw IoError("cannot create " + p.string() + ": " + ec.message());
}

}  // namespace

std::vector<std::string> SynthSpec::violations() const {
  std::vector<std::string> out;
  if (category.empty() || category.find('/') != std::string::npos) out.push_back("category must be a plain name");
  if (std::min(height, width) < 8) out.push_back("canvas must be at least 8x8");
  if (channels != 1 && channels != 3) out.push_back("channels must be 1 or 3");
  if (!(delta >= 0.0 && delta <= 1.0)) out.push_back("delta must be in [0, 1]");
  if (!(noise_std >= 0.0 && noise_std <= 0.2)) out.push_back("noise_std must be in [0, 0.2]");
  if (n_train == 0) out.push_back("n_train must be >= 1");
  if (n_test_normal + n_test_anomalous == 0) out.push_back("test set must not be empty");
  return out;
}

void SynthSpec::validate() const {
  const auto v = violations();
  if (v.empty()) return;
  std::string msg = "invalid synth spec:";
  for (const auto& s : v) msg += "\n  " + s;
  throw ConfigError(msg);
}

json SynthSpec::to_json() const {
  return {{"category", category},
          {"height", height},
          {"width", width},
          {"channels", channels},
          {"texture", texture_name(texture)},
          {"defect", defect_name(defect)},
          {"delta", delta},
          {"noise_std", noise_std},
          {"n_train", n_train},
          {"n_test_normal", n_test_normal},
          {"n_test_anomalous", n_test_anomalous},
          {"seed", seed}};
}

SynthSpec SynthSpec::from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("synth spec must be a JSON object");
  SynthSpec s;
  std::vector<std::string> errors;
  static const std::set<std::string> known = {"category", "height",   "width",         "channels",
                                              "texture",  "defect",   "delta",         "noise_std",
                                              "n_train",  "n_test_normal", "n_test_anomalous", "seed"};
  for (const auto& [key, _] : j.items())
    if (!known.count(key)) errors.push_back("unknown key '" + key + "'");
  auto get = [&](const char* key, auto& dst) {
    if (!j.contains(key)) return;
    try {
      j.at(key).get_to(dst);
    } catch (const json::exception&) {
      errors.push_back(std::string("'") + key + "' has the wrong type");
    }
  };
  std::string texture(texture_name(s.texture)), defect(defect_name(s.defect));
  get("category", s.category);
  get("height", s.height);
  get("width", s.width);
  get("channels", s.channels);
  get("texture", texture);
  get("defect", defect);
  get("delta", s.delta);
  get("noise_std", s.noise_std);
  get("n_train", s.n_train);
  get("n_test_normal", s.n_test_normal);
  get("n_test_anomalous", s.n_test_anomalous);
  get("seed", s.seed);
  try {
    s.texture = parse_texture(texture);
  } catch (const ConfigError& e) {
    errors.push_back(e.what());
  }
  try {
    s.defect = parse_defect(defect);
  } catch (const ConfigError& e) {
    errors.push_back(e.what());
  }
  for (auto& v : s.violations()) errors.push_back(v);
  if (!errors.empty()) {
    std::string msg = "invalid synth spec:";
    for (const auto& e : errors) msg += "\n  " + e;
    throw ConfigError(msg);
  }
  return s;
}

OneClassSplit generate_synth(const SynthSpec& spec, const std::optional<fs::path>& out_dir) {
  spec.validate();
  Rng rng(mix_seed({spec.seed, 0x5359}));
  OneClassSplit split;
  split.category = spec.category;
  const std::string defect(defect_name(spec.defect));

  for (std::size_t i = 0; i < spec.n_train; ++i) {
    split.train.push_back(finish(spec, background(spec, rng)));
    split.train_paths.push_back("train/good/" + numbered(i, ""));
  }
  for (std::size_t i = 0; i < spec.n_test_normal; ++i) {
    TestItem item;
    item.image = finish(spec, background(spec, rng));
    item.mask = NdArray<float>({spec.height, spec.width}, 0.0f);
    item.path = "test/good/" + numbered(i, "");
    item.group = "good";
    split.test.push_back(std::move(item));
  }
  for (std::size_t i = 0; i < spec.n_test_anomalous; ++i) {
    std::vector<double> values = background(spec, rng);
    NdArray<float> mask = defect_mask(spec, rng);
    for (std::size_t p = 0; p < mask.size(); ++p)
      if (mask[p] > 0.5f)
        for (std::size_t k = 0; k < spec.channels; ++k) values[p * spec.channels + k] += spec.delta;
    TestItem item;
    item.image = finish(spec, values);
    item.mask = std::move(mask);
    item.label = 1;
    item.path = "test/" + defect + "/" + numbered(i, "");
    item.group = defect;
    split.test.push_back(std::move(item));
  }

  if (!out_dir) return split;
  const fs::path base = *out_dir / spec.category;
  make_dir(base / "train" / "good");
  make_dir(base / "test" / "good");
  if (spec.n_test_anomalous > 0) {
    make_dir(base / "test" / defect);
    make_dir(base / "ground_truth" / defect);
  }
  for (std::size_t i = 0; i < split.train.size(); ++i) write_png(base / split.train_paths[i], split.train[i]);
  std::size_t anomalous = 0;
  for (const auto& item : split.test) {
    write_png(base / item.path, item.image);
    if (item.label == 1) {
      Image m({spec.height, spec.width, 1}, std::vector<float>(item.mask->storage()));
      write_png(base / "ground_truth" / defect / numbered(anomalous++, "_mask"), m);
    }
  }
  const json manifest = {{"generator", "anovit synth"},
                         {"layout", "mvtec"},
                         {"spec", spec.to_json()},
                         {"counts",
                          {{"train", spec.n_train},
                           {"test_normal", spec.n_test_normal},
                           {"test_anomalous", spec.n_test_anomalous}}}};
  std::ofstream out(*out_dir / "manifest.json", std::ios::trunc);
  if (!out) throw IoError("cannot open " + (*out_dir / "manifest.json").string() + " for writing");
  out << manifest.dump(2) << "\n";
  if (!out) throw IoError("write failed: " + (*out_dir / "manifest.json").string());
  return split;
}

}  // namespace anovit
