#include "anovit/run_config.hpp"

#include <cstdio>
#include <fstream>
#include <set>

namespace anovit {

namespace fs = std::filesystem;
using nlohmann::json;

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

namespace {

// Collects every problem instead of stopping at the first.
class Reader {
 public:
  std::vector<std::string> errors;

  const json* section(const json& root, const char* key, std::initializer_list<const char*> known) {
    if (!root.contains(key)) return nullptr;
    const json& s = root.at(key);
    if (!s.is_object()) {
      errors.push_back(std::string("'") + key + "' must be an object");
      return nullptr;
    }
    check_keys(s, key, known);
    return &s;
  }

  void check_keys(const json& obj, const std::string& where, std::initializer_list<const char*> known) {
    const std::set<std::string> allowed(known.begin(), known.end());
    for (const auto& [k, _] : obj.items())
      if (!allowed.count(k)) errors.push_back("unknown key '" + (where.empty() ? k : where + "." + k) + "'");
  }

  template <typename V>
  void get(const json* obj, const std::string& where, const char* key, V& dst) {
    if (!obj || !obj->contains(key)) return;
    const json& v = obj->at(key);
    bool ok = true;
    if constexpr (std::is_same_v<V, bool>) {
      ok = v.is_boolean();
    } else if constexpr (std::is_integral_v<V>) {
      // Non-negative integers only; 3.0 or -1 are rejected.
      ok = v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
    } else if constexpr (std::is_floating_point_v<V>) {
      ok = v.is_number();
    } else {
      ok = v.is_string();
    }
    if (!ok) {
      errors.push_back("'" + (where.empty() ? std::string() : where + ".") + key + "' has the wrong type");
      return;
    }
    dst = v.get<V>();
  }

  template <typename Spec>
  void blocks(const json* obj, const std::string& where, const char* key, std::vector<Spec>& dst) {
    if (!obj || !obj->contains(key)) return;
    const json& arr = obj->at(key);
    const std::string path = where + "." + key;
    if (!arr.is_array()) {
      errors.push_back("'" + path + "' must be an array");
      return;
    }
    dst.clear();
    for (std::size_t i = 0; i < arr.size(); ++i) {
      const std::string p = path + "[" + std::to_string(i) + "]";
      if (!arr[i].is_object()) {
        errors.push_back("'" + p + "' must be an object");
        continue;
      }
      check_keys(arr[i], p, {"out_channels", "kernel", "stride", "padding"});
      Spec s;
      get(&arr[i], p, "out_channels", s.out_channels);
      get(&arr[i], p, "kernel", s.kernel);
      get(&arr[i], p, "stride", s.stride);
      get(&arr[i], p, "padding", s.padding);
      dst.push_back(s);
    }
  }

  template <typename F>
  void guard(F&& f) {
    try {
      f();
    } catch (const ConfigError& e) {
      errors.push_back(e.what());
    }
  }
};

template <typename Spec>
json blocks_json(const std::vector<Spec>& blocks) {
  json arr = json::array();
  for (const auto& b : blocks)
    arr.push_back({{"out_channels", b.out_channels}, {"kernel", b.kernel}, {"stride", b.stride}, {"padding", b.padding}});
  return arr;
}

[[noreturn]] void fail(const std::vector<std::string>& errors) {
  std::string msg = "invalid configuration (" + std::to_string(errors.size()) + " problem" +
                    (errors.size() == 1 ? "" : "s") + "):";
  for (const auto& e : errors) msg += "\n  - " + e;
  throw ConfigError(msg);
}

}  // namespace

RunConfig RunConfig::from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("configuration must be a JSON object");
  RunConfig c;
  Reader r;
  r.check_keys(j, "", {"model", "image", "encoder", "decoder", "cae", "train", "scoring", "data", "output"});

  std::string model(model_kind_name(c.model));
  r.get(&j, "", "model", model);
  r.guard([&] { c.model = parse_model_kind(model); });

  const json* image = r.section(j, "image", {"height", "width", "channels"});
  r.get(image, "image", "height", c.image_h);
  r.get(image, "image", "width", c.image_w);
  r.get(image, "image", "channels", c.channels);

  const json* enc = r.section(j, "encoder", {"patch_size", "embed_dim", "heads", "depth", "mlp_ratio", "ln_eps"});
  r.get(enc, "encoder", "patch_size", c.encoder.patch_size);
  r.get(enc, "encoder", "embed_dim", c.encoder.embed_dim);
  r.get(enc, "encoder", "heads", c.encoder.heads);
  r.get(enc, "encoder", "depth", c.encoder.depth);
  r.get(enc, "encoder", "mlp_ratio", c.encoder.mlp_ratio);
  r.get(enc, "encoder", "ln_eps", c.encoder.ln_eps);

  const json* dec = r.section(j, "decoder", {"num_blocks", "blocks"});
  r.get(dec, "decoder", "num_blocks", c.decoder_num_blocks);
  r.blocks(dec, "decoder", "blocks", c.decoder_blocks);

  const json* cae = r.section(j, "cae", {"encoder", "decoder"});
  r.blocks(cae, "cae", "encoder", c.cae_encoder);
  r.blocks(cae, "cae", "decoder", c.cae_decoder);

  const json* tr = r.section(j, "train", {"epochs", "batch_size", "learning_rate", "beta1", "beta2", "adam_eps", "seed",
                                          "loss_reduction", "augment", "augmentation", "checkpoint_every"});
  r.get(tr, "train", "epochs", c.train.epochs);
  r.get(tr, "train", "batch_size", c.train.batch_size);
  r.get(tr, "train", "learning_rate", c.train.learning_rate);
  r.get(tr, "train", "beta1", c.train.beta1);
  r.get(tr, "train", "beta2", c.train.beta2);
  r.get(tr, "train", "adam_eps", c.train.adam_eps);
  r.get(tr, "train", "seed", c.train.seed);
  std::string reduction(loss_reduction_name(c.train.reduction));
  r.get(tr, "train", "loss_reduction", reduction);
  r.guard([&] { c.train.reduction = parse_loss_reduction(reduction); });
  r.get(tr, "train", "augment", c.train.augment);
  r.get(tr, "train", "checkpoint_every", c.train.checkpoint_every);
  if (tr) {
    const json* aug =
        r.section(*tr, "augmentation", {"hflip_prob", "vflip_prob", "max_rotation_deg", "max_translation"});
    AugmentConfig& a = c.train.augmentation;
    r.get(aug, "train.augmentation", "hflip_prob", a.hflip_prob);
    r.get(aug, "train.augmentation", "vflip_prob", a.vflip_prob);
    r.get(aug, "train.augmentation", "max_rotation_deg", a.max_rotation_deg);
    r.get(aug, "train.augmentation", "max_translation", a.max_translation);
  }

  const json* sc = r.section(j, "scoring", {"sigma", "smooth", "pixel_mode", "pixel_budget"});
  r.get(sc, "scoring", "sigma", c.sigma);
  r.get(sc, "scoring", "smooth", c.smooth);
  std::string mode(pixel_mode_name(c.pixel_mode));
  r.get(sc, "scoring", "pixel_mode", mode);
  r.guard([&] { c.pixel_mode = parse_pixel_mode(mode); });
  r.get(sc, "scoring", "pixel_budget", c.pixel_budget);

  const json* data = r.section(j, "data", {"root", "layout", "category", "train_fraction"});
  r.get(data, "data", "root", c.data_root);
  r.get(data, "data", "layout", c.data_layout);
  r.get(data, "data", "category", c.category);
  r.get(data, "data", "train_fraction", c.train_fraction);

  const json* out = r.section(j, "output", {"dir"});
  r.get(out, "output", "dir", c.output_dir);

  // Fields that failed to parse keep their defaults, so the invariant checks
  // still run on a well-formed object.
  for (auto& v : c.violations()) r.errors.push_back(std::move(v));
  if (!r.errors.empty()) fail(r.errors);
  return c;
}

RunConfig RunConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return from_json(j);
}

EncoderConfig RunConfig::encoder_config() const {
  EncoderConfig e = encoder;
  e.image_h = image_h;
  e.image_w = image_w;
  e.channels = channels;
  return e;
}

DecoderConfig RunConfig::decoder_config() const {
  const EncoderConfig e = encoder_config();
  DecoderConfig d = DecoderConfig::default_for(e, decoder_num_blocks);
  if (!decoder_blocks.empty()) d.blocks = decoder_blocks;
  return d;
}

CaeConfig RunConfig::cae_config() const {
  CaeConfig cfg = CaeConfig::desk(image_h, image_w, channels);
  if (!cae_encoder.empty()) cfg.encoder = cae_encoder;
  if (!cae_decoder.empty()) cfg.decoder = cae_decoder;
  return cfg;
}

EvalOptions RunConfig::eval_options() const {
  EvalOptions o;
  o.sigma = sigma;
  o.smooth = smooth;
  o.pixel_mode = pixel_mode;
  o.pixel_budget = pixel_budget;
  o.seed = train.seed;
  return o;
}

std::vector<std::string> RunConfig::violations() const {
  std::vector<std::string> out;
  auto add = [&](std::vector<std::string> v, const char* prefix) {
    for (auto& s : v) out.push_back(prefix + s);
  };
  if (model == ModelKind::anovit) {
    const EncoderConfig e = encoder_config();
    auto ev = e.violations();
    const bool encoder_ok = ev.empty();
    add(std::move(ev), "encoder: ");
    if (decoder_num_blocks == 0) out.push_back("decoder.num_blocks must be >= 1");
    if (encoder_ok && decoder_num_blocks > 0) {
      try {
        add(decoder_config().violations(e.grid_side()), "decoder: ");
      } catch (const Error& err) {
        out.push_back(std::string("decoder: ") + err.what());
      }
    }
  } else {
    try {
      add(cae_config().violations(), "cae: ");
    } catch (const Error& err) {
      out.push_back(std::string("cae: ") + err.what());
    }
  }
  add(train.violations(), "");
  if (!(sigma >= 0.0)) out.push_back("scoring.sigma must be >= 0");
  if (data_layout != "mvtec" && data_layout != "oneclass")
    out.push_back("data.layout must be 'mvtec' or 'oneclass'");
  if (!(train_fraction > 0.0 && train_fraction <= 1.0)) out.push_back("data.train_fraction must be in (0, 1]");
  return out;
}

json RunConfig::canonical() const {
  const EncoderConfig e = encoder_config();
  json j = {
      {"model", model_kind_name(model)},
      {"image", {{"height", image_h}, {"width", image_w}, {"channels", channels}}},
      {"train",
       {{"epochs", train.epochs},
        {"batch_size", train.batch_size},
        {"learning_rate", train.learning_rate},
        {"beta1", train.beta1},
        {"beta2", train.beta2},
        {"adam_eps", train.adam_eps},
        {"seed", train.seed},
        {"loss_reduction", loss_reduction_name(train.reduction)},
        {"augment", train.augment},
        {"augmentation",
         {{"hflip_prob", train.augmentation.hflip_prob},
          {"vflip_prob", train.augmentation.vflip_prob},
          {"max_rotation_deg", train.augmentation.max_rotation_deg},
          {"max_translation", train.augmentation.max_translation}}},
        {"checkpoint_every", train.checkpoint_every}}},
      {"scoring",
       {{"sigma", sigma}, {"smooth", smooth}, {"pixel_mode", pixel_mode_name(pixel_mode)}, {"pixel_budget", pixel_budget}}},
  };
  if (model == ModelKind::anovit) {
    j["encoder"] = {{"patch_size", e.patch_size}, {"embed_dim", e.embed_dim}, {"heads", e.heads},
                    {"depth", e.depth},           {"mlp_ratio", e.mlp_ratio}, {"ln_eps", e.ln_eps}};
    j["decoder"] = {{"num_blocks", decoder_num_blocks}, {"blocks", blocks_json(decoder_config().blocks)}};
  } else {
    const CaeConfig cae = cae_config();
    j["cae"] = {{"encoder", blocks_json(cae.encoder)}, {"decoder", blocks_json(cae.decoder)}};
  }
  return j;
}

json RunConfig::to_json() const {
  json j = canonical();
  j["data"] = {{"root", data_root}, {"layout", data_layout}, {"category", category}, {"train_fraction", train_fraction}};
  j["output"] = {{"dir", output_dir}};
  return j;
}

std::string RunConfig::digest() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(canonical().dump())));
  return buf;
}

template <typename T>
std::unique_ptr<ReconstructionModel<T>> RunConfig::build_model_as() const {
  if (model == ModelKind::anovit) {
    const EncoderConfig e = encoder_config();
    return std::make_unique<AnoVit<T>>(e, decoder_config(), train.seed);
  }
  return std::make_unique<ConvAutoencoder<T>>(cae_config(), train.seed);
}

template std::unique_ptr<ReconstructionModel<float>> RunConfig::build_model_as<float>() const;
template std::unique_ptr<ReconstructionModel<double>> RunConfig::build_model_as<double>() const;

std::unique_ptr<ReconstructionModel<float>> RunConfig::build_model() const { return build_model_as<float>(); }

OneClassSplit load_split(const RunConfig& config) {
  if (config.data_root.empty()) throw ConfigError("no data root given (data.root or --data)");
  if (config.data_layout == "oneclass")
    return load_oneclass_split(config.data_root, config.category, config.load_options(), config.train.seed,
                               config.train_fraction);
  return load_mvtec_layout(config.data_root, config.category, config.load_options());
}

}  // namespace anovit
