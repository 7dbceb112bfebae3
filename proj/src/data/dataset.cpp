#include <algorithm>
#include <cctype>

#include "anovit/dataset.hpp"
#include "anovit/init.hpp"

namespace anovit {

namespace fs = std::filesystem;

std::size_t OneClassSplit::n_normal() const {
  return static_cast<std::size_t>(std::count_if(test.begin(), test.end(), [](const auto& t) { return t.label == 0; }));
}

std::size_t OneClassSplit::n_anomalous() const { return test.size() - n_normal(); }

bool OneClassSplit::has_masks() const {
  return !test.empty() && std::all_of(test.begin(), test.end(), [](const auto& t) { return t.mask.has_value(); });
}

namespace {

bool is_image_file(const fs::path& p) {
  std::string e = p.extension().string();
  for (auto& ch : e) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return e == ".png" || e == ".pgm" || e == ".ppm" || e == ".pnm";
}

std::vector<fs::path> image_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && is_image_file(entry.path())) out.push_back(entry.path());
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::string> subdirs(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::vector<std::string> out;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_directory()) out.push_back(entry.path().filename().string());
  std::sort(out.begin(), out.end());
  return out;
}

Image load_for_model(const fs::path& path, const LoadOptions& options) {
  Image img = convert_channels(read_image(path), options.channels);
  return resize_bilinear(img, options.height, options.width);
}

std::optional<fs::path> find_mask(const fs::path& gt_dir, const fs::path& image_path) {
  const std::string stem = image_path.stem().string() + "_mask";
  for (const char* ext : {".png", ".pgm", ".ppm", ".pnm"}) {
    fs::path candidate = gt_dir / (stem + ext);
    if (fs::exists(candidate)) return candidate;
  }
  return std::nullopt;
}

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (const auto& s : items) out += (out.empty() ? "" : ", ") + s;
  return out.empty() ? "(none)" : out;
}

}  // namespace

OneClassSplit load_mvtec_layout(const fs::path& root, const std::string& category, const LoadOptions& options) {
  const fs::path base = root / category;
  if (!fs::is_directory(base))
    throw IoError("category directory " + base.string() + " not found; available: " +
                  (fs::is_directory(root) ? join(subdirs(root)) : std::string("(root missing)")));
  OneClassSplit split;
  split.category = category;
  for (const auto& p : image_files(base / "train" / "good")) {
    split.train.push_back(load_for_model(p, options));
    split.train_paths.push_back(p.string());
  }
  if (split.train.empty()) throw IoError("no training images in " + (base / "train" / "good").string());

  for (const auto& type : subdirs(base / "test")) {
    const bool good = type == "good";
    for (const auto& p : image_files(base / "test" / type)) {
      TestItem item;
      item.path = p.string();
      item.group = type;
      item.label = good ? 0 : 1;
      const Image raw = convert_channels(read_image(p), options.channels);
      item.image = resize_bilinear(raw, options.height, options.width);
      if (good) {
        item.mask = NdArray<float>({options.height, options.width}, 0.0f);
      } else {
        const auto mask_path = find_mask(base / "ground_truth" / type, p);
        if (!mask_path)
          throw IoError("missing ground-truth mask for " + p.string() + " (expected " +
                        (base / "ground_truth" / type / (p.stem().string() + "_mask.png")).string() + ")");
        Image mask = convert_channels(read_image(*mask_path), 1);
        if (mask.dim(0) != raw.dim(0) || mask.dim(1) != raw.dim(1))
          throw DimensionError("mask " + mask_path->string() + " is " + shape_str({mask.dim(0), mask.dim(1)}) +
                               " but image " + p.string() + " is " + shape_str({raw.dim(0), raw.dim(1)}));
        item.mask = binarize_mask(resize_bilinear(mask, options.height, options.width));
      }
      split.test.push_back(std::move(item));
    }
  }
  if (split.test.empty()) throw IoError("no test images under " + (base / "test").string());
  return split;
}

OneClassSplit load_oneclass_split(const fs::path& root, const std::string& normal_class, const LoadOptions& options,
                                  std::uint64_t seed, double train_fraction) {
  if (!(train_fraction > 0.0 && train_fraction <= 1.0)) throw ConfigError("train_fraction must be in (0, 1]");
  const bool split_layout = fs::is_directory(root / "train") && fs::is_directory(root / "test");
  const fs::path train_root = split_layout ? root / "train" : root;
  const fs::path test_root = split_layout ? root / "test" : root;

  const auto classes = subdirs(train_root);
  if (std::find(classes.begin(), classes.end(), normal_class) == classes.end())
    throw ConfigError("unknown class '" + normal_class + "'; available: " + join(classes));

  const auto normal_files = image_files(train_root / normal_class);
  if (normal_files.empty()) throw IoError("normal class '" + normal_class + "' has no training images");
  Rng rng(mix_seed({seed, 0x4F43}));
  const auto order = shuffled_indices(normal_files.size(), rng);
  const auto n_train = std::max<std::size_t>(
      1, static_cast<std::size_t>(train_fraction * static_cast<double>(normal_files.size())));

  OneClassSplit split;
  split.category = normal_class;
  std::vector<std::size_t> held_out;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const fs::path& p = normal_files[order[i]];
    if (i < n_train) {
      split.train.push_back(load_for_model(p, options));
      split.train_paths.push_back(p.string());
    } else if (split_layout) {
      split.validation.push_back(load_for_model(p, options));
    } else {
      held_out.push_back(order[i]);
    }
  }
  std::sort(held_out.begin(), held_out.end());

  auto add_test = [&](const fs::path& p, const std::string& cls) {
    TestItem item;
    item.image = load_for_model(p, options);
    item.label = cls == normal_class ? 0 : 1;
    item.path = p.string();
    item.group = cls;
    split.test.push_back(std::move(item));
  };
  for (const auto& cls : subdirs(test_root)) {
    if (!split_layout && cls == normal_class) {
      for (std::size_t idx : held_out) add_test(normal_files[idx], cls);
      continue;
    }
    for (const auto& p : image_files(test_root / cls)) add_test(p, cls);
  }
  return split;
}

}  // namespace anovit
