#include <algorithm>
#include <cstdio>
#include <sstream>
#include <thread>

#include "anovit/evaluation.hpp"
#include "anovit/init.hpp"
#include "anovit/training.hpp"

namespace anovit {

std::string_view pixel_mode_name(PixelAurocMode m) { return m == PixelAurocMode::global ? "global" : "per_image"; }

PixelAurocMode parse_pixel_mode(std::string_view name) {
  if (name == "global") return PixelAurocMode::global;
  if (name == "per_image") return PixelAurocMode::per_image;
  throw ConfigError("unknown pixel AUROC mode '" + std::string(name) + "' (expected global or per_image)");
}

namespace {

void score_range(ReconstructionModel<float>& model, std::span<const TestItem> test, const EvalOptions& options,
                 std::size_t begin, std::size_t end, TestScores& out) {
  const std::size_t batch = std::max<std::size_t>(1, options.batch_size);
  for (std::size_t start = begin; start < end; start += batch) {
    const std::size_t stop = std::min(end, start + batch);
    std::vector<NdArray<float>> images;
    for (std::size_t i = start; i < stop; ++i) images.push_back(test[i].image);
    NdArray<float> stacked = stack_batch<float>(images);
    NdArray<float> recon = model.reconstruct(stacked);
    const Shape& s = images.front().shape();
    const std::size_t per = shape_size(s);
    for (std::size_t i = start; i < stop; ++i) {
      const std::size_t b = i - start;
      NdArray<float> r(s, std::vector<float>(recon.ptr() + b * per, recon.ptr() + (b + 1) * per));
      ScoreMap raw = score_map(test[i].image, r);
      out.image_scores_unsmoothed[i] = anomaly_score(raw);
      out.maps[i] = options.smooth ? gaussian_smooth(raw, options.sigma) : std::move(raw);
      out.image_scores[i] = anomaly_score(out.maps[i]);
    }
  }
}

}  // namespace

TestScores score_test_set(ReconstructionModel<float>& model, std::span<const TestItem> test,
                          const EvalOptions& options) {
  if (test.empty()) throw ConfigError("test set is empty");
  TestScores out;
  const std::size_t n = test.size();
  out.maps.resize(n);
  out.image_scores.resize(n);
  out.image_scores_unsmoothed.resize(n);
  for (const auto& item : test) out.labels.push_back(item.label);

  const std::size_t threads = std::clamp<std::size_t>(options.threads, 1, n);
  if (threads == 1) {
    score_range(model, test, options, 0, n, out);
    return out;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  const std::size_t chunk = (n + threads - 1) / threads;
  for (std::size_t t = 0; t < threads; ++t) {
    const std::size_t b = t * chunk, e = std::min(n, b + chunk);
    if (b >= e) break;
    pool.emplace_back([&, t, b, e] {
      try {
        score_range(model, test, options, b, e, out);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& err : errors)
    if (err) std::rethrow_exception(err);
  return out;
}

double evaluate_detection(const TestScores& scores) { return auroc(scores.image_scores, scores.labels); }

double evaluate_localization(const TestScores& scores, std::span<const TestItem> test, const EvalOptions& options) {
  if (scores.maps.size() != test.size()) throw DimensionError("score maps and test items differ in count");
  for (const auto& item : test) {
    if (!item.mask) throw ConfigError("localization needs a ground-truth mask for every test image; missing for " +
                                      (item.path.empty() ? std::string("an in-memory item") : item.path));
  }
  for (std::size_t i = 0; i < test.size(); ++i) {
    const NdArray<float>& mask = *test[i].mask;
    if (mask.rank() != 2 || mask.dim(0) != scores.maps[i].height() || mask.dim(1) != scores.maps[i].width())
      throw DimensionError("mask " + shape_str(mask.shape()) + " does not match score map " +
                           shape_str(scores.maps[i].values.shape()) + " for " + test[i].path);
  }

  if (options.pixel_mode == PixelAurocMode::per_image) {
    double sum = 0.0;
    std::size_t used = 0;
    for (std::size_t i = 0; i < test.size(); ++i) {
      const NdArray<float>& mask = *test[i].mask;
      std::vector<int> labels(mask.size());
      for (std::size_t p = 0; p < mask.size(); ++p) labels[p] = mask[p] > 0.5f ? 1 : 0;
      const auto pos = std::count(labels.begin(), labels.end(), 1);
      if (pos == 0 || pos == static_cast<std::ptrdiff_t>(labels.size())) continue;
      sum += auroc(scores.maps[i].values.data(), labels);
      ++used;
    }
    if (used == 0) throw ConfigError("per-image pixel AUROC: no test mask contains both classes");
    return sum / static_cast<double>(used);
  }

  std::size_t total = 0;
  for (const auto& m : scores.maps) total += m.values.size();
  std::vector<double> pooled;
  std::vector<int> labels;
  pooled.reserve(total);
  labels.reserve(total);
  for (std::size_t i = 0; i < test.size(); ++i) {
    const NdArray<float>& mask = *test[i].mask;
    for (std::size_t p = 0; p < mask.size(); ++p) {
      pooled.push_back(scores.maps[i].values[p]);
      labels.push_back(mask[p] > 0.5f ? 1 : 0);
    }
  }
  if (options.pixel_budget > 0 && total > options.pixel_budget) {
    Rng rng(mix_seed({options.seed, 0x5058}));
    std::vector<std::size_t> idx = shuffled_indices(total, rng);
    idx.resize(options.pixel_budget);
    std::sort(idx.begin(), idx.end());
    std::vector<double> s;
    std::vector<int> l;
    for (std::size_t k : idx) {
      s.push_back(pooled[k]);
      l.push_back(labels[k]);
    }
    return auroc(s, l);
  }
  return auroc(pooled, labels);
}

nlohmann::json EvalReport::to_json() const {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  return {{"model", model},
          {"dataset", dataset},
          {"category", category},
          {"image_auroc", opt(image_auroc)},
          {"image_auroc_unsmoothed", opt(image_auroc_unsmoothed)},
          {"pixel_auroc", opt(pixel_auroc)},
          {"n_normal", n_normal},
          {"n_anomalous", n_anomalous},
          {"sigma", sigma},
          {"config_digest", config_digest}};
}

namespace {

std::string fmt(const std::optional<double>& v) {
  if (!v) return "-";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", *v);
  return buf;
}

std::string improvement(const std::optional<double>& base, const std::optional<double>& ours) {
  if (!base || !ours || *base == 0.0) return "-";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%+.3f%%", 100.0 * (*ours - *base) / *base);
  return buf;
}

}  // namespace

std::string format_report_table(std::span<const EvalReport> reports) {
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof line, "%-10s %-16s %-10s %-10s %-9s %-11s\n", "model", "category", "det AUROC",
                "loc AUROC", "n_normal", "n_anomalous");
  os << line;
  const EvalReport* cae = nullptr;
  const EvalReport* vit = nullptr;
  for (const auto& r : reports) {
    const std::string label = r.model == "cae" ? "l2-CAE*" : r.model;
    std::snprintf(line, sizeof line, "%-10s %-16s %-10s %-10s %-9zu %-11zu\n", label.c_str(), r.category.c_str(),
                  fmt(r.image_auroc).c_str(), fmt(r.pixel_auroc).c_str(), r.n_normal, r.n_anomalous);
    os << line;
    if (r.model == "cae") cae = &r;
    if (r.model == "anovit") vit = &r;
  }
  if (cae && vit) {
    std::snprintf(line, sizeof line, "%-10s %-16s %-10s %-10s\n", "improv.", "",
                  improvement(cae->image_auroc, vit->image_auroc).c_str(),
                  improvement(cae->pixel_auroc, vit->pixel_auroc).c_str());
    os << line;
  }
  if (cae) os << "* compact convolutional stand-in for the l2-CAE baseline, not its reference layer table\n";
  return os.str();
}

}  // namespace anovit
