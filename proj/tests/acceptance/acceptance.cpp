// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero when any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "anovit/cae.hpp"
#include "anovit/commands.hpp"
#include "anovit/conv_decoder.hpp"
#include "anovit/dataset.hpp"
#include "anovit/evaluation.hpp"
#include "anovit/init.hpp"
#include "anovit/model.hpp"
#include "anovit/scoring.hpp"
#include "anovit/training.hpp"
#include "anovit/vit_encoder.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace anovit;

namespace {

// Pinned tolerances and budgets.
constexpr double kGradcheckBudgetS = 120.0;
constexpr double kShapeBudgetS = 60.0;
constexpr double kScoreTol = 1e-6;
constexpr double kSmoothTol = 1e-6;
constexpr double kOverfitRatio = 0.10;
constexpr std::size_t kOverfitSteps = 500;
constexpr double kOverfitBudgetS = 300.0;
constexpr double kImageAurocMin = 0.90;
constexpr double kPixelAurocMin = 0.80;
constexpr double kControlLo = 0.35;
constexpr double kControlHi = 0.65;
constexpr double kSmokeBudgetS = 900.0;

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + what;
    }
  }
};

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
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

fs::path work_root() {
  auto dir = fs::temp_directory_path() / "anovit_acceptance";
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// ---------------------------------------------------------------------------

Outcome gradients() {
  Outcome o;
  const auto t0 = Clock::now();
  for (const char* model : {"anovit", "cae"})
    for (int bits : {32, 64}) {
      GradcheckArgs args;
      args.model = model;
      args.precision = bits;
      std::ostringstream log;
      const int code = cmd_gradcheck(args, log);
      o.require(code == kExitOk, std::string(model) + " " + std::to_string(bits) + "-bit exit " + std::to_string(code));
    }
  const double secs = since(t0);
  o.require(secs < kGradcheckBudgetS, fmt("took %.1fs", secs));
  o.detail += (o.detail.empty() ? "" : "; ") + fmt("%.1fs", secs);
  return o;
}

Outcome shapes() {
  Outcome o;
  const auto t0 = Clock::now();
  NoGradGuard<float> guard;
  for (const auto& enc : {EncoderConfig::desk(), EncoderConfig::full()}) {
    AnoVit<float> model(enc, DecoderConfig::default_for(enc), 1);
    NdArray<float> x({enc.image_h, enc.image_w, enc.channels}, 0.5f);
    const auto e = model.encode(x);
    const Shape want_e{enc.num_patches() + 1, enc.embed_dim};
    o.require(e.shape() == want_e, "E' shape for " + std::to_string(enc.image_h));
    o.require(model.reconstruct(x).shape() == x.shape(), "X-hat shape for " + std::to_string(enc.image_h));
  }
  const auto full = EncoderConfig::full();
  o.require(full.num_patches() == 576 && full.embed_dim == 768 && full.patch_size == 16 && full.heads == 8,
            "full geometry");
  o.require(DecoderConfig::default_for(full).blocks.size() == 6, "full decoder depth");
  const double secs = since(t0);
  o.require(secs < kShapeBudgetS, fmt("took %.1fs", secs));
  o.detail += (o.detail.empty() ? "" : "; ") + fmt("%.1fs", secs);
  return o;
}

double auroc_brute(const std::vector<double>& s, const std::vector<int>& l) {
  long long twice = 0, pos = 0, neg = 0;
  for (int v : l) (v ? pos : neg)++;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (l[i] == 1 && l[j] == 0) twice += s[i] > s[j] ? 2 : s[i] == s[j] ? 1 : 0;
  return double(twice) / double(2 * pos * neg);
}

Outcome auroc_oracle() {
  Outcome o;
  Rng rng(99);
  std::size_t mismatches = 0;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t n = 2 + std::size_t(uniform01(rng) * 499);
    // Coarse quantization forces ties.
    const double levels = 1 + std::floor(uniform01(rng) * 50);
    std::vector<double> s(n);
    std::vector<int> l(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = std::floor(uniform01(rng) * levels) / levels;
      l[i] = uniform01(rng) < 0.4 ? 1 : 0;
    }
    l[0] = 1;
    l[1] = 0;
    if (auroc(s, l) != auroc_brute(s, l)) ++mismatches;
  }
  o.require(mismatches == 0, std::to_string(mismatches) + " of 1000 instances differ");
  const std::vector<double> s{0.1, 0.4, 0.35, 0.8};
  const std::vector<int> l{0, 0, 1, 1};
  o.require(auroc(s, l) == 0.75, "fixed example");
  return o;
}

Outcome scoring() {
  Outcome o;
  Rng rng(5);
  const std::size_t h = 29, w = 37, c = 3;
  NdArray<float> x({h, w, c}), y({h, w, c});
  for (auto& v : x.data()) v = float(uniform01(rng));
  for (auto& v : y.data()) v = float(uniform01(rng));
  const auto m = score_map(x, y);
  double err = 0;
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      double acc = 0;
      for (std::size_t k = 0; k < c; ++k) {
        const double d = double(x[(i * w + j) * c + k]) - double(y[(i * w + j) * c + k]);
        acc += d * d;
      }
      err = std::max(err, std::abs(m.values[i * w + j] - std::sqrt(acc / double(c))));
    }
  o.require(err <= kScoreTol, fmt("score_map err %.3g", err));

  // Dense 2-D convolution with half-sample reflection.
  const double sigma = 4.0;
  const auto s = gaussian_smooth(m, sigma);
  const int r = int(std::ceil(3 * sigma));
  std::vector<double> g(2 * r + 1);
  double mass = 0;
  for (int t = -r; t <= r; ++t) mass += g[t + r] = std::exp(-double(t * t) / (2 * sigma * sigma));
  for (auto& v : g) v /= mass;
  auto reflect = [](long i, long n) {
    while (i < 0 || i >= n) i = i < 0 ? -i - 1 : 2 * n - i - 1;
    return std::size_t(i);
  };
  double serr = 0;
  for (long i = 0; i < long(h); ++i)
    for (long j = 0; j < long(w); ++j) {
      double acc = 0;
      for (int a = -r; a <= r; ++a)
        for (int b = -r; b <= r; ++b)
          acc += g[a + r] * g[b + r] * m.values[reflect(i + a, h) * w + reflect(j + b, w)];
      serr = std::max(serr, std::abs(s.values[std::size_t(i) * w + std::size_t(j)] - acc));
    }
  o.require(serr <= kSmoothTol, fmt("smooth err %.3g", serr));

  std::size_t violations = 0;
  for (int t = 0; t < 200; ++t) {
    ScoreMap rnd{NdArray<double>({16, 16})};
    for (auto& v : rnd.values.data()) v = uniform01(rng) * (t % 3 == 0 ? 10.0 : 1.0);
    if (anomaly_score(gaussian_smooth(rnd, 0.5 + (t % 8))) > anomaly_score(rnd)) ++violations;
  }
  o.require(violations == 0, std::to_string(violations) + " smoothed maxima exceed the raw max");
  return o;
}

Outcome overfit() {
  Outcome o;
  const auto t0 = Clock::now();
  const auto data = generate_synth(SynthSpec{}, std::nullopt);
  std::vector<NdArray<float>> eight(data.train.begin(), data.train.begin() + 8);
  const auto batch = stack_batch<float>(eight);
  for (int kind = 0; kind < 2; ++kind) {
    std::unique_ptr<ReconstructionModel<float>> model;
    if (kind == 0)
      model = std::make_unique<AnoVit<float>>(EncoderConfig::desk(), DecoderConfig::default_for(EncoderConfig::desk()), 7);
    else
      model = std::make_unique<ConvAutoencoder<float>>(CaeConfig::desk(), 7);
    Adam<float> adam(TrainConfig{}.adam());
    double first = 0;
    for (std::size_t s = 0; s < kOverfitSteps; ++s) {
      const double loss = train_step(*model, batch, adam, LossReduction::sum_per_image);
      if (s == 0) first = loss;
    }
    NoGradGuard<float> guard;
    const double last = reconstruction_loss_value(model->reconstruct(batch), batch, LossReduction::sum_per_image);
    const char* name = kind == 0 ? "anovit" : "cae";
    o.require(last <= kOverfitRatio * first, std::string(name) + fmt(" ratio %.4f", last / first));
    o.detail += (o.detail.empty() ? "" : "; ") + std::string(name) + fmt(" %.4f", last / first);
  }
  const double secs = since(t0);
  o.require(secs < kOverfitBudgetS, fmt("took %.1fs", secs));
  o.detail += fmt("; %.1fs", secs);
  return o;
}

struct SmokeRun {
  double image_auroc = -1;
  double pixel_auroc = -1;
  fs::path ckpt, maps, report;
};

// synth -> train (desk AnoViT, defaults) -> eval; every artifact under dir.
SmokeRun smoke_run(const fs::path& dir, double delta) {
  SmokeRun run;
  std::ostringstream log;
  SynthArgs synth;
  synth.out = dir / "data";
  synth.delta = delta;
  synth.seed = 7;
  if (cmd_synth(synth, log) != kExitOk) return run;

  std::ofstream(dir / "cfg.json") << json{{"model", "anovit"}, {"data", {{"category", "synth"}}}}.dump(2);
  TrainArgs train;
  train.config = dir / "cfg.json";
  train.data = dir / "data";
  train.out = run.ckpt = dir / "ckpt";
  train.quiet = true;
  if (cmd_train(train, log) != kExitOk) return run;

  EvalArgs eval;
  eval.checkpoints = {run.ckpt};
  eval.data = dir / "data";
  eval.category = "synth";
  eval.report = run.report = dir / "report.json";
  eval.maps_dir = run.maps = dir / "maps";
  eval.threads = 1;
  if (cmd_eval(eval, log) != kExitOk) return run;
  const auto report = json::parse(slurp(run.report));
  run.image_auroc = report.at("image_auroc").get<double>();
  run.pixel_auroc = report.at("pixel_auroc").get<double>();
  return run;
}

struct SmokeResults {
  SmokeRun first, second, control;
  double secs_first = 0;
};

SmokeResults smoke_all(const fs::path& root) {
  SmokeResults r;
  auto t0 = Clock::now();
  r.first = smoke_run(root / "run1", 0.4);
  r.secs_first = since(t0);
  r.control = smoke_run(root / "control", 0.0);
  r.second = smoke_run(root / "run2", 0.4);
  return r;
}

Outcome separability(const SmokeResults& r) {
  Outcome o;
  o.require(r.first.image_auroc >= kImageAurocMin, fmt("image %.3f", r.first.image_auroc));
  o.require(r.first.pixel_auroc >= kPixelAurocMin, fmt("pixel %.3f", r.first.pixel_auroc));
  o.require(r.control.image_auroc >= kControlLo && r.control.image_auroc <= kControlHi,
            fmt("control %.3f", r.control.image_auroc));
  o.require(r.secs_first < kSmokeBudgetS, fmt("took %.1fs", r.secs_first));
  if (o.pass)
    o.detail = fmt("image %.3f", r.first.image_auroc) + fmt(" pixel %.3f", r.first.pixel_auroc) +
               fmt(" control %.3f", r.control.image_auroc) + fmt(" %.1fs", r.secs_first);
  return o;
}

Outcome determinism(const SmokeResults& r) {
  Outcome o;
  if (r.first.image_auroc < 0 || r.second.image_auroc < 0) {
    o.require(false, "a run did not complete");
    return o;
  }
  o.require(tree(r.first.ckpt) == tree(r.second.ckpt), "checkpoints differ");
  o.require(tree(r.first.maps) == tree(r.second.maps), "score maps differ");
  o.require(slurp(r.first.report) == slurp(r.second.report), "report.json differs");
  return o;
}

Outcome structure() {
  Outcome o;
  {
    AnoVit<float> model(EncoderConfig::desk(), DecoderConfig::default_for(EncoderConfig::desk()), 5);
    NoGradGuard<float> guard;
    NdArray<float> x({32, 32, 1});
    Rng rng(6);
    for (auto& v : x.data()) v = float(uniform01(rng));
    auto e = model.encode(x).value();
    const auto before = model.decode_tokens(Var<float>::constant(e)).value();
    for (std::size_t k = 0; k < 64; ++k) e[k] = 1000.0f * float(k % 7) - 3000.0f;
    o.require(model.decode_tokens(Var<float>::constant(e)).value() == before, "cls row reaches the output");
  }
  {
    NdArray<float> e({17, 8});
    Rng rng(1);
    for (auto& v : e.data()) v = float(uniform01(rng));
    const auto f = rearrange_feature_map(Var<float>::constant(e)).value();
    bool exact = f.shape() == Shape{4, 4, 8};
    for (std::size_t t = 0; exact && t < 16; ++t)
      for (std::size_t k = 0; k < 8; ++k) exact = exact && f[t * 8 + k] == e[(1 + t) * 8 + k];
    o.require(exact, "rearrange round-trip");
  }
  {
    EncoderConfig cfg;
    cfg.image_h = cfg.image_w = 16;
    cfg.patch_size = 4;
    cfg.embed_dim = 8;
    cfg.heads = 2;
    cfg.depth = 2;
    ParameterStore<double> store;
    Rng rng(4);
    VitEncoder<double> enc(cfg, store, rng);
    enc.pos_embedding().value.fill(0);
    NdArray<double> img({16, 16, 1});
    for (auto& v : img.data()) v = uniform01(rng);
    Rng prng(6);
    const auto perm = shuffled_indices(16, prng);
    NdArray<double> permuted({16, 16, 1});
    for (std::size_t t = 0; t < 16; ++t)
      for (std::size_t y = 0; y < 4; ++y)
        for (std::size_t x = 0; x < 4; ++x)
          permuted[((t / 4) * 4 + y) * 16 + (t % 4) * 4 + x] =
              img[((perm[t] / 4) * 4 + y) * 16 + (perm[t] % 4) * 4 + x];
    const auto e = enc.encode(img).value();
    const auto ep = enc.encode(permuted).value();
    double err = 0;
    for (std::size_t k = 0; k < 8; ++k) err = std::max(err, std::abs(ep[k] - e[k]));
    for (std::size_t t = 0; t < 16; ++t)
      for (std::size_t k = 0; k < 8; ++k) err = std::max(err, std::abs(ep[(1 + t) * 8 + k] - e[(1 + perm[t]) * 8 + k]));
    o.require(err < 1e-12, fmt("permutation covariance err %.3g", err));
  }
  return o;
}

}  // namespace

int main() {
  const auto root = work_root();
  bool all = true;
  auto report = [&](int n, const Outcome& o) {
    all = all && o.pass;
    std::printf("criterion %d: %s%s%s\n", n, o.pass ? "PASS" : "FAIL", o.detail.empty() ? "" : "  ", o.detail.c_str());
    std::fflush(stdout);
  };
  report(1, gradients());
  report(2, shapes());
  report(3, auroc_oracle());
  report(4, scoring());
  report(5, overfit());
  const auto smoke = smoke_all(root);
  report(6, separability(smoke));
  report(7, determinism(smoke));
  report(8, structure());
  fs::remove_all(root);
  return all ? 0 : 1;
}
