#include "anovit/commands.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>

#include "anovit/init.hpp"
#include "anovit/run_config.hpp"

namespace anovit {

namespace fs = std::filesystem;
using nlohmann::json;

int exit_code_for(std::exception_ptr error, std::ostream& err) {
  try {
    std::rethrow_exception(error);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create " + path.parent_path().string() + ": " + ec.message());
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

std::string fmt(double v, const char* spec = "%.6g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

// Model and config restored from a checkpoint directory.
struct Restored {
  RunConfig config;
  Checkpoint checkpoint;
  std::unique_ptr<ReconstructionModel<float>> model;
};

Restored restore(const fs::path& dir) {
  Restored r;
  r.checkpoint = load_checkpoint(dir);
  r.config = RunConfig::from_json(r.checkpoint.config);
  if (model_kind_name(r.config.model) != r.checkpoint.model_kind)
    throw FormatError(dir.string() + ": manifest model '" + r.checkpoint.model_kind + "' disagrees with its config");
  r.model = r.config.build_model();
  restore_parameters(r.checkpoint, r.model->parameters());
  return r;
}

void check_cae_parity(const RunConfig& config) {
  if (config.model != ModelKind::cae) return;
  RunConfig vit = config;
  vit.model = ModelKind::anovit;
  if (!vit.violations().empty()) return;
  const std::size_t cae_params = config.build_model()->parameters().scalar_count();
  const std::size_t vit_params = vit.build_model()->parameters().scalar_count();
  check_parameter_parity(vit_params, cae_params);
}

std::string dataset_name(const fs::path& root) {
  fs::path p = root;
  if (p.filename().empty()) p = p.parent_path();
  return p.filename().string();
}

}  // namespace

int cmd_train(const TrainArgs& args, std::ostream& out) {
  RunConfig config = RunConfig::load(args.config);
  if (args.data) config.data_root = args.data->string();
  if (args.out) config.output_dir = args.out->string();
  if (args.category) config.category = *args.category;
  if (args.epochs) config.train.epochs = *args.epochs;
  if (config.output_dir.empty()) throw ConfigError("no output directory (output.dir or --out)");
  if (auto v = config.violations(); !v.empty()) {
    std::string msg = "invalid configuration after overrides:";
    for (const auto& s : v) msg += "\n  - " + s;
    throw ConfigError(msg);
  }
  check_cae_parity(config);

  const OneClassSplit split = load_split(config);
  auto model = config.build_model();
  const fs::path out_dir = config.output_dir;

  std::optional<Checkpoint> resume;
  if (args.resume && fs::exists(out_dir / "manifest.json")) {
    resume = load_checkpoint(out_dir);
    out << "resuming from epoch " << resume->epoch << " (step " << resume->step << ")\n";
  }

  FitOptions options;
  options.checkpoint_dir = out_dir;
  options.run_config = config.canonical();
  options.config_digest = config.digest();
  options.resume = resume ? &*resume : nullptr;
  options.on_epoch = [&](const EpochStats& s) {
    if (!args.quiet)
      out << "epoch " << s.epoch << "/" << config.train.epochs << "  step " << s.step << "  loss "
          << fmt(s.mean_loss) << "\n"
          << std::flush;
  };
  out << model_kind_name(config.model) << ": " << model->parameters().scalar_count() << " parameters, "
      << split.train.size() << " training images, config " << config.digest() << "\n";
  const Checkpoint ckpt = fit(split.train, *model, config.train, options);

  std::string csv = "epoch,loss\n";
  for (std::size_t i = 0; i < ckpt.loss_history.size(); ++i)
    csv += std::to_string(i + 1) + "," + fmt(ckpt.loss_history[i], "%.9g") + "\n";
  write_text(out_dir / "loss.csv", csv);
  out << "checkpoint written to " << out_dir.string() << " (epoch " << ckpt.epoch << ", step " << ckpt.step << ")\n";
  return kExitOk;
}

int cmd_eval(const EvalArgs& args, std::ostream& out) {
  if (args.checkpoints.empty()) throw ConfigError("at least one --ckpt is required");
  if (args.task != "det" && args.task != "loc" && args.task != "both")
    throw ConfigError("--task must be det, loc or both");
  const bool want_det = args.task != "loc";
  const bool want_loc = args.task != "det";

  std::vector<EvalReport> reports;
  for (const auto& ckpt_dir : args.checkpoints) {
    Restored r = restore(ckpt_dir);
    RunConfig& config = r.config;
    config.data_root = args.data.string();
    if (args.category) config.category = *args.category;
    if (args.layout) config.data_layout = *args.layout;
    if (args.sigma) config.sigma = *args.sigma;
    if (args.no_smooth) config.smooth = false;
    if (auto v = config.violations(); !v.empty()) throw ConfigError("invalid evaluation overrides: " + v.front());

    const OneClassSplit split = load_split(config);
    if (want_loc && !split.has_masks())
      throw ConfigError("dataset " + args.data.string() +
                        " has no pixel-level ground truth; localization (--task loc) needs masks");

    EvalOptions options = config.eval_options();
    options.threads = std::max<std::size_t>(1, args.threads);
    const TestScores scores = score_test_set(*r.model, split.test, options);

    EvalReport report;
    report.model = std::string(model_kind_name(config.model));
    report.dataset = dataset_name(args.data);
    report.category = split.category;
    report.n_normal = split.n_normal();
    report.n_anomalous = split.n_anomalous();
    report.sigma = config.smooth ? config.sigma : 0.0;
    report.config_digest = r.checkpoint.config_digest;
    if (want_det) {
      report.image_auroc = evaluate_detection(scores);
      report.image_auroc_unsmoothed = auroc(scores.image_scores_unsmoothed, scores.labels);
    }
    if (want_loc) report.pixel_auroc = evaluate_localization(scores, split.test, options);
    reports.push_back(report);

    if (args.maps_dir) {
      const fs::path dir = *args.maps_dir / report.model;
      fs::create_directories(dir);
      // Image paths are relative to the dataset root so the index does not
      // depend on where the data lives.
      json index = json::array();
      for (std::size_t i = 0; i < split.test.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "%04zu.f32", i);
        export_score_raw(scores.maps[i], dir / name);
        index.push_back({{"file", name},
                         {"image", fs::path(split.test[i].path).lexically_relative(args.data).generic_string()},
                         {"label", split.test[i].label},
                         {"height", scores.maps[i].height()},
                         {"width", scores.maps[i].width()}});
      }
      write_text(dir / "index.json", index.dump(2) + "\n");
    }
  }

  out << format_report_table(reports);
  if (args.report) {
    json j;
    if (reports.size() == 1) {
      j = reports.front().to_json();
    } else {
      j = json::array();
      for (const auto& r : reports) j.push_back(r.to_json());
    }
    write_text(*args.report, j.dump(2) + "\n");
  }
  return kExitOk;
}

int cmd_score(const ScoreArgs& args, std::ostream& out) {
  Restored r = restore(args.checkpoint);
  const RunConfig& config = r.config;
  Image image = convert_channels(read_image(args.image), config.channels);
  image = resize_bilinear(image, config.image_h, config.image_w);
  const NdArray<float> recon = r.model->reconstruct(image);
  ScoreMap map = score_map(image, recon);
  const double raw_max = anomaly_score(map);
  const double sigma = args.sigma.value_or(config.sigma);
  if (!args.no_smooth && config.smooth) map = gaussian_smooth(map, sigma);
  if (args.out_map) export_score_png(map, *args.out_map);
  if (args.out_raw) export_score_raw(map, *args.out_raw);
  out << "s_a " << fmt(anomaly_score(map), "%.9g") << "\n";
  out << "s_a_unsmoothed " << fmt(raw_max, "%.9g") << "\n";
  return kExitOk;
}

int cmd_synth(const SynthArgs& args, std::ostream& out) {
  SynthSpec spec;
  if (args.spec) {
    std::ifstream in(*args.spec);
    if (!in) throw IoError("cannot open spec " + args.spec->string());
    try {
      spec = SynthSpec::from_json(json::parse(in));
    } catch (const json::parse_error& e) {
      throw ConfigError(args.spec->string() + ": " + e.what());
    }
  }
  if (args.delta) spec.delta = *args.delta;
  if (args.seed) spec.seed = *args.seed;
  const OneClassSplit split = generate_synth(spec, args.out);
  out << "wrote " << (args.out / spec.category).string() << ": " << split.train.size() << " train, "
      << split.n_normal() << " normal + " << split.n_anomalous() << " anomalous test images\n";
  return kExitOk;
}

namespace {

template <typename T>
GradCheckReport run_gradcheck(const RunConfig& config, const GradcheckArgs& args, double tolerance) {
  auto model = config.build_model_as<T>();
  Rng rng(args.seed);
  NdArray<T> batch({std::max<std::size_t>(1, args.batch), config.image_h, config.image_w, config.channels});
  for (auto& v : batch.data()) v = static_cast<T>(uniform01(rng));
  GradCheckOptions options;
  options.tolerance = tolerance;
  options.samples_per_parameter = args.samples;
  options.directions = args.directions;
  options.seed = args.seed;
  options.eps = args.eps.value_or(1e-5);
  if constexpr (std::is_same_v<T, float>) {
    auto reference = config.build_model_as<double>();
    return check_reconstruction_gradients(*model, batch, config.train.reduction, options, reference.get());
  } else {
    return check_reconstruction_gradients(*model, batch, config.train.reduction, options);
  }
}

}  // namespace

int cmd_gradcheck(const GradcheckArgs& args, std::ostream& out) {
  RunConfig config = args.config ? RunConfig::load(*args.config) : RunConfig{};
  if (args.model) config.model = parse_model_kind(*args.model);
  if (auto v = config.violations(); !v.empty()) throw ConfigError("invalid configuration: " + v.front());
  if (args.precision != 32 && args.precision != 64) throw ConfigError("--precision must be 32 or 64");
  const double tolerance = args.tolerance.value_or(args.precision == 32 ? 1e-3 : 1e-5);

  const GradCheckReport report = args.precision == 32 ? run_gradcheck<float>(config, args, tolerance)
                                                      : run_gradcheck<double>(config, args, tolerance);
  for (const auto& p : report.parameters) {
    char line[256];
    std::snprintf(line, sizeof line, "%s  %-40s probes %3zu  skipped %3zu  max_rel_err %.3e\n",
                  p.passed ? "PASS" : "FAIL", p.name.c_str(), p.probes, p.skipped, p.max_rel_err);
    out << line;
  }
  out << (report.passed() ? "PASS" : "FAIL") << "  " << model_kind_name(config.model) << " " << args.precision
      << "-bit, " << report.parameters.size() << " parameter groups, max_rel_err " << fmt(report.max_rel_err(), "%.3e")
      << " (tolerance " << fmt(tolerance, "%.0e") << ")\n";
  return report.passed() ? kExitOk : kExitFailed;
}

}  // namespace anovit
