#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "anovit/dataset.hpp"
#include "anovit/model.hpp"
#include "anovit/scoring.hpp"

namespace anovit {

// Probability that a random anomalous score exceeds a random normal one,
// ties counted 1/2; computed exactly from midranks. labels: 1 anomalous, 0 normal.
double auroc(std::span<const double> scores, std::span<const int> labels);

enum class PixelAurocMode { global, per_image };

std::string_view pixel_mode_name(PixelAurocMode m);
PixelAurocMode parse_pixel_mode(std::string_view name);

struct EvalOptions {
  double sigma = 4.0;
  bool smooth = true;  // for both the localization maps and s_a
  PixelAurocMode pixel_mode = PixelAurocMode::global;
  std::size_t pixel_budget = 0;  // 0 keeps every pixel
  std::uint64_t seed = 7;
  std::size_t batch_size = 16;
  std::size_t threads = 1;
};

struct TestScores {
  std::vector<ScoreMap> maps;  // smoothed when options.smooth
  std::vector<double> image_scores;
  std::vector<double> image_scores_unsmoothed;
  std::vector<int> labels;
};

// Reconstructs every test image and derives score maps and s_a. With more
// than one thread, images are split into contiguous chunks; results do not
// depend on the thread count.
TestScores score_test_set(ReconstructionModel<float>& model, std::span<const TestItem> test,
                          const EvalOptions& options);

double evaluate_detection(const TestScores& scores);

// Pools every pixel score with its mask label (global) or averages per-image
// AUROCs over images whose mask holds both classes (per_image).
double evaluate_localization(const TestScores& scores, std::span<const TestItem> test, const EvalOptions& options);

struct EvalReport {
  std::string model;
  std::string dataset;
  std::string category;
  std::optional<double> image_auroc;
  std::optional<double> image_auroc_unsmoothed;
  std::optional<double> pixel_auroc;
  std::size_t n_normal = 0;
  std::size_t n_anomalous = 0;
  double sigma = 0.0;
  std::string config_digest;

  nlohmann::json to_json() const;
};

// Fixed-width table, one row per report. When both a cae and an anovit
// report are present, a relative-improvement row follows.
std::string format_report_table(std::span<const EvalReport> reports);

}  // namespace anovit
