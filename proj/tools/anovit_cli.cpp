#include <iostream>

#include "CLI11.hpp"
#include "anovit/commands.hpp"
#include "anovit/kernels.hpp"

using namespace anovit;

int main(int argc, char** argv) {
  CLI::App app{"AnoViT and l2-CAE reconstruction anomaly detection"};
  app.require_subcommand(1);

  std::size_t threads = 1;
  std::string isa = "auto";
  app.add_option("--threads", threads, "Worker threads for evaluation (1 = deterministic single-threaded path)")
      ->check(CLI::PositiveNumber);
  app.add_option("--isa", isa, "Kernel variant")->check(CLI::IsMember({"auto", "scalar", "avx2"}));

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Train a model on the normal images of a dataset");
  train_cmd->add_option("--config", train.config, "Run configuration (JSON)")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--data", train.data, "Dataset root (overrides data.root)");
  train_cmd->add_option("--out", train.out, "Checkpoint directory (overrides output.dir)");
  train_cmd->add_option("--category", train.category, "Category / normal class (overrides data.category)");
  train_cmd->add_option("--epochs", train.epochs, "Override train.epochs");
  train_cmd->add_flag("--resume", train.resume, "Continue from the checkpoint in the output directory");
  train_cmd->add_flag("--quiet", train.quiet, "Suppress per-epoch lines");

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "Image- and pixel-level AUROC on the test split");
  eval_cmd->add_option("--ckpt", eval.checkpoints, "Checkpoint directory (repeatable)")->required();
  eval_cmd->add_option("--data", eval.data, "Dataset root")->required();
  eval_cmd->add_option("--task", eval.task, "det, loc or both")->check(CLI::IsMember({"det", "loc", "both"}));
  eval_cmd->add_option("--report", eval.report, "Write report JSON here");
  eval_cmd->add_option("--category", eval.category, "Category / normal class");
  eval_cmd->add_option("--layout", eval.layout, "mvtec or oneclass")->check(CLI::IsMember({"mvtec", "oneclass"}));
  eval_cmd->add_option("--sigma", eval.sigma, "Gaussian smoothing sigma in pixels")->check(CLI::NonNegativeNumber);
  eval_cmd->add_flag("--no-smooth", eval.no_smooth, "Disable smoothing for s_a and localization");
  eval_cmd->add_option("--maps-dir", eval.maps_dir, "Export every test score map as raw f32");

  ScoreArgs score;
  auto* score_cmd = app.add_subcommand("score", "Score map and anomaly score for one image");
  score_cmd->add_option("--ckpt", score.checkpoint, "Checkpoint directory")->required();
  score_cmd->add_option("--image", score.image, "Input image (PNG/PGM/PPM)")->required()->check(CLI::ExistingFile);
  score_cmd->add_option("--out-map", score.out_map, "16-bit PNG score map (sidecar JSON written beside it)");
  score_cmd->add_option("--out-raw", score.out_raw, "Raw little-endian f32 score map");
  score_cmd->add_option("--sigma", score.sigma, "Gaussian smoothing sigma in pixels")->check(CLI::NonNegativeNumber);
  score_cmd->add_flag("--no-smooth", score.no_smooth, "Disable smoothing");

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic defect dataset in MVTec layout");
  synth_cmd->add_option("--spec", synth.spec, "Synth spec (JSON); defaults if omitted")->check(CLI::ExistingFile);
  synth_cmd->add_option("--out", synth.out, "Output root")->required();
  synth_cmd->add_option("--delta", synth.delta, "Override defect intensity delta");
  synth_cmd->add_option("--seed", synth.seed, "Override seed");

  GradcheckArgs grad;
  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference check of the training loss gradients");
  grad_cmd->add_option("--config", grad.config, "Run configuration (JSON); desk defaults if omitted")
      ->check(CLI::ExistingFile);
  grad_cmd->add_option("--model", grad.model, "anovit or cae")->check(CLI::IsMember({"anovit", "cae"}));
  grad_cmd->add_option("--precision", grad.precision, "32 or 64")->check(CLI::IsMember({32, 64}));
  grad_cmd->add_option("--tol", grad.tolerance, "Relative-error tolerance");
  grad_cmd->add_option("--eps", grad.eps, "Finite-difference step")->check(CLI::PositiveNumber);
  grad_cmd->add_option("--samples", grad.samples, "Elementwise probes per parameter (0 = all)");
  grad_cmd->add_option("--directions", grad.directions, "Directional probes per parameter");
  grad_cmd->add_option("--seed", grad.seed, "Probe and input seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (isa == "scalar") kernels::select_isa(kernels::Isa::scalar);
    if (isa == "avx2") kernels::select_isa(kernels::Isa::avx2);
    eval.threads = threads;
    if (*train_cmd) return cmd_train(train, std::cout);
    if (*eval_cmd) return cmd_eval(eval, std::cout);
    if (*score_cmd) return cmd_score(score, std::cout);
    if (*synth_cmd) return cmd_synth(synth, std::cout);
    if (*grad_cmd) return cmd_gradcheck(grad, std::cout);
  } catch (...) {
    return exit_code_for(std::current_exception(), std::cerr);
  }
  return kExitUsage;
}
