#pragma once

// Subcommand implementations behind the CLI. Each returns a process exit
// code; configuration problems surface as ConfigError (exit 1) and runtime
// failures as other anovit::Error types (exit 2) via exit_code_for().

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace anovit {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitRuntime = 2, kExitFailed = 3 };

// Maps the in-flight exception to an exit code and writes its message.
int exit_code_for(std::exception_ptr error, std::ostream& err);

struct TrainArgs {
  std::filesystem::path config;
  std::optional<std::filesystem::path> data;
  std::optional<std::filesystem::path> out;
  std::optional<std::string> category;
  std::optional<std::size_t> epochs;
  bool resume = false;
  bool quiet = false;
};
int cmd_train(const TrainArgs& args, std::ostream& out);

struct EvalArgs {
  std::vector<std::filesystem::path> checkpoints;
  std::filesystem::path data;
  std::string task = "both";  // det | loc | both
  std::optional<std::filesystem::path> report;
  std::optional<std::string> category;
  std::optional<std::string> layout;
  std::optional<double> sigma;
  bool no_smooth = false;
  std::optional<std::filesystem::path> maps_dir;  // raw f32 score maps per test image
  std::size_t threads = 1;
};
int cmd_eval(const EvalArgs& args, std::ostream& out);

struct ScoreArgs {
  std::filesystem::path checkpoint;
  std::filesystem::path image;
  std::optional<std::filesystem::path> out_map;
  std::optional<std::filesystem::path> out_raw;
  std::optional<double> sigma;
  bool no_smooth = false;
};
int cmd_score(const ScoreArgs& args, std::ostream& out);

struct SynthArgs {
  std::optional<std::filesystem::path> spec;
  std::filesystem::path out;
  std::optional<double> delta;
  std::optional<std::uint64_t> seed;
};
int cmd_synth(const SynthArgs& args, std::ostream& out);

struct GradcheckArgs {
  std::optional<std::filesystem::path> config;
  std::optional<std::string> model;
  int precision = 32;
  std::optional<double> tolerance;  // default 1e-3 (32-bit) / 1e-5 (64-bit)
  std::optional<double> eps;
  std::size_t samples = 4;
  std::size_t directions = 2;
  std::size_t batch = 2;
  std::uint64_t seed = 11;
};
int cmd_gradcheck(const GradcheckArgs& args, std::ostream& out);

}  // namespace anovit
