#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "hydravit/config.hpp"

namespace hydravit {

/// Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

inline constexpr const char* kOutputRootEnv = "HYDRAVIT_OUTPUT_ROOT";

struct RunConfig {
  std::string command;  // train, eval, predict, synth, ablate
  std::string config_path;
  std::string preset = "reference";  // reference or synthetic, used when no config file is given
  std::string output_dir;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
  bool resume = false;

  // eval
  std::string pred_path;
  std::string labels_path;
  std::string tie_mode = "literal";
  std::string score_column = "weighted_score";

  // predict
  std::string checkpoint;
  std::vector<std::string> images;
  std::string manifest;
  int top_k = 3;
  double threshold = 0.5;
  bool saliency = false;

  // synth
  std::int64_t count = 0;  // 0: synthetic_train + synthetic_test

  // ablate
  std::vector<std::string> variants;
};

struct ParseResult {
  /// Set when parsing already decided the outcome (help or usage error).
  std::optional<int> exit_code;
  RunConfig config;
  std::string message;
};

ParseResult parse_args(int argc, const char* const* argv);

/// File or preset, then --set overrides, then --seed. Throws ConfigError.
ExperimentConfig effective_config(const RunConfig& run);

/// Output directory from the flag, else $HYDRAVIT_OUTPUT_ROOT, else ./hydravit_out.
std::string resolve_output_dir(const RunConfig& run);

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace hydravit
