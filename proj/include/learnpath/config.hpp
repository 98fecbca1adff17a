#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "learnpath/supervision.hpp"
#include "learnpath/toygauss.hpp"

namespace learnpath {

enum class ExperimentKind { kGenData, kCorrelate, kPaths, kDistanceGap, kRecovery, kDistill, kNtkVerify, kZigzag };

const char* to_string(ExperimentKind k);
ExperimentKind experiment_kind_from_string(const std::string& s);

/// Raised for malformed or inconsistent configuration; maps to exit code 1.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::kGenData;
  std::uint64_t master_seed = 0;

  GaussianSpec gaussian;
  std::size_t num_samples = 10000;
  SplitRatios split;
  /// Optional dataset written by gen-data; otherwise one is generated.
  std::optional<std::filesystem::path> dataset_csv;
  std::optional<std::filesystem::path> dataset_header;

  TrainConfig train;
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3};

  // correlate
  std::vector<double> noise_grid;
  double ls_epsilon = 0.1;
  /// Students share the teacher's initialization seed.
  bool shared_student_init = true;

  // distill / recovery / zigzag / gen-data
  double flip_ratio = 0.0;
  std::vector<double> flip_grid = {0.2};
  std::vector<double> alpha_grid = {0.01, 0.05, 0.1, 0.2, 0.5, 1.0};
  double filter_alpha = 0.05;
  FilterFreeze filter_freeze = FilterFreeze::kStopEpoch;

  // metrics
  std::size_t ece_bins = 10;
  double loss_bound = 10.0;

  // ntk-verify
  std::size_t ntk_pairs = 64;
  double ntk_eta = 1e-2;
  std::size_t ntk_levels = 4;
  std::size_t ntk_checkpoints = 5;

  std::filesystem::path output_dir = "out";
  std::size_t jobs = 1;

  /// Throws ConfigError.
  void validate() const;
  /// Every key with its effective value, sorted, one "key=value" per entry.
  std::vector<std::pair<std::string, std::string>> entries() const;
  /// entries() as "# key=value" lines.
  std::string header_comment() const;
};

/// Per-kind defaults before any file keys are applied.
ExperimentConfig default_config(ExperimentKind kind);

/// Flat "key = value" text; '#' starts a comment, blank lines are ignored.
/// The "kind" key is required unless `kind_hint` is given. Unknown keys,
/// duplicates and malformed values throw ConfigError.
ExperimentConfig parse_config(const std::string& text,
                              std::optional<ExperimentKind> kind_hint = std::nullopt);
ExperimentConfig load_config(const std::filesystem::path& path,
                             std::optional<ExperimentKind> kind_hint = std::nullopt);

/// Log-spaced values from lo to hi inclusive.
std::vector<double> log_grid(double lo, double hi, std::size_t count);

}  // namespace learnpath
