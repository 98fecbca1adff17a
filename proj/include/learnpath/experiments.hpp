#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "learnpath/config.hpp"
#include "learnpath/metrics.hpp"
#include "learnpath/ntkcheck.hpp"
#include "learnpath/pathtrace.hpp"
#include "learnpath/supervision.hpp"
#include "learnpath/toygauss.hpp"

namespace learnpath {

/// Seed of entry `s` of the seed list under a master seed.
std::uint64_t run_seed(std::uint64_t master, std::uint64_t s);

/// Loads the configured dataset or generates one from `seed`, then applies
/// label flips when `flip_ratio` > 0. Throws ConfigError when a loaded
/// dataset already carries flips and more are requested.
ToyDataset build_dataset(const ExperimentConfig& cfg, std::uint64_t seed, double flip_ratio);

/// Runs fn(0..n-1) on up to `jobs` threads. Results must be written to
/// per-index slots; the first exception is rethrown after all workers join.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn);

struct TestMetrics {
  double accuracy = 0.0;
  double ece = 0.0;
};
TestMetrics evaluate_test(const MlpModel& model, const ToyDataset& ds, std::size_t ece_bins);

// ---- correlate ----

struct CorrelateRun {
  std::string supervision;  // noisy_gt, onehot, smoothed, ground_truth, kd_converged, eskd
  double noise_scale = 0.0;
  std::uint64_t seed = 0;
  double l2_gap = 0.0;
  double test_accuracy = 0.0;
  double test_ece = 0.0;
  bool diverged = false;
  std::string error;
};

struct CorrelateResult {
  std::vector<CorrelateRun> runs;
  std::size_t completed = 0;
  std::optional<double> rho_accuracy;
  std::optional<double> rho_ece;
  double p_accuracy = 1.0;
  double p_ece = 1.0;
  /// Test accuracy per baseline across seeds, in a fixed baseline order.
  std::vector<std::pair<std::string, MeanSe>> baseline_accuracy;
};

CorrelateResult run_correlate(const ExperimentConfig& cfg);

// ---- distill ----

struct DistillRun {
  double flip_ratio = 0.0;
  std::string method;  // onehot, eskd, filter_kd, ground_truth
  double alpha = 0.0;  // filter_kd only
  std::uint64_t seed = 0;
  double test_accuracy = 0.0;
  double test_ece = 0.0;
  bool diverged = false;
  std::string error;
};

struct DistillSummaryRow {
  double flip_ratio = 0.0;
  std::string method;
  std::string label;  // e.g. "filter_kd(0.05)", "filter_kd(1,eskd-equivalent)"
  double alpha = 0.0;
  MeanSe accuracy;
  MeanSe ece;
  std::size_t runs = 0;
};

struct DistillResult {
  std::vector<DistillRun> runs;
  std::vector<DistillSummaryRow> summary;
  /// Accuracies per seed (same seed order) for one method at one flip ratio;
  /// alpha selects the Filter-KD column.
  std::vector<double> accuracies(double flip_ratio, const std::string& method,
                                 double alpha = 0.0) const;
};

DistillResult run_distill(const ExperimentConfig& cfg);

// ---- recovery ----

struct RecoveryRow {
  std::size_t epoch = 0;
  double raw = 0.0;        // per-visit predictions seen during the epoch
  double filtered = 0.0;   // EMA of those predictions
  double epoch_end = 0.0;  // fresh forward pass after the epoch
  double valid_accuracy = 0.0;
  double train_accuracy = 0.0;
};

struct RecoveryResult {
  std::vector<RecoveryRow> rows;  // rows[0] is the initial model
  std::size_t best_epoch = 0;
  std::size_t num_flipped = 0;
  std::size_t num_classes = 0;
  double initial = 0.0;
  double raw_peak = 0.0;
  double filtered_peak = 0.0;
  double converged = 0.0;
  double final_train_accuracy = 0.0;
};

RecoveryResult run_recovery(const ExperimentConfig& cfg);

// ---- paths ----

struct SelectedPath {
  double quantile = 0.0;
  std::size_t sample_index = 0;
  double base_difficulty = 0.0;
  double end_distance_to_label = 0.0;
  double min_distance_to_pstar = 0.0;
  double final_distance_to_pstar = 0.0;
};

struct PathsResult {
  PathStore store;
  std::vector<SelectedPath> selected;  // ascending quantile
  std::vector<ProjectionRow> projections;
  bool all_inside_triangle = true;
  /// Easiest selected sample ends within 0.05 of its label.
  bool easiest_reaches_label = false;
  /// Hardest selected sample passes closer to p* than where it ends.
  bool hardest_zigzags = false;
};

PathsResult run_paths(const ExperimentConfig& cfg);

// ---- zigzag ----

struct ZigzagRecord {
  std::size_t sample_index = 0;
  double base_difficulty = 0.0;
  double score = 0.0;
  bool flipped = false;
};

struct ZigzagResult {
  std::vector<ZigzagRecord> records;
  std::optional<double> rho;
  double p_value = 1.0;
  double mean_flipped = 0.0;
  double mean_clean = 0.0;
  std::size_t path_length = 0;
};

ZigzagResult run_zigzag(const ExperimentConfig& cfg);

// ---- distance-gap ----

struct DistanceGapSnapshot {
  std::string supervision;
  std::string stage;  // init, best, final
  std::vector<DistanceGapRecord> records;
  double mean_dist_to_pstar = 0.0;
  double mean_dist_to_target = 0.0;
};

struct DistanceGapResult {
  std::vector<DistanceGapSnapshot> snapshots;
};

DistanceGapResult run_distance_gap(const ExperimentConfig& cfg);

// ---- ntk-verify ----

struct TraceRow {
  std::size_t checkpoint = 0;  // epochs trained
  std::size_t sample_index = 0;
  double trace_a = 0.0;
};

struct NtkResult {
  ResidualScaling scaling;
  std::vector<double> eta_grid;
  std::vector<SimilarityRecord> similarity;
  std::size_t similarity_anchor = 0;
  std::optional<double> similarity_rho;  // Spearman(cosine, tr K⁰)
  std::vector<TraceRow> traces;
  bool ratios_ok = false;
  bool traces_ok = false;
  bool passed() const { return ratios_ok && traces_ok; }
};

NtkResult run_ntk_verify(const ExperimentConfig& cfg);

// ---- subcommands: validate, run, write CSVs into cfg.output_dir ----

/// Exit status of a subcommand: 0 success, 1 invalid config, 2 runtime failure.
int cmd_gen_data(const ExperimentConfig& cfg);
int cmd_correlate(const ExperimentConfig& cfg);
int cmd_paths(const ExperimentConfig& cfg);
int cmd_distance_gap(const ExperimentConfig& cfg);
int cmd_recovery(const ExperimentConfig& cfg);
int cmd_distill(const ExperimentConfig& cfg);
int cmd_ntk_verify(const ExperimentConfig& cfg);
int cmd_zigzag(const ExperimentConfig& cfg);
/// Dispatches on cfg.kind.
int run_experiment(const ExperimentConfig& cfg);

}  // namespace learnpath
