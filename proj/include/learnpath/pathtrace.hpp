#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <vector>

#include "learnpath/learning_path.hpp"
#include "learnpath/numerics.hpp"
#include "learnpath/supervision.hpp"
#include "learnpath/toygauss.hpp"

namespace learnpath {

/// out[0] = in[0]; out[t] = (1 − α)·out[t−1] + α·in[t]. Steps are kept.
LearningPath ema_filter_path(const LearningPath& path, double alpha);

struct PlanarPoint {
  double x = 0.0;
  double y = 0.0;
};

/// Barycentric map of a 3-class distribution onto the triangle
/// (0,0), (1,0), (1/2, √3/2).
PlanarPoint barycentric_project(std::span<const double> q);

/// ||e_y − p*||₂, in [0, √2]. The normalized variant divides by √2.
double base_difficulty(std::size_t y, std::span<const double> p_star);
double base_difficulty_normalized(std::size_t y, std::span<const double> p_star);

/// Largest off-label column sum Q_i = Σ_t q_i^t of a raw path.
double zigzag_score(const LearningPath& path, std::size_t y);
/// All column sums Q_0..Q_{K−1}.
Vector path_column_sums(const LearningPath& path);

struct DistanceGapRecord {
  std::size_t sample_index = 0;
  double base_difficulty = 0.0;
  double dist_to_pstar = 0.0;   // ||q − p*||₂
  double dist_to_target = 0.0;  // ||q − p_tar||₂
};

/// One record per training sample for the model's current predictions.
std::vector<DistanceGapRecord> distance_gap_snapshot(const MlpModel& model, const ToyDataset& ds,
                                                     const TargetTable& targets);
/// Same, from precomputed predictions (row n ↔ sample n).
std::vector<DistanceGapRecord> distance_gap_snapshot(const DenseMatrix& predictions,
                                                     const ToyDataset& ds,
                                                     const TargetTable& targets);

/// Fraction of flipped samples whose argmax prediction is the original label.
/// predictions row n belongs to sample n. Throws on an empty flip set.
double recovery_fraction(const DenseMatrix& predictions, std::span<const std::size_t> flipped,
                         std::span<const std::size_t> original_labels);

/// (sample_index, step, q_0..q_{K−1})
void write_paths_csv(const PathStore& store, const std::filesystem::path& path);

struct ProjectionRow {
  std::size_t sample_index = 0;
  std::size_t step = 0;
  PlanarPoint point;
  bool filtered = false;
};
std::vector<ProjectionRow> project_path(const LearningPath& path, bool filtered);
/// (sample_index, step, px, py, filtered)
std::string projection_csv(std::span<const ProjectionRow> rows);

}  // namespace learnpath
