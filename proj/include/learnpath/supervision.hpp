#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "learnpath/learning_path.hpp"
#include "learnpath/numerics.hpp"
#include "learnpath/toygauss.hpp"

namespace learnpath {

enum class Provenance { kOneHot, kSmoothed, kGroundTruth, kKdConverged, kEskd, kFilterKd, kCustom };

const char* to_string(Provenance p);
Provenance provenance_from_string(const std::string& s);

/// One supervision distribution per dataset sample; row n belongs to sample n.
struct TargetTable {
  DenseMatrix probs;
  Provenance provenance = Provenance::kCustom;

  std::size_t size() const noexcept { return probs.rows(); }
  std::size_t num_classes() const noexcept { return probs.cols(); }
  std::span<const double> row(std::size_t n) const { return probs.row(n); }
  /// Every row nonnegative and summing to one within tol.
  bool in_simplex(double tol = 1e-10) const;
};

enum class StopRule {
  kValidPatience,   // stop after `patience` epochs without a new best valid accuracy
  kTrainConverged,  // stop after `patience` consecutive epochs at training accuracy 1
  kFixedEpochs,     // always run max_epochs
};

struct TrainConfig {
  std::vector<std::size_t> hidden = {128, 128, 128};
  double learning_rate = 0.01;
  std::size_t max_epochs = 200;
  std::size_t patience = 10;
  std::uint64_t seed = 0;
  bool record_paths = false;
  Granularity path_granularity = Granularity::kPerVisit;
  double temperature = 1.0;
  double beta = 1.0;
  StopRule stop_rule = StopRule::kValidPatience;
  double output_init_scale = 0.1;
  /// 0 disables the parameter-space EMA tracker.
  double param_ema_alpha = 0.0;

  void validate() const;
};

/// Observation points inside the training loop.
struct TrainHooks {
  /// Called once per visited training sample with the prediction computed
  /// before that sample's SGD step.
  std::function<void(std::size_t sample, std::size_t step, std::span<const double> q)> on_visit;
  /// Called with epoch 0 before training and after every completed epoch.
  std::function<void(std::size_t epoch, const MlpModel& model)> on_epoch_end;
  /// Called after an epoch that set a new best validation accuracy.
  std::function<void(std::size_t epoch, const MlpModel& model)> on_new_best;
};

struct TrainResult {
  MlpModel initial_model;
  MlpModel final_model;
  MlpModel best_model;  // best validation accuracy, earliest epoch on ties
  std::vector<double> valid_accuracy;  // [e] = after epoch e+1
  std::vector<double> train_accuracy;
  std::size_t best_epoch = 0;
  std::size_t stop_epoch = 0;  // epochs completed
  std::size_t total_steps = 0;
  std::optional<PathStore> paths;
  std::optional<TargetTable> q_smooth;
  std::optional<MlpModel> param_ema_model;

  double best_valid_accuracy() const;
};

class TrainingDivergence : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

TargetTable make_onehot_targets(const ToyDataset& ds);
/// (1 − ε)·e_y + ε/K
TargetTable make_ls_targets(const ToyDataset& ds, double epsilon);
TargetTable make_gt_targets(const ToyDataset& ds);
/// Row n = perturb_target(p*_n) with a per-sample seed derived from `seed`.
TargetTable make_noisy_gt_targets(const ToyDataset& ds, double noise_scale, std::uint64_t seed);

struct KdLoss {
  double loss = 0.0;
  Vector grad_logits;
};

/// Tempered softmax softmax(z / τ).
Vector softmax_tempered(std::span<const double> logits, double temperature);
/// p^(1/τ) renormalized, i.e. the target distribution re-tempered at τ.
Vector temper_distribution(std::span<const double> p, double temperature);

/// Loss  β·(1/τ²)·H(q^τ, p_tar^τ) + (1−β)·H(q, e_y)  with H(a, b) = −Σ b log a,
/// and the closed-form logit gradient  β·(1/τ)·(q^τ − p_tar^τ) + (1−β)·(q − e_y).
/// The gradient is the derivative of the loss only at τ = 1 (or β = 0); for
/// other temperatures the soft term of the true derivative carries 1/τ³.
KdLoss kd_loss_and_grad(std::span<const double> logits, std::span<const double> p_tar,
                        std::size_t y, double temperature, double beta);

/// Per-sample SGD over the shuffled training split.
TrainResult train_model(const ToyDataset& ds, const TargetTable& targets,
                        const TrainConfig& config, const TrainHooks& hooks = {});

/// When the teaching table stops changing.
enum class FilterFreeze {
  kStopEpoch,  // table as of the last completed epoch
  kBestEpoch,  // table as of the best-validation epoch, the ESKD checkpoint
};

/// Filter-KD teacher: one-hot training while an EMA of each training sample's
/// pre-update prediction is kept in q_smooth.
TrainResult train_teacher_filterkd(const ToyDataset& ds, const TrainConfig& config,
                                   double alpha, const TrainHooks& hooks = {},
                                   FilterFreeze freeze = FilterFreeze::kStopEpoch);

/// Same training run, one q_smooth table per smoothing factor.
struct FilterKdTeacher {
  TrainResult result;
  std::vector<TargetTable> tables;  // aligned with alphas
};
FilterKdTeacher train_teacher_filterkd_multi(const ToyDataset& ds, const TrainConfig& config,
                                             std::span<const double> alphas,
                                             const TrainHooks& hooks = {},
                                             FilterFreeze freeze = FilterFreeze::kStopEpoch);

/// softmax(model(x_n)) for every dataset sample.
DenseMatrix predict_all(const MlpModel& model, const ToyDataset& ds);
double evaluate_accuracy(const MlpModel& model, const ToyDataset& ds, Split split);

TargetTable extract_eskd_targets(const TrainResult& result, const ToyDataset& ds);
TargetTable extract_kd_targets(const TrainResult& result, const ToyDataset& ds);

/// w_track ← (1 − α)·w_track + α·w_train, elementwise.
void param_ema_update(MlpModel& track, const MlpModel& train, double alpha);
MlpModel param_ema_tracker(const MlpModel& track, const MlpModel& train, double alpha);

/// CSV: index,k0..k{K-1},provenance in round-trip form.
void write_targets(const TargetTable& t, const std::filesystem::path& path);
TargetTable read_targets(const std::filesystem::path& path);

/// Text checkpoint: a "layer_sizes ..." line, then one parameter per line.
void write_checkpoint(const MlpModel& model, const std::filesystem::path& path);
MlpModel read_checkpoint(const std::filesystem::path& path);

}  // namespace learnpath
