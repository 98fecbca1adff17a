#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "learnpath/numerics.hpp"
#include "learnpath/supervision.hpp"
#include "learnpath/toygauss.hpp"

namespace learnpath {

struct EceConfig {
  std::size_t num_bins = 10;
};

/// Fraction of rows whose argmax (lowest index on ties) equals the label.
double accuracy(const DenseMatrix& preds, std::span<const std::size_t> labels);

/// Σ_m |B_m|/n·|acc(B_m) − conf(B_m)| with confidence max_k q_k and bins
/// ((m−1)/M, m/M]; confidence 0 lands in the first bin.
double ece(const DenseMatrix& preds, std::span<const std::size_t> labels, EceConfig cfg = {});
/// 1-based bin of a confidence value under the convention above.
std::size_t ece_bin(double confidence, std::size_t num_bins);

enum class GapNorm { kL1, kL2 };

/// Sample mean of ||p_tar − p*|| over the given rows.
double mean_gap(const TargetTable& targets, const DenseMatrix& p_stars,
                std::span<const std::size_t> rows, GapNorm norm);

/// Σ p_i log(p_i / q_i) with 0·log 0 = 0. Returns +∞ when q_i = 0 < p_i.
double kl_divergence(std::span<const double> p, std::span<const double> q);

/// Loss of predicting distribution q when the label is k.
using LabelLoss = std::function<double(std::size_t k, std::span<const double> q)>;

/// min(−log q_k, ℓ)
LabelLoss clipped_cross_entropy(double bound);

struct RiskEstimate {
  double empirical = 0.0;  // (1/N) Σ L(y_n, f(x_n))
  double target = 0.0;     // (1/N) Σ p_tar(x_n)ᵀ L(f(x_n))
  double target_variance = 0.0;  // Var_n[p_tar(x_n)ᵀ L(f(x_n))]
};

RiskEstimate risk_estimates(const MlpModel& model, const ToyDataset& ds,
                            std::span<const std::size_t> rows, const TargetTable& targets,
                            const LabelLoss& loss);

struct BoundReport {
  double loss_bound = 0.0;
  std::size_t num_classes = 0;
  double variance_term = 0.0;  // (1/N)·Var[p_tarᵀ L]; 0 unless filled from a model
  double xi_l2 = 0.0;
  double xi_l1 = 0.0;
  double xi_kl_fwd_sq = 0.0;
  double xi_kl_fwd = 0.0;
  double xi_kl_rev_sq = 0.0;
  double xi_kl_rev = 0.0;
  double xi_jeffreys = 0.0;
};

/// The seven bias-term candidates of the risk-estimate variance bound, with
/// KL_fwd = KL(p_tar ‖ p*) and KL_rev = KL(p* ‖ p_tar).
BoundReport xi_bounds(std::span<const Vector> targets, std::span<const Vector> p_stars,
                      double loss_bound, std::size_t num_classes);
/// Rows of the tables restricted to `rows`.
BoundReport xi_bounds(const TargetTable& targets, const DenseMatrix& p_stars,
                      std::span<const std::size_t> rows, double loss_bound);

/// Pearson correlation of average (fractional) ranks. nullopt when either
/// input is constant.
std::optional<double> spearman(std::span<const double> xs, std::span<const double> ys);
/// Ranks 1..n with ties averaged.
Vector fractional_ranks(std::span<const double> v);

/// Two-sided permutation p-value for a Spearman coefficient.
double spearman_permutation_pvalue(std::span<const double> xs, std::span<const double> ys,
                                   std::size_t shuffles, std::uint64_t seed);

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;  // sample std / √n; 0 for n < 2
};
MeanSe mean_and_se(std::span<const double> v);

}  // namespace learnpath
