#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "learnpath/numerics.hpp"
#include "learnpath/toygauss.hpp"

namespace learnpath {

/// ∂q/∂z = diag(q) − q qᵀ.
DenseMatrix softmax_jacobian(std::span<const double> q);
/// 1 − Σ q_i²
double softmax_jacobian_trace(std::span<const double> q);

/// Empirical NTK (∇_w z(x_o)) (∇_w z(x_u))ᵀ, K × K.
DenseMatrix empirical_ntk(const MlpModel& model, std::span<const double> x_o,
                          std::span<const double> x_u);
DenseMatrix empirical_ntk(const DenseMatrix& jac_o, const DenseMatrix& jac_u);

/// First-order change of q(x_o): η·A·K·(p_tar_u − q_u).
Vector predicted_delta_q(double eta, const DenseMatrix& a, const DenseMatrix& kmat,
                         std::span<const double> p_tar_u, std::span<const double> q_u);

/// q(x_o) after one SGD step on (x_u, p_tar_u) with cross-entropy, minus before.
/// Throws std::runtime_error when the step produces non-finite values.
Vector actual_delta_q(const MlpModel& model, std::span<const double> x_o,
                      std::span<const double> x_u, std::span<const double> p_tar_u, double eta);

struct DecompositionRecord {
  std::size_t pair_id = 0;
  std::size_t x_o_index = 0;
  std::size_t x_u_index = 0;
  std::size_t step = 0;
  double eta = 0.0;
  DenseMatrix a_matrix;
  DenseMatrix k_matrix;
  Vector predicted;
  Vector actual;
  double residual_norm = 0.0;
};

struct NtkPair {
  std::size_t x_o_index = 0;
  std::size_t x_u_index = 0;
  Vector x_o;
  Vector x_u;
  Vector p_tar_u;
};

DecompositionRecord decompose_step(const MlpModel& model, const NtkPair& pair, double eta,
                                   std::size_t pair_id = 0);

struct ResidualRow {
  double eta = 0.0;
  double median_residual = 0.0;
};

struct ResidualScaling {
  std::vector<ResidualRow> rows;  // same order as the η grid
  std::vector<DecompositionRecord> records;
  /// median(η_i) / median(η_{i+1})
  std::vector<double> ratios() const;
};

/// η_grid must be sorted descending.
ResidualScaling residual_scaling_test(const MlpModel& model, std::span<const NtkPair> pairs,
                                      std::span<const double> eta_grid);

/// Random pairs of training samples with one-hot targets for x_u.
std::vector<NtkPair> sample_ntk_pairs(const ToyDataset& ds, std::size_t count, std::uint64_t seed);

double cosine_similarity(std::span<const double> a, std::span<const double> b);

struct SimilarityRecord {
  std::size_t x_u_index = 0;
  double cosine = 0.0;
  double trace_k = 0.0;
};

/// tr K⁰(x_o, x_u) against input cosine similarity, for every training x_u.
std::vector<SimilarityRecord> similarity_trace_study(const MlpModel& model_at_init,
                                                     std::size_t x_o_index, const ToyDataset& ds);

/// tr A(x) = 1 − Σ q_i² for each checkpoint.
Vector trace_evolution(std::span<const MlpModel> checkpoints, std::span<const double> x);

/// (pair_id, eta, residual_norm, predicted_0.., actual_0.., traceA, traceK)
std::string decomposition_csv(std::span<const DecompositionRecord> records);

}  // namespace learnpath
