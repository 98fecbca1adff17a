#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "learnpath/numerics.hpp"

namespace learnpath {

struct GaussianSpec {
  std::size_t num_classes = 3;
  std::size_t input_dim = 30;
  double sigma = 2.0;     // per-dimension std of every class Gaussian
  double delta_mu = 1.0;  // magnitude of the mean entries
  std::uint64_t seed = 0;

  /// Throws std::invalid_argument. delta_mu == 0 is accepted (degenerate).
  void validate() const;
  bool operator==(const GaussianSpec&) const = default;
};

enum class Split { kTrain, kValid, kTest };

const char* to_string(Split s);
Split split_from_string(const std::string& s);

struct ToySample {
  Vector x;
  std::size_t y = 0;
  Vector p_star;
  std::size_t original_y = 0;
  std::size_t index = 0;
  Split split = Split::kTrain;

  bool flipped() const noexcept { return y != original_y; }
};

struct SplitRatios {
  double train = 0.05;
  double valid = 0.05;
  double test = 0.90;
};

class ToyDataset {
 public:
  ToyDataset() = default;
  ToyDataset(GaussianSpec spec, DenseMatrix means, std::vector<ToySample> samples);

  const GaussianSpec& spec() const noexcept { return spec_; }
  const DenseMatrix& means() const noexcept { return means_; }
  std::size_t num_classes() const noexcept { return spec_.num_classes; }
  std::size_t size() const noexcept { return samples_.size(); }

  const std::vector<ToySample>& samples() const noexcept { return samples_; }
  std::vector<ToySample>& samples() noexcept { return samples_; }
  const ToySample& operator[](std::size_t i) const { return samples_[i]; }

  /// Sample positions (== sample index) with the given tag, ascending.
  std::vector<std::size_t> indices(Split s) const;
  /// Training samples whose label differs from the pre-noise label.
  std::vector<std::size_t> flipped_indices() const;

 private:
  GaussianSpec spec_;
  DenseMatrix means_;
  std::vector<ToySample> samples_;
};

/// K × input_dim, entries drawn uniformly from {−δμ, 0, δμ}.
DenseMatrix gen_class_means(const GaussianSpec& spec);

/// p*(k|x) = softmax_k(−||x − μ_k||² / 2σ²), the Bayes posterior under a
/// uniform class prior.
Vector compute_p_star(std::span<const double> x, const DenseMatrix& means, double sigma);

/// Uniform labels, x | y=k ~ N(μ_k, σ²I). All samples start tagged train.
ToyDataset sample_dataset(const GaussianSpec& spec, std::size_t n);

/// Seeded shuffle, then consecutive blocks of round(n·ratio) samples
/// (test takes the remainder).
ToyDataset split_dataset(ToyDataset ds, const SplitRatios& ratios, std::uint64_t seed);

/// Flips exactly round(flip_ratio·N_train) training labels to a uniformly
/// chosen different class. Valid and test samples are left alone.
ToyDataset flip_labels(ToyDataset ds, double flip_ratio, std::uint64_t seed);

/// Independent N(0, noise_scale²) noise per entry, clamp at zero, renormalize.
/// An all-zero result falls back to uniform.
Vector perturb_target(std::span<const double> p_star, double noise_scale, std::uint64_t seed);

/// Columnar CSV: index,split,y,original_y,x_0..,pstar_0.. in round-trip
/// form, plus a JSON header carrying the GaussianSpec and the class means.
void write_dataset(const ToyDataset& ds, const std::filesystem::path& csv_path,
                   const std::filesystem::path& header_path);
ToyDataset read_dataset(const std::filesystem::path& csv_path,
                        const std::filesystem::path& header_path);

}  // namespace learnpath
