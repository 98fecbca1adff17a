#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

namespace learnpath {

using Vector = std::vector<double>;

/// Row-major dense matrix of doubles.
class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static DenseMatrix identity(std::size_t n);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }
  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  DenseMatrix transposed() const;
  /// this * v
  Vector multiply(std::span<const double> v) const;
  /// thisᵀ * v
  Vector multiply_transposed(std::span<const double> v) const;
  DenseMatrix operator*(const DenseMatrix& rhs) const;

  double trace() const;
  bool all_finite() const noexcept;
  bool operator==(const DenseMatrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

double dot(std::span<const double> a, std::span<const double> b);
double norm_l2(std::span<const double> v);
double norm_l1(std::span<const double> v);
/// ||a - b||₂
double distance_l2(std::span<const double> a, std::span<const double> b);
double distance_l1(std::span<const double> a, std::span<const double> b);
bool all_finite(std::span<const double> v) noexcept;
/// Index of the largest entry; ties go to the lowest index.
std::size_t argmax(std::span<const double> v);
Vector one_hot(std::size_t index, std::size_t size);

/// Eigenvalues of a symmetric matrix, ascending.
Vector symmetric_eigenvalues(const DenseMatrix& m);

/// Numerically stable softmax. Throws std::invalid_argument on non-finite input.
Vector softmax(std::span<const double> logits);

enum class Activation { kRelu };

struct DenseLayer {
  DenseMatrix weights;  // out × in
  Vector bias;          // out

  bool operator==(const DenseLayer&) const = default;
};

/// Flat parameter container shared by models and their gradients.
/// Flattening order: layer by layer, weights row-major then bias.
struct ParameterSet {
  std::vector<DenseLayer> layers;

  std::size_t size() const noexcept;
  Vector flatten() const;
  void assign_flat(std::span<const double> flat);
  bool all_finite() const noexcept;
  void set_zero();
  bool operator==(const ParameterSet&) const = default;
};

using MlpGradient = ParameterSet;

/// Fully connected ReLU network: ReLU after every layer except the last,
/// which produces the K logits.
class MlpModel {
 public:
  MlpModel() = default;
  /// Zero-initialized parameters.
  explicit MlpModel(std::vector<std::size_t> layer_sizes,
                    Activation activation = Activation::kRelu);

  /// He fan-in initialization N(0, 2/fan_in) for layers feeding a ReLU; the
  /// logit layer is drawn with std output_scale·sqrt(1/fan_in) so the initial
  /// predictions are close to uniform. Biases start at zero.
  static MlpModel he_init(std::vector<std::size_t> layer_sizes, std::uint64_t seed,
                          double output_scale = 0.1);

  static std::size_t parameter_count(std::span<const std::size_t> layer_sizes);

  const std::vector<std::size_t>& layer_sizes() const noexcept { return layer_sizes_; }
  Activation activation() const noexcept { return activation_; }
  std::size_t num_layers() const noexcept { return params_.layers.size(); }
  std::size_t input_dim() const { return layer_sizes_.front(); }
  std::size_t output_dim() const { return layer_sizes_.back(); }
  std::size_t parameter_count() const noexcept { return params_.size(); }

  ParameterSet& params() noexcept { return params_; }
  const ParameterSet& params() const noexcept { return params_; }
  MlpGradient zero_gradient() const;

  bool same_architecture(const MlpModel& other) const noexcept {
    return layer_sizes_ == other.layer_sizes_ && activation_ == other.activation_;
  }
  bool operator==(const MlpModel&) const = default;

 private:
  std::vector<std::size_t> layer_sizes_;
  Activation activation_ = Activation::kRelu;
  ParameterSet params_;
};

struct ForwardCache {
  std::vector<Vector> inputs;           // input fed to each layer; inputs[0] = x
  std::vector<Vector> pre_activations;  // W·in + b for each layer

  std::size_t depth() const noexcept { return pre_activations.size(); }
  const Vector& logits() const { return pre_activations.back(); }
};

ForwardCache mlp_forward(const MlpModel& model, std::span<const double> x);
/// Logits only; same arithmetic as mlp_forward.
Vector mlp_logits(const MlpModel& model, std::span<const double> x);
Vector mlp_predict(const MlpModel& model, std::span<const double> x);

MlpGradient mlp_backward(const MlpModel& model, const ForwardCache& cache,
                         std::span<const double> grad_logits);
/// Writes into a caller-owned buffer shaped like model.zero_gradient().
void mlp_backward(const MlpModel& model, const ForwardCache& cache,
                  std::span<const double> grad_logits, MlpGradient& out);

/// K × d Jacobian of the logits with respect to the flattened parameters.
DenseMatrix logits_jacobian(const MlpModel& model, std::span<const double> x);

/// w ← w − η·g.
void apply_sgd_step(MlpModel& model, const MlpGradient& grads, double learning_rate);
MlpModel sgd_step(const MlpModel& model, const MlpGradient& grads, double learning_rate);

using ModelLoss = std::function<double(const MlpModel&)>;

/// Central differences (f(w+ε) − f(w−ε)) / 2ε, one parameter at a time.
MlpGradient finite_diff_grad(const ModelLoss& loss_fn, const MlpModel& model,
                             double epsilon = 1e-5);

/// Central difference of loss_fn along a flattened parameter direction.
double finite_diff_directional(const ModelLoss& loss_fn, const MlpModel& model,
                               std::span<const double> direction, double epsilon = 1e-5);

/// max_i |a_i − b_i| / max(|a_i|, |b_i|, floor)
double max_relative_error(std::span<const double> a, std::span<const double> b,
                          double floor = 1e-8);

}  // namespace learnpath
