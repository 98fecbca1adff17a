#include "learnpath/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>
#include <string>

#include <Eigen/Eigenvalues>

#include "learnpath/rng.hpp"

namespace learnpath {

namespace {

void require(bool cond, const char* what) {
  if (!cond) throw std::invalid_argument(what);
}

}  // namespace

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  require(data_.size() == rows * cols, "DenseMatrix: data length must equal rows*cols");
}

DenseMatrix DenseMatrix::identity(std::size_t n) {
  DenseMatrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

DenseMatrix DenseMatrix::transposed() const {
  DenseMatrix t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

Vector DenseMatrix::multiply(std::span<const double> v) const {
  require(v.size() == cols_, "DenseMatrix::multiply: dimension mismatch");
  Vector out(rows_, 0.0);
  for (std::size_t r = 0; r < rows_; ++r) {
    const double* w = data_.data() + r * cols_;
    double acc = 0.0;
    for (std::size_t c = 0; c < cols_; ++c) acc += w[c] * v[c];
    out[r] = acc;
  }
  return out;
}

Vector DenseMatrix::multiply_transposed(std::span<const double> v) const {
  require(v.size() == rows_, "DenseMatrix::multiply_transposed: dimension mismatch");
  Vector out(cols_, 0.0);
  for (std::size_t r = 0; r < rows_; ++r) {
    const double* w = data_.data() + r * cols_;
    const double s = v[r];
    for (std::size_t c = 0; c < cols_; ++c) out[c] += w[c] * s;
  }
  return out;
}

DenseMatrix DenseMatrix::operator*(const DenseMatrix& rhs) const {
  require(cols_ == rhs.rows_, "DenseMatrix::operator*: dimension mismatch");
  DenseMatrix out(rows_, rhs.cols_);
  for (std::size_t i = 0; i < rows_; ++i)
    for (std::size_t k = 0; k < cols_; ++k) {
      const double a = (*this)(i, k);
      for (std::size_t j = 0; j < rhs.cols_; ++j) out(i, j) += a * rhs(k, j);
    }
  return out;
}

double DenseMatrix::trace() const {
  double t = 0.0;
  for (std::size_t i = 0; i < std::min(rows_, cols_); ++i) t += (*this)(i, i);
  return t;
}

bool DenseMatrix::all_finite() const noexcept { return learnpath::all_finite(data_); }

double dot(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), "dot: length mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double norm_l2(std::span<const double> v) { return std::sqrt(dot(v, v)); }

double norm_l1(std::span<const double> v) {
  double acc = 0.0;
  for (double x : v) acc += std::abs(x);
  return acc;
}

double distance_l2(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), "distance_l2: length mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return std::sqrt(acc);
}

double distance_l1(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), "distance_l1: length mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += std::abs(a[i] - b[i]);
  return acc;
}

bool all_finite(std::span<const double> v) noexcept {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

std::size_t argmax(std::span<const double> v) {
  require(!v.empty(), "argmax: empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

Vector one_hot(std::size_t index, std::size_t size) {
  require(index < size, "one_hot: index out of range");
  Vector v(size, 0.0);
  v[index] = 1.0;
  return v;
}

Vector symmetric_eigenvalues(const DenseMatrix& m) {
  require(m.rows() == m.cols(), "symmetric_eigenvalues: matrix must be square");
  Eigen::MatrixXd e(m.rows(), m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) e(r, c) = m(r, c);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(e, Eigen::EigenvaluesOnly);
  const auto& ev = solver.eigenvalues();
  return Vector(ev.data(), ev.data() + ev.size());
}

Vector softmax(std::span<const double> logits) {
  require(!logits.empty(), "softmax: empty input");
  if (!all_finite(logits)) {
    std::ostringstream msg;
    msg << "softmax: non-finite logit in (";
    for (std::size_t i = 0; i < logits.size(); ++i) msg << (i ? ", " : "") << logits[i];
    msg << ")";
    throw std::invalid_argument(msg.str());
  }
  const double peak = *std::max_element(logits.begin(), logits.end());
  Vector out(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - peak);
    total += out[i];
  }
  for (double& v : out) v /= total;
  return out;
}

// ---------------------------------------------------------------------------

std::size_t ParameterSet::size() const noexcept {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.weights.data().size() + l.bias.size();
  return n;
}

Vector ParameterSet::flatten() const {
  Vector flat;
  flat.reserve(size());
  for (const auto& l : layers) {
    flat.insert(flat.end(), l.weights.data().begin(), l.weights.data().end());
    flat.insert(flat.end(), l.bias.begin(), l.bias.end());
  }
  return flat;
}

void ParameterSet::assign_flat(std::span<const double> flat) {
  require(flat.size() == size(), "ParameterSet::assign_flat: length mismatch");
  std::size_t pos = 0;
  for (auto& l : layers) {
    auto w = l.weights.data();
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(pos), w.size(), w.begin());
    pos += w.size();
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(pos), l.bias.size(), l.bias.begin());
    pos += l.bias.size();
  }
}

bool ParameterSet::all_finite() const noexcept {
  return std::all_of(layers.begin(), layers.end(), [](const DenseLayer& l) {
    return l.weights.all_finite() && learnpath::all_finite(l.bias);
  });
}

void ParameterSet::set_zero() {
  for (auto& l : layers) {
    std::fill(l.weights.data().begin(), l.weights.data().end(), 0.0);
    std::fill(l.bias.begin(), l.bias.end(), 0.0);
  }
}

MlpModel::MlpModel(std::vector<std::size_t> layer_sizes, Activation activation)
    : layer_sizes_(std::move(layer_sizes)), activation_(activation) {
  require(layer_sizes_.size() >= 2, "MlpModel: need at least input and output sizes");
  for (std::size_t s : layer_sizes_) require(s > 0, "MlpModel: layer sizes must be positive");
  for (std::size_t i = 0; i + 1 < layer_sizes_.size(); ++i) {
    params_.layers.push_back(
        {DenseMatrix(layer_sizes_[i + 1], layer_sizes_[i]), Vector(layer_sizes_[i + 1], 0.0)});
  }
}

MlpModel MlpModel::he_init(std::vector<std::size_t> layer_sizes, std::uint64_t seed,
                           double output_scale) {
  MlpModel model(std::move(layer_sizes));
  Rng rng(seed);
  const std::size_t n = model.num_layers();
  for (std::size_t l = 0; l < n; ++l) {
    auto& layer = model.params_.layers[l];
    const double fan_in = static_cast<double>(layer.weights.cols());
    const double stddev = (l + 1 < n) ? std::sqrt(2.0 / fan_in)
                                      : output_scale * std::sqrt(1.0 / fan_in);
    std::normal_distribution<double> dist(0.0, stddev);
    for (double& w : layer.weights.data()) w = dist(rng);
  }
  return model;
}

std::size_t MlpModel::parameter_count(std::span<const std::size_t> layer_sizes) {
  std::size_t n = 0;
  for (std::size_t i = 0; i + 1 < layer_sizes.size(); ++i)
    n += layer_sizes[i + 1] * (layer_sizes[i] + 1);
  return n;
}

MlpGradient MlpModel::zero_gradient() const {
  MlpGradient g = params_;
  g.set_zero();
  return g;
}

// ---------------------------------------------------------------------------

ForwardCache mlp_forward(const MlpModel& model, std::span<const double> x) {
  if (x.size() != model.input_dim())
    throw std::invalid_argument("mlp_forward: input has dimension " + std::to_string(x.size()) +
                                ", model expects " + std::to_string(model.input_dim()));
  const auto& layers = model.params().layers;
  ForwardCache cache;
  cache.inputs.reserve(layers.size());
  cache.pre_activations.reserve(layers.size());
  Vector current(x.begin(), x.end());
  for (std::size_t l = 0; l < layers.size(); ++l) {
    Vector pre = layers[l].weights.multiply(current);
    for (std::size_t i = 0; i < pre.size(); ++i) pre[i] += layers[l].bias[i];
    cache.inputs.push_back(std::move(current));
    if (l + 1 < layers.size()) {
      current = pre;
      for (double& v : current) v = v > 0.0 ? v : 0.0;
    }
    cache.pre_activations.push_back(std::move(pre));
  }
  return cache;
}

Vector mlp_logits(const MlpModel& model, std::span<const double> x) {
  return mlp_forward(model, x).logits();
}

Vector mlp_predict(const MlpModel& model, std::span<const double> x) {
  return softmax(mlp_logits(model, x));
}

void mlp_backward(const MlpModel& model, const ForwardCache& cache,
                  std::span<const double> grad_logits, MlpGradient& out) {
  const auto& layers = model.params().layers;
  require(cache.depth() == layers.size(), "mlp_backward: cache depth does not match model");
  require(grad_logits.size() == model.output_dim(), "mlp_backward: grad_logits size mismatch");
  require(out.layers.size() == layers.size(), "mlp_backward: gradient buffer shape mismatch");

  Vector delta(grad_logits.begin(), grad_logits.end());
  for (std::size_t li = layers.size(); li-- > 0;) {
    const auto& in = cache.inputs[li];
    auto& g = out.layers[li];
    require(g.weights.rows() == delta.size() && g.weights.cols() == in.size(),
            "mlp_backward: gradient buffer shape mismatch");
    for (std::size_t r = 0; r < delta.size(); ++r) {
      auto row = g.weights.row(r);
      const double d = delta[r];
      for (std::size_t c = 0; c < in.size(); ++c) row[c] = d * in[c];
      g.bias[r] = d;
    }
    if (li == 0) break;
    Vector back = layers[li].weights.multiply_transposed(delta);
    const auto& pre_prev = cache.pre_activations[li - 1];
    for (std::size_t i = 0; i < back.size(); ++i)
      if (pre_prev[i] <= 0.0) back[i] = 0.0;
    delta = std::move(back);
  }
}

MlpGradient mlp_backward(const MlpModel& model, const ForwardCache& cache,
                         std::span<const double> grad_logits) {
  MlpGradient g = model.zero_gradient();
  mlp_backward(model, cache, grad_logits, g);
  return g;
}

DenseMatrix logits_jacobian(const MlpModel& model, std::span<const double> x) {
  const ForwardCache cache = mlp_forward(model, x);
  const std::size_t k = model.output_dim();
  DenseMatrix jac(k, model.parameter_count());
  MlpGradient g = model.zero_gradient();
  for (std::size_t i = 0; i < k; ++i) {
    mlp_backward(model, cache, one_hot(i, k), g);
    const Vector flat = g.flatten();
    std::copy(flat.begin(), flat.end(), jac.row(i).begin());
  }
  return jac;
}

void apply_sgd_step(MlpModel& model, const MlpGradient& grads, double learning_rate) {
  auto& layers = model.params().layers;
  require(grads.layers.size() == layers.size(), "sgd_step: gradient shape mismatch");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    auto w = layers[l].weights.data();
    const auto gw = grads.layers[l].weights.data();
    require(w.size() == gw.size() && layers[l].bias.size() == grads.layers[l].bias.size(),
            "sgd_step: gradient shape mismatch");
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= learning_rate * gw[i];
    for (std::size_t i = 0; i < layers[l].bias.size(); ++i)
      layers[l].bias[i] -= learning_rate * grads.layers[l].bias[i];
  }
}

MlpModel sgd_step(const MlpModel& model, const MlpGradient& grads, double learning_rate) {
  MlpModel out = model;
  apply_sgd_step(out, grads, learning_rate);
  return out;
}

MlpGradient finite_diff_grad(const ModelLoss& loss_fn, const MlpModel& model, double epsilon) {
  require(epsilon > 0.0, "finite_diff_grad: epsilon must be positive");
  MlpModel probe = model;
  Vector flat = model.params().flatten();
  Vector grad(flat.size());
  for (std::size_t i = 0; i < flat.size(); ++i) {
    const double orig = flat[i];
    flat[i] = orig + epsilon;
    probe.params().assign_flat(flat);
    const double up = loss_fn(probe);
    flat[i] = orig - epsilon;
    probe.params().assign_flat(flat);
    const double down = loss_fn(probe);
    flat[i] = orig;
    grad[i] = (up - down) / (2.0 * epsilon);
  }
  MlpGradient g = model.zero_gradient();
  g.assign_flat(grad);
  return g;
}

double finite_diff_directional(const ModelLoss& loss_fn, const MlpModel& model,
                               std::span<const double> direction, double epsilon) {
  require(epsilon > 0.0, "finite_diff_directional: epsilon must be positive");
  const Vector flat = model.params().flatten();
  require(direction.size() == flat.size(), "finite_diff_directional: direction size mismatch");
  MlpModel probe = model;
  Vector shifted(flat.size());
  for (std::size_t i = 0; i < flat.size(); ++i) shifted[i] = flat[i] + epsilon * direction[i];
  probe.params().assign_flat(shifted);
  const double up = loss_fn(probe);
  for (std::size_t i = 0; i < flat.size(); ++i) shifted[i] = flat[i] - epsilon * direction[i];
  probe.params().assign_flat(shifted);
  const double down = loss_fn(probe);
  return (up - down) / (2.0 * epsilon);
}

double max_relative_error(std::span<const double> a, std::span<const double> b, double floor) {
  require(a.size() == b.size(), "max_relative_error: length mismatch");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double scale = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / scale);
  }
  return worst;
}

}  // namespace learnpath
