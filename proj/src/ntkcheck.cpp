#include "learnpath/ntkcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>

#include "learnpath/csv.hpp"
#include "learnpath/rng.hpp"

namespace learnpath {

namespace {

double median(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median of empty set");
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

}  // namespace

DenseMatrix softmax_jacobian(std::span<const double> q) {
  const std::size_t k = q.size();
  DenseMatrix a(k, k);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) a(i, j) = (i == j ? q[i] : 0.0) - q[i] * q[j];
  return a;
}

double softmax_jacobian_trace(std::span<const double> q) {
  double s = 0.0;
  for (double v : q) s += v * v;
  return 1.0 - s;
}

DenseMatrix empirical_ntk(const DenseMatrix& jac_o, const DenseMatrix& jac_u) {
  if (jac_o.cols() != jac_u.cols()) throw std::invalid_argument("empirical_ntk: Jacobian widths differ");
  DenseMatrix k(jac_o.rows(), jac_u.rows());
  for (std::size_t i = 0; i < jac_o.rows(); ++i)
    for (std::size_t j = 0; j < jac_u.rows(); ++j) k(i, j) = dot(jac_o.row(i), jac_u.row(j));
  return k;
}

DenseMatrix empirical_ntk(const MlpModel& model, std::span<const double> x_o,
                          std::span<const double> x_u) {
  return empirical_ntk(logits_jacobian(model, x_o), logits_jacobian(model, x_u));
}

Vector predicted_delta_q(double eta, const DenseMatrix& a, const DenseMatrix& kmat,
                         std::span<const double> p_tar_u, std::span<const double> q_u) {
  if (p_tar_u.size() != q_u.size() || kmat.cols() != q_u.size() || a.cols() != kmat.rows())
    throw std::invalid_argument("predicted_delta_q: shape mismatch");
  Vector force(q_u.size());
  for (std::size_t i = 0; i < force.size(); ++i) force[i] = p_tar_u[i] - q_u[i];
  Vector out = a.multiply(kmat.multiply(force));
  for (double& v : out) v *= eta;
  return out;
}

Vector actual_delta_q(const MlpModel& model, std::span<const double> x_o,
                      std::span<const double> x_u, std::span<const double> p_tar_u, double eta) {
  if (!(eta >= 0.0)) throw std::invalid_argument("actual_delta_q: eta must be >= 0");
  const Vector before = mlp_predict(model, x_o);
  const ForwardCache cache = mlp_forward(model, x_u);
  const Vector q_u = softmax(cache.logits());
  Vector grad_logits(q_u.size());
  for (std::size_t i = 0; i < q_u.size(); ++i) grad_logits[i] = q_u[i] - p_tar_u[i];
  const MlpModel stepped = sgd_step(model, mlp_backward(model, cache, grad_logits), eta);
  const Vector after_logits = mlp_logits(stepped, x_o);
  if (!all_finite(after_logits)) throw std::runtime_error("actual_delta_q: step diverged");
  Vector after = softmax(after_logits);
  for (std::size_t i = 0; i < after.size(); ++i) after[i] -= before[i];
  return after;
}

DecompositionRecord decompose_step(const MlpModel& model, const NtkPair& pair, double eta,
                                   std::size_t pair_id) {
  DecompositionRecord r;
  r.pair_id = pair_id;
  r.x_o_index = pair.x_o_index;
  r.x_u_index = pair.x_u_index;
  r.eta = eta;
  const Vector q_o = mlp_predict(model, pair.x_o);
  const Vector q_u = mlp_predict(model, pair.x_u);
  r.a_matrix = softmax_jacobian(q_o);
  r.k_matrix = empirical_ntk(model, pair.x_o, pair.x_u);
  r.predicted = predicted_delta_q(eta, r.a_matrix, r.k_matrix, pair.p_tar_u, q_u);
  r.actual = actual_delta_q(model, pair.x_o, pair.x_u, pair.p_tar_u, eta);
  r.residual_norm = distance_l2(r.actual, r.predicted);
  return r;
}

std::vector<double> ResidualScaling::ratios() const {
  std::vector<double> out;
  for (std::size_t i = 0; i + 1 < rows.size(); ++i)
    out.push_back(rows[i].median_residual / rows[i + 1].median_residual);
  return out;
}

ResidualScaling residual_scaling_test(const MlpModel& model, std::span<const NtkPair> pairs,
                                      std::span<const double> eta_grid) {
  if (pairs.empty() || eta_grid.empty())
    throw std::invalid_argument("residual_scaling_test: need pairs and an eta grid");
  if (!std::is_sorted(eta_grid.begin(), eta_grid.end(), std::greater<>()))
    throw std::invalid_argument("residual_scaling_test: eta grid must be sorted descending");
  ResidualScaling out;
  // A and K do not depend on η; compute them once per pair.
  std::vector<DecompositionRecord> base;
  for (std::size_t p = 0; p < pairs.size(); ++p) base.push_back(decompose_step(model, pairs[p], eta_grid[0], p));
  for (double eta : eta_grid) {
    std::vector<double> residuals;
    for (std::size_t p = 0; p < pairs.size(); ++p) {
      DecompositionRecord r = base[p];
      r.eta = eta;
      const Vector q_u = mlp_predict(model, pairs[p].x_u);
      r.predicted = predicted_delta_q(eta, r.a_matrix, r.k_matrix, pairs[p].p_tar_u, q_u);
      r.actual = actual_delta_q(model, pairs[p].x_o, pairs[p].x_u, pairs[p].p_tar_u, eta);
      r.residual_norm = distance_l2(r.actual, r.predicted);
      residuals.push_back(r.residual_norm);
      out.records.push_back(std::move(r));
    }
    out.rows.push_back({eta, median(std::move(residuals))});
  }
  return out;
}

std::vector<NtkPair> sample_ntk_pairs(const ToyDataset& ds, std::size_t count, std::uint64_t seed) {
  const std::vector<std::size_t> train = ds.indices(Split::kTrain);
  if (train.size() < 2) throw std::invalid_argument("sample_ntk_pairs: need two training samples");
  Rng rng = make_rng(seed, Stream::kPairs);
  std::uniform_int_distribution<std::size_t> pick(0, train.size() - 1);
  std::vector<NtkPair> pairs;
  while (pairs.size() < count) {
    const std::size_t o = train[pick(rng)];
    const std::size_t u = train[pick(rng)];
    if (o == u) continue;
    pairs.push_back({o, u, ds[o].x, ds[u].x, one_hot(ds[u].y, ds.num_classes())});
  }
  return pairs;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  const double na = norm_l2(a), nb = norm_l2(b);
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot(a, b) / (na * nb);
}

std::vector<SimilarityRecord> similarity_trace_study(const MlpModel& model_at_init,
                                                     std::size_t x_o_index, const ToyDataset& ds) {
  if (x_o_index >= ds.size()) throw std::invalid_argument("similarity_trace_study: bad x_o index");
  const DenseMatrix jac_o = logits_jacobian(model_at_init, ds[x_o_index].x);
  std::vector<SimilarityRecord> out;
  for (std::size_t u : ds.indices(Split::kTrain)) {
    const DenseMatrix jac_u = logits_jacobian(model_at_init, ds[u].x);
    out.push_back({u, cosine_similarity(ds[x_o_index].x, ds[u].x), empirical_ntk(jac_o, jac_u).trace()});
  }
  return out;
}

Vector trace_evolution(std::span<const MlpModel> checkpoints, std::span<const double> x) {
  if (checkpoints.empty()) throw std::invalid_argument("trace_evolution: no checkpoints");
  Vector out;
  out.reserve(checkpoints.size());
  for (const auto& m : checkpoints) out.push_back(softmax_jacobian_trace(mlp_predict(m, x)));
  return out;
}

std::string decomposition_csv(std::span<const DecompositionRecord> records) {
  std::ostringstream os;
  const std::size_t k = records.empty() ? 0 : records.front().predicted.size();
  os << "pair_id,eta,residual_norm";
  for (std::size_t i = 0; i < k; ++i) os << ",predicted_" << i;
  for (std::size_t i = 0; i < k; ++i) os << ",actual_" << i;
  os << ",traceA,traceK\n";
  for (const auto& r : records) {
    os << r.pair_id << ',' << format_double(r.eta) << ',' << format_double(r.residual_norm);
    for (double v : r.predicted) os << ',' << format_double(v);
    for (double v : r.actual) os << ',' << format_double(v);
    os << ',' << format_double(r.a_matrix.trace()) << ',' << format_double(r.k_matrix.trace()) << '\n';
  }
  return os.str();
}

}  // namespace learnpath
