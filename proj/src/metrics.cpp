#include "learnpath/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "learnpath/rng.hpp"

namespace learnpath {

double accuracy(const DenseMatrix& preds, std::span<const std::size_t> labels) {
  if (preds.rows() == 0) throw std::invalid_argument("accuracy: empty input");
  if (preds.rows() != labels.size()) throw std::invalid_argument("accuracy: length mismatch");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (argmax(preds.row(i)) == labels[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

std::size_t ece_bin(double confidence, std::size_t num_bins) {
  const double m_total = static_cast<double>(num_bins);
  auto upper = [&](std::size_t m) { return static_cast<double>(m) / m_total; };
  auto m = static_cast<std::size_t>(std::clamp(std::ceil(confidence * m_total), 1.0, m_total));
  while (m > 1 && confidence <= upper(m - 1)) --m;
  while (m < num_bins && confidence > upper(m)) ++m;
  return m;
}

double ece(const DenseMatrix& preds, std::span<const std::size_t> labels, EceConfig cfg) {
  if (cfg.num_bins < 1) throw std::invalid_argument("ece: need at least one bin");
  if (preds.rows() == 0) throw std::invalid_argument("ece: empty input");
  if (preds.rows() != labels.size()) throw std::invalid_argument("ece: length mismatch");
  std::vector<double> conf_sum(cfg.num_bins, 0.0);
  std::vector<double> hit_sum(cfg.num_bins, 0.0);
  std::vector<std::size_t> count(cfg.num_bins, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto row = preds.row(i);
    const std::size_t pred = argmax(row);
    const double conf = row[pred];
    const std::size_t b = ece_bin(conf, cfg.num_bins) - 1;
    conf_sum[b] += conf;
    hit_sum[b] += pred == labels[i] ? 1.0 : 0.0;
    ++count[b];
  }
  const double n = static_cast<double>(labels.size());
  double total = 0.0;
  for (std::size_t b = 0; b < cfg.num_bins; ++b) {
    if (count[b] == 0) continue;
    const double c = static_cast<double>(count[b]);
    total += (c / n) * std::abs(hit_sum[b] / c - conf_sum[b] / c);
  }
  return total;
}

double mean_gap(const TargetTable& targets, const DenseMatrix& p_stars,
                std::span<const std::size_t> rows, GapNorm norm) {
  if (targets.size() != p_stars.rows() || targets.num_classes() != p_stars.cols())
    throw std::invalid_argument("mean_gap: tables are misaligned");
  if (rows.empty()) throw std::invalid_argument("mean_gap: no rows");
  double total = 0.0;
  for (std::size_t n : rows)
    total += norm == GapNorm::kL2 ? distance_l2(targets.row(n), p_stars.row(n))
                                  : distance_l1(targets.row(n), p_stars.row(n));
  return total / static_cast<double>(rows.size());
}

double kl_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw std::invalid_argument("kl_divergence: length mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    if (q[i] <= 0.0) return std::numeric_limits<double>::infinity();
    total += p[i] * std::log(p[i] / q[i]);
  }
  // Rounding can leave a tiny negative value for p ≈ q.
  return std::max(total, 0.0);
}

LabelLoss clipped_cross_entropy(double bound) {
  if (!(bound > 0.0)) throw std::invalid_argument("clipped_cross_entropy: bound must be > 0");
  return [bound](std::size_t k, std::span<const double> q) {
    return q[k] > 0.0 ? std::min(-std::log(q[k]), bound) : bound;
  };
}

RiskEstimate risk_estimates(const MlpModel& model, const ToyDataset& ds,
                            std::span<const std::size_t> rows, const TargetTable& targets,
                            const LabelLoss& loss) {
  if (rows.empty()) throw std::invalid_argument("risk_estimates: no rows");
  if (targets.size() != ds.size()) throw std::invalid_argument("risk_estimates: misaligned targets");
  const std::size_t k = ds.num_classes();
  std::vector<double> weighted;
  weighted.reserve(rows.size());
  double emp = 0.0;
  for (std::size_t n : rows) {
    const Vector q = mlp_predict(model, ds[n].x);
    double w = 0.0;
    for (std::size_t c = 0; c < k; ++c) w += targets.row(n)[c] * loss(c, q);
    emp += loss(ds[n].y, q);
    weighted.push_back(w);
  }
  const double n = static_cast<double>(rows.size());
  RiskEstimate r;
  r.empirical = emp / n;
  r.target = std::accumulate(weighted.begin(), weighted.end(), 0.0) / n;
  double var = 0.0;
  for (double w : weighted) var += (w - r.target) * (w - r.target);
  r.target_variance = var / n;
  return r;
}

BoundReport xi_bounds(std::span<const Vector> targets, std::span<const Vector> p_stars,
                      double loss_bound, std::size_t num_classes) {
  if (!(loss_bound > 0.0)) throw std::invalid_argument("xi_bounds: loss bound must be > 0");
  if (targets.size() != p_stars.size() || targets.empty())
    throw std::invalid_argument("xi_bounds: need equally many, nonempty, targets and p*");
  double l2 = 0.0, l1 = 0.0, sqrt_fwd = 0.0, fwd = 0.0, sqrt_rev = 0.0, rev = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const double kf = kl_divergence(targets[i], p_stars[i]);
    const double kr = kl_divergence(p_stars[i], targets[i]);
    l2 += distance_l2(targets[i], p_stars[i]);
    l1 += distance_l1(targets[i], p_stars[i]);
    sqrt_fwd += std::sqrt(kf);
    fwd += kf;
    sqrt_rev += std::sqrt(kr);
    rev += kr;
  }
  const double n = static_cast<double>(targets.size());
  l2 /= n, l1 /= n, sqrt_fwd /= n, fwd /= n, sqrt_rev /= n, rev /= n;
  const double ell2 = loss_bound * loss_bound;
  BoundReport r;
  r.loss_bound = loss_bound;
  r.num_classes = num_classes;
  r.xi_l2 = ell2 * static_cast<double>(num_classes) * l2 * l2;
  r.xi_l1 = ell2 * l1 * l1;
  r.xi_kl_fwd_sq = 2.0 * ell2 * sqrt_fwd * sqrt_fwd;
  r.xi_kl_fwd = 2.0 * ell2 * fwd;
  r.xi_kl_rev_sq = 2.0 * ell2 * sqrt_rev * sqrt_rev;
  r.xi_kl_rev = 2.0 * ell2 * rev;
  r.xi_jeffreys = ell2 * (fwd + rev);
  return r;
}

BoundReport xi_bounds(const TargetTable& targets, const DenseMatrix& p_stars,
                      std::span<const std::size_t> rows, double loss_bound) {
  std::vector<Vector> t, p;
  for (std::size_t n : rows) {
    t.emplace_back(targets.row(n).begin(), targets.row(n).end());
    p.emplace_back(p_stars.row(n).begin(), p_stars.row(n).end());
  }
  return xi_bounds(t, p, loss_bound, targets.num_classes());
}

Vector fractional_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  Vector ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = avg;
    i = j + 1;
  }
  return ranks;
}

namespace {

std::optional<double> pearson(std::span<const double> a, std::span<const double> b) {
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return std::nullopt;
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

}  // namespace

std::optional<double> spearman(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size() || xs.size() < 2)
    throw std::invalid_argument("spearman: need two equal-length inputs of size >= 2");
  const Vector rx = fractional_ranks(xs);
  const Vector ry = fractional_ranks(ys);
  return pearson(rx, ry);
}

double spearman_permutation_pvalue(std::span<const double> xs, std::span<const double> ys,
                                   std::size_t shuffles, std::uint64_t seed) {
  const auto observed = spearman(xs, ys);
  if (!observed) return 1.0;
  const Vector rx = fractional_ranks(xs);
  Vector ry = fractional_ranks(ys);
  Rng rng(seed);
  std::size_t extreme = 0;
  for (std::size_t s = 0; s < shuffles; ++s) {
    std::shuffle(ry.begin(), ry.end(), rng);
    const auto r = pearson(rx, ry);
    if (r && std::abs(*r) >= std::abs(*observed) - 1e-15) ++extreme;
  }
  return (static_cast<double>(extreme) + 1.0) / (static_cast<double>(shuffles) + 1.0);
}

MeanSe mean_and_se(std::span<const double> v) {
  MeanSe out;
  if (v.empty()) return out;
  const double n = static_cast<double>(v.size());
  out.mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  if (v.size() < 2) return out;
  double ss = 0.0;
  for (double x : v) ss += (x - out.mean) * (x - out.mean);
  out.se = std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
  return out;
}

}  // namespace learnpath
