#pragma once

// Independent reference implementations used only by the tests. None of
// these call into the library's numeric kernels.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <random>
#include <vector>

#include "learnpath/numerics.hpp"

namespace oracle {

inline std::vector<double> softmax_ld(const std::vector<double>& z) {
  long double peak = z[0];
  for (double v : z) peak = std::max<long double>(peak, v);
  long double total = 0.0L;
  std::vector<long double> e(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) total += e[i] = std::exp(static_cast<long double>(z[i]) - peak);
  std::vector<double> out(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = static_cast<double>(e[i] / total);
  return out;
}

/// Bayes rule over unnormalized isotropic Gaussian densities.
inline std::vector<double> p_star_density(const std::vector<double>& x,
                                          const std::vector<std::vector<double>>& means, double sigma) {
  const long double two_pi = 2.0L * 3.141592653589793238462643383279L;
  std::vector<long double> dens(means.size());
  long double total = 0.0L;
  for (std::size_t k = 0; k < means.size(); ++k) {
    long double logd = 0.0L;
    for (std::size_t j = 0; j < x.size(); ++j) {
      const long double d = static_cast<long double>(x[j]) - means[k][j];
      logd += -0.5L * std::log(two_pi * sigma * sigma) - d * d / (2.0L * sigma * sigma);
    }
    dens[k] = std::exp(logd);
    total += dens[k];
  }
  std::vector<double> out(means.size());
  for (std::size_t k = 0; k < means.size(); ++k) out[k] = static_cast<double>(dens[k] / total);
  return out;
}

/// Plain triple loop forward pass of a ReLU MLP.
inline std::vector<double> naive_logits(const learnpath::MlpModel& m, const std::vector<double>& x) {
  std::vector<double> a = x;
  const auto& layers = m.params().layers;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& w = layers[l].weights;
    std::vector<double> z(w.rows());
    for (std::size_t r = 0; r < w.rows(); ++r) {
      double s = layers[l].bias[r];
      for (std::size_t c = 0; c < w.cols(); ++c) s += w(r, c) * a[c];
      z[r] = s;
    }
    if (l + 1 < layers.size())
      for (double& v : z) v = v > 0.0 ? v : 0.0;
    a = std::move(z);
  }
  return a;
}

/// Bins ((m−1)/M, m/M] by direct comparison, confidence 0 in bin 1.
inline double ece_bruteforce(const std::vector<std::vector<double>>& preds,
                             const std::vector<std::size_t>& labels, std::size_t bins) {
  const double n = static_cast<double>(preds.size());
  double total = 0.0;
  for (std::size_t m = 1; m <= bins; ++m) {
    const double lo = static_cast<double>(m - 1) / static_cast<double>(bins);
    const double hi = static_cast<double>(m) / static_cast<double>(bins);
    double conf = 0.0, hits = 0.0, count = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
      std::size_t best = 0;
      for (std::size_t k = 1; k < preds[i].size(); ++k)
        if (preds[i][k] > preds[i][best]) best = k;
      const double c = preds[i][best];
      const bool in = (c > lo && c <= hi) || (m == 1 && c <= lo);
      if (!in) continue;
      conf += c;
      hits += best == labels[i] ? 1.0 : 0.0;
      count += 1.0;
    }
    if (count > 0) total += count / n * std::abs(hits / count - conf / count);
  }
  return total;
}

/// Rank with averaged ties, then Pearson.
inline double spearman_bruteforce(const std::vector<double>& x, const std::vector<double>& y) {
  auto ranks = [](const std::vector<double>& v) {
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
      double less = 0, equal = 0;
      for (double w : v) {
        if (w < v[i]) ++less;
        if (w == v[i]) ++equal;
      }
      r[i] = less + (equal + 1.0) / 2.0;
    }
    return r;
  };
  const auto rx = ranks(x), ry = ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

inline std::vector<double> random_simplex(std::mt19937_64& rng, std::size_t k) {
  std::exponential_distribution<double> e(1.0);
  std::vector<double> p(k);
  double total = 0.0;
  for (double& v : p) total += v = e(rng);
  for (double& v : p) v /= total;
  return p;
}

inline std::vector<double> random_vector(std::mt19937_64& rng, std::size_t n, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  std::vector<double> v(n);
  for (double& x : v) x = g(rng);
  return v;
}

inline double cross_entropy_soft(const std::vector<double>& logits, const std::vector<double>& target) {
  const auto q = softmax_ld(logits);
  double h = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i)
    if (target[i] > 0) h -= target[i] * std::log(q[i]);
  return h;
}

}  // namespace oracle
