#include <cmath>
#include <random>
#include <numeric>

#include "doctest.h"
#include "learnpath/metrics.hpp"
#include "oracles.hpp"

using namespace learnpath;

namespace {

DenseMatrix to_matrix(const std::vector<Vector>& rows) {
  DenseMatrix m(rows.size(), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i) std::copy(rows[i].begin(), rows[i].end(), m.row(i).begin());
  return m;
}

}  // namespace

TEST_CASE("accuracy") {
  const DenseMatrix p = to_matrix({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {1, 0, 0}});
  CHECK(accuracy(p, std::vector<std::size_t>{0, 1, 2, 0}) == 1.0);
  CHECK(accuracy(p, std::vector<std::size_t>{1, 2, 0, 1}) == 0.0);
  CHECK(accuracy(p, std::vector<std::size_t>{0, 1, 2, 2}) == 0.75);
}

TEST_CASE("calibration error") {
  SUBCASE("hand cases") {
    CHECK(ece(to_matrix({{1.0, 0.0}}), std::vector<std::size_t>{0}) == 0.0);
    const DenseMatrix two = to_matrix({{0.95, 0.05}, {0.95, 0.05}});
    CHECK(ece(two, std::vector<std::size_t>{0, 1}) == doctest::Approx(0.45).epsilon(1e-14));
    CHECK(ece_bin(0.95, 10) == 10);
    CHECK(ece_bin(0.3, 10) == 3);
    CHECK(ece_bin(0.30000000000000004, 10) == 4);
    CHECK(ece_bin(0.0, 10) == 1);
    CHECK(ece_bin(1.0, 10) == 10);
  }
  SUBCASE("calibrated set scores zero") {
    // Confidence 0.75 in one bin with three of four correct.
    const DenseMatrix p = to_matrix({{0.75, 0.25}, {0.75, 0.25}, {0.75, 0.25}, {0.75, 0.25}});
    CHECK(ece(p, std::vector<std::size_t>{0, 0, 0, 1}) == doctest::Approx(0.0).epsilon(1e-15));
  }
  SUBCASE("matches brute-force binning and ignores order") {
    std::mt19937_64 rng(99);
    for (int t = 0; t < 100; ++t) {
      const std::size_t n = 50 + t * 3, k = 2 + t % 4;
      std::vector<Vector> rows;
      std::vector<std::size_t> labels;
      for (std::size_t i = 0; i < n; ++i) {
        Vector q = oracle::random_simplex(rng, k);
        if (i % 17 == 0) q.assign(k, 1.0 / static_cast<double>(k));
        rows.push_back(q);
        labels.push_back(std::uniform_int_distribution<std::size_t>(0, k - 1)(rng));
      }
      const std::size_t bins = 5 + t % 11;
      const double lib = ece(to_matrix(rows), labels, {bins});
      CHECK(std::abs(lib - oracle::ece_bruteforce(rows, labels, bins)) <= 1e-12);

      std::vector<std::size_t> perm(n);
      for (std::size_t i = 0; i < n; ++i) perm[i] = (i * 7 + 3) % n;
      if (std::gcd(n, std::size_t{7}) != 1) continue;
      std::vector<Vector> r2;
      std::vector<std::size_t> l2;
      for (std::size_t i : perm) {
        r2.push_back(rows[i]);
        l2.push_back(labels[i]);
      }
      CHECK(ece(to_matrix(r2), l2, {bins}) == doctest::Approx(lib).epsilon(1e-12));
    }
  }
}

TEST_CASE("supervision gap") {
  GaussianSpec spec;
  const ToyDataset ds = sample_dataset(spec, 50);
  const TargetTable gt = make_gt_targets(ds);
  const TargetTable oh = make_onehot_targets(ds);
  std::vector<std::size_t> rows(ds.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  CHECK(mean_gap(gt, gt.probs, rows, GapNorm::kL2) == 0.0);
  double mean_difficulty = 0.0;
  for (const auto& s : ds.samples()) mean_difficulty += distance_l2(one_hot(s.y, 3), s.p_star);
  CHECK(mean_gap(oh, gt.probs, rows, GapNorm::kL2) == doctest::Approx(mean_difficulty / 50.0));

  const TargetTable one{DenseMatrix(1, 2, {1.0, 0.0}), Provenance::kCustom};
  const DenseMatrix half(1, 2, {0.5, 0.5});
  const std::vector<std::size_t> only{0};
  CHECK(mean_gap(one, half, only, GapNorm::kL2) == doctest::Approx(std::sqrt(0.5)));
  CHECK(mean_gap(one, half, only, GapNorm::kL1) == doctest::Approx(1.0));
}

TEST_CASE("KL divergence") {
  CHECK(kl_divergence(Vector{0.3, 0.7}, Vector{0.3, 0.7}) == 0.0);
  CHECK(kl_divergence(Vector{1.0, 0.0}, Vector{0.5, 0.5}) == doctest::Approx(std::log(2.0)));
  CHECK(std::isinf(kl_divergence(Vector{0.5, 0.5}, Vector{1.0, 0.0})));
  std::mt19937_64 rng(6);
  for (int t = 0; t < 1000; ++t)
    CHECK(kl_divergence(oracle::random_simplex(rng, 4), oracle::random_simplex(rng, 4)) >= 0.0);
}

TEST_CASE("risk estimates") {
  GaussianSpec spec;
  spec.seed = 3;
  const ToyDataset ds = sample_dataset(spec, 80);
  const MlpModel m = MlpModel::he_init({30, 16, 3}, 4, 1.0);
  std::vector<std::size_t> rows(ds.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  const LabelLoss ce = clipped_cross_entropy(10.0);
  const RiskEstimate r = risk_estimates(m, ds, rows, make_onehot_targets(ds), ce);
  CHECK(std::abs(r.empirical - r.target) <= 1e-12);

  const LabelLoss zero_one = [](std::size_t k, std::span<const double> q) { return argmax(q) == k ? 0.0 : 1.0; };
  // Hand case: two samples, K=2, per-class loss vectors taken from the model.
  ToyDataset two(GaussianSpec{2, 1, 1.0, 1.0, 0}, DenseMatrix(2, 1, {1.0, -1.0}),
                 {ToySample{{0.5}, 0, {0.7, 0.3}, 0, 0, Split::kTrain},
                  ToySample{{-0.5}, 1, {0.4, 0.6}, 1, 1, Split::kTrain}});
  MlpModel lin({1, 2});
  lin.params().layers[0].weights = DenseMatrix(2, 1, {1.0, -1.0});
  const TargetTable soft{DenseMatrix(2, 2, {0.7, 0.3, 0.4, 0.6}), Provenance::kCustom};
  const std::vector<std::size_t> both{0, 1};
  const RiskEstimate h = risk_estimates(lin, two, both, soft, zero_one);
  // Sample 0 predicts class 0: L = (0, 1). Sample 1 predicts class 1: L = (1, 0).
  CHECK(h.empirical == 0.0);
  CHECK(h.target == doctest::Approx((0.3 + 0.4) / 2.0));
  CHECK(h.target_variance == doctest::Approx(0.0025).epsilon(1e-9));
}

TEST_CASE("bias-term bounds") {
  SUBCASE("hand case") {
    const std::vector<Vector> t{{1.0, 0.0}}, p{{0.5, 0.5}};
    const BoundReport r = xi_bounds(t, p, 1.0, 2);
    CHECK(r.xi_l2 == doctest::Approx(1.0));
    CHECK(r.xi_l1 == doctest::Approx(1.0));
    CHECK(r.xi_kl_fwd == doctest::Approx(2.0 * std::log(2.0)));
    CHECK(std::isinf(r.xi_kl_rev));
  }
  SUBCASE("chain on random sets") {
    std::mt19937_64 rng(7);
    for (int t = 0; t < 1000; ++t) {
      const std::size_t k = 2 + t % 5, n = 1 + t % 9;
      std::vector<Vector> tar, ps;
      for (std::size_t i = 0; i < n; ++i) {
        tar.push_back(oracle::random_simplex(rng, k));
        ps.push_back(oracle::random_simplex(rng, k));
      }
      const double ell = 0.5 + (t % 7);
      const BoundReport r = xi_bounds(tar, ps, ell, k);
      for (double v : {r.xi_l2, r.xi_l1, r.xi_kl_fwd_sq, r.xi_kl_fwd, r.xi_kl_rev_sq, r.xi_kl_rev, r.xi_jeffreys})
        CHECK(v >= 0.0);
      const double tol = 1e-12 * (1.0 + r.xi_l2);
      CHECK(r.xi_l1 <= r.xi_l2 + tol);
      CHECK(r.xi_l1 <= std::min(r.xi_kl_fwd_sq, r.xi_kl_rev_sq) + tol);
      CHECK(r.xi_kl_fwd_sq <= r.xi_kl_fwd + tol);
      CHECK(r.xi_kl_rev_sq <= r.xi_kl_rev + tol);
      const BoundReport z = xi_bounds(ps, ps, ell, k);
      for (double v : {z.xi_l2, z.xi_l1, z.xi_kl_fwd_sq, z.xi_kl_fwd, z.xi_kl_rev_sq, z.xi_kl_rev, z.xi_jeffreys})
        CHECK(v == 0.0);
    }
  }
}

TEST_CASE("Spearman") {
  const Vector x{1, 2, 3, 4, 5};
  CHECK(*spearman(x, Vector{2, 4, 8, 16, 32}) == doctest::Approx(1.0));
  CHECK(*spearman(x, Vector{5, 4, 3, 2, 1}) == doctest::Approx(-1.0));
  const Vector tied{1, 3, 3, 2, 5};
  CHECK(*spearman(x, tied) == doctest::Approx(oracle::spearman_bruteforce(x, tied)).epsilon(1e-14));
  CHECK_FALSE(spearman(x, Vector{1, 1, 1, 1, 1}).has_value());
  CHECK(fractional_ranks(tied) == Vector{1, 3.5, 3.5, 2, 5});

  std::mt19937_64 rng(8);
  for (int t = 0; t < 100; ++t) {
    Vector a = oracle::random_vector(rng, 40), b = oracle::random_vector(rng, 40);
    for (double& v : b) v = std::round(v * 2.0);  // ties
    const double rho = *spearman(a, b);
    CHECK(rho == doctest::Approx(oracle::spearman_bruteforce(a, b)).epsilon(1e-12));
    Vector ea = a;
    for (double& v : ea) v = std::exp(3 * v);
    CHECK(*spearman(ea, b) == doctest::Approx(rho).epsilon(1e-12));
  }
  CHECK(spearman_permutation_pvalue(x, Vector{2, 4, 8, 16, 32}, 2000, 1) < 0.05);
  CHECK(spearman_permutation_pvalue(x, Vector{2, 4, 8, 16, 32}, 2000, 1) ==
        spearman_permutation_pvalue(x, Vector{2, 4, 8, 16, 32}, 2000, 1));
}

TEST_CASE("mean and standard error") {
  const MeanSe m = mean_and_se(Vector{1.0, 2.0, 3.0, 4.0});
  CHECK(m.mean == 2.5);
  CHECK(m.se == doctest::Approx(std::sqrt(5.0 / 3.0) / 2.0));
  CHECK(mean_and_se(Vector{7.0}).se == 0.0);
}
