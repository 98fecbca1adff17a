#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>

#include "doctest.h"
#include "learnpath/supervision.hpp"
#include "learnpath/toygauss.hpp"
#include "oracles.hpp"

using namespace learnpath;

namespace {

std::vector<std::vector<double>> means_of(const ToyDataset& ds) {
  std::vector<std::vector<double>> out;
  for (std::size_t k = 0; k < ds.num_classes(); ++k) {
    const auto r = ds.means().row(k);
    out.emplace_back(r.begin(), r.end());
  }
  return out;
}

}  // namespace

TEST_CASE("class means") {
  GaussianSpec spec;
  spec.seed = 4;
  const DenseMatrix a = gen_class_means(spec);
  CHECK(a.rows() == 3);
  CHECK(a.cols() == 30);
  CHECK(a == gen_class_means(spec));
  for (double v : a.data()) CHECK((v == -1.0 || v == 0.0 || v == 1.0));

  spec.delta_mu = 0.0;
  const DenseMatrix flat = gen_class_means(spec);
  for (double v : flat.data()) CHECK(v == 0.0);

  // Chi-square over the three symbols, df = 2, critical value 9.21 at 0.01.
  GaussianSpec big;
  big.num_classes = 50;
  big.input_dim = 200;
  big.seed = 9;
  std::map<double, double> counts;
  const DenseMatrix big_means = gen_class_means(big);
  for (double v : big_means.data()) counts[v] += 1.0;
  const double expected = 50.0 * 200.0 / 3.0;
  double chi2 = 0.0;
  for (const auto& [v, c] : counts) chi2 += (c - expected) * (c - expected) / expected;
  CHECK(counts.size() == 3);
  CHECK(chi2 < 9.21);
}

TEST_CASE("posterior p*") {
  const DenseMatrix means(3, 2, {1, 0, -1, 0, 0, 0});
  SUBCASE("equidistant point is uniform") {
    const DenseMatrix tri(3, 2, {1, 0, -0.5, std::sqrt(3.0) / 2, -0.5, -std::sqrt(3.0) / 2});
    for (double v : compute_p_star(Vector{0, 0}, tri, 2.0)) CHECK(v == doctest::Approx(1.0 / 3.0));
  }
  SUBCASE("far separated means dominate") {
    const DenseMatrix far(3, 2, {0, 0, 100, 0, 0, 100});
    const Vector p = compute_p_star(Vector{0, 0}, far, 2.0);
    CHECK(p[0] == doctest::Approx(1.0));
  }
  SUBCASE("density-ratio oracle on generated samples") {
    GaussianSpec spec;
    spec.seed = 21;
    const ToyDataset ds = sample_dataset(spec, 300);
    const auto mu = means_of(ds);
    for (const auto& s : ds.samples()) {
      const auto ref = oracle::p_star_density(s.x, mu, spec.sigma);
      for (std::size_t k = 0; k < 3; ++k) CHECK(std::abs(s.p_star[k] - ref[k]) < 1e-10);
    }
  }
}

TEST_CASE("sampling") {
  GaussianSpec spec;
  spec.seed = 13;
  const std::size_t n = 6000;
  const ToyDataset ds = sample_dataset(spec, n);
  CHECK(ds.size() == n);

  std::vector<std::size_t> count(3, 0);
  std::vector<Vector> sum(3, Vector(30, 0.0));
  for (const auto& s : ds.samples()) {
    ++count[s.y];
    for (std::size_t j = 0; j < 30; ++j) sum[s.y][j] += s.x[j];
    CHECK(s.y == s.original_y);
  }
  for (std::size_t k = 0; k < 3; ++k) {
    // Binomial(n, 1/3): 5 standard deviations.
    const double sd = std::sqrt(n * (1.0 / 3.0) * (2.0 / 3.0));
    CHECK(std::abs(static_cast<double>(count[k]) - n / 3.0) < 5 * sd);
    for (std::size_t j = 0; j < 30; ++j) {
      const double mean = sum[k][j] / static_cast<double>(count[k]);
      CHECK(std::abs(mean - ds.means()(k, j)) < 4 * spec.sigma / std::sqrt(static_cast<double>(count[k])));
    }
  }

  GaussianSpec sharp = spec;
  sharp.sigma = 0.05;
  const ToyDataset sharp_ds = sample_dataset(sharp, 200);
  for (const auto& s : sharp_ds.samples()) CHECK(s.p_star[s.y] > 1.0 - 1e-9);

  CHECK(sample_dataset(spec, 50).samples()[7].x == sample_dataset(spec, 50).samples()[7].x);
}

TEST_CASE("split") {
  GaussianSpec spec;
  const ToyDataset base = sample_dataset(spec, 100);
  const ToyDataset s = split_dataset(base, {}, 3);
  CHECK(s.indices(Split::kTrain).size() == 5);
  CHECK(s.indices(Split::kValid).size() == 5);
  CHECK(s.indices(Split::kTest).size() == 90);
  CHECK(split_dataset(base, {}, 3).indices(Split::kTrain) == s.indices(Split::kTrain));
  CHECK_FALSE(split_dataset(base, {}, 4).indices(Split::kTrain) == s.indices(Split::kTrain));
  CHECK(split_dataset(base, {1.0, 0.0, 0.0}, 3).indices(Split::kTrain).size() == 100);
}

TEST_CASE("label flips") {
  GaussianSpec spec;
  spec.seed = 2;
  const ToyDataset ds = split_dataset(sample_dataset(spec, 2000), {0.5, 0.1, 0.4}, 1);
  CHECK(flip_labels(ds, 0.0, 5).flipped_indices().empty());

  const ToyDataset f = flip_labels(ds, 0.1, 5);
  const auto flipped = f.flipped_indices();
  CHECK(flipped.size() == 100);
  for (std::size_t n : flipped) {
    CHECK(f[n].split == Split::kTrain);
    CHECK(f[n].original_y == ds[n].y);
    CHECK(f[n].y != f[n].original_y);
  }
  for (std::size_t n = 0; n < ds.size(); ++n) {
    CHECK(f[n].x == ds[n].x);
    CHECK(f[n].p_star == ds[n].p_star);
  }
  const ToyDataset all = flip_labels(ds, 1.0, 5);
  CHECK(all.flipped_indices().size() == ds.indices(Split::kTrain).size());
  CHECK(flip_labels(ds, 0.1, 5).flipped_indices() == flipped);
}

TEST_CASE("target perturbation") {
  const Vector p{0.6, 0.3, 0.1};
  CHECK(perturb_target(p, 0.0, 1) == p);
  for (std::uint64_t s = 0; s < 200; ++s) {
    const Vector q = perturb_target(p, 0.5, s);
    double total = 0.0;
    for (double v : q) {
      CHECK(v >= 0.0);
      total += v;
    }
    CHECK(std::abs(total - 1.0) < 1e-12);
  }
  // Monte Carlo mean distance grows with the noise scale.
  double prev = 0.0;
  for (double scale : {0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0}) {
    double mean = 0.0;
    for (std::uint64_t s = 0; s < 2000; ++s) mean += distance_l2(perturb_target(p, scale, s), p);
    mean /= 2000.0;
    CHECK(mean > prev);
    prev = mean;
  }
}

TEST_CASE("dataset round trip") {
  GaussianSpec spec;
  spec.seed = 17;
  const ToyDataset ds = flip_labels(split_dataset(sample_dataset(spec, 120), {}, 2), 0.3, 8);
  const auto dir = std::filesystem::temp_directory_path() / "learnpath_toygauss_rt";
  std::filesystem::create_directories(dir);
  write_dataset(ds, dir / "d.csv", dir / "d.json");
  const ToyDataset back = read_dataset(dir / "d.csv", dir / "d.json");
  CHECK(back.spec() == ds.spec());
  CHECK(back.means() == ds.means());
  REQUIRE(back.size() == ds.size());
  for (std::size_t n = 0; n < ds.size(); ++n) {
    CHECK(back[n].x == ds[n].x);
    CHECK(back[n].p_star == ds[n].p_star);
    CHECK(back[n].y == ds[n].y);
    CHECK(back[n].original_y == ds[n].original_y);
    CHECK(back[n].split == ds[n].split);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("Bayes classifier beats a trained model") {
  GaussianSpec spec;
  spec.seed = 5;
  const ToyDataset ds = split_dataset(sample_dataset(spec, 4000), {0.1, 0.05, 0.85}, 5);
  TrainConfig tc;
  tc.max_epochs = 30;
  const double model_acc = evaluate_accuracy(train_model(ds, make_onehot_targets(ds), tc).best_model, ds, Split::kTest);
  const auto test = ds.indices(Split::kTest);
  double bayes = 0.0;
  for (std::size_t n : test) bayes += argmax(ds[n].p_star) == ds[n].y ? 1.0 : 0.0;
  bayes /= static_cast<double>(test.size());
  const double se = std::sqrt(bayes * (1 - bayes) / static_cast<double>(test.size()));
  CHECK(bayes + se >= model_acc);
}

TEST_CASE("spec validation") {
  GaussianSpec bad;
  bad.num_classes = 1;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = {};
  bad.sigma = 0.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = {};
  bad.delta_mu = -1.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}
