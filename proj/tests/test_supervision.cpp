#include <cmath>
#include <filesystem>
#include <random>

#include "doctest.h"
#include "learnpath/supervision.hpp"
#include "oracles.hpp"

using namespace learnpath;

namespace {

ToyDataset small_dataset(std::uint64_t seed = 1, std::size_t n = 600, double flip = 0.0) {
  GaussianSpec spec;
  spec.seed = seed;
  ToyDataset ds = split_dataset(sample_dataset(spec, n), {0.3, 0.2, 0.5}, seed);
  return flip > 0.0 ? flip_labels(std::move(ds), flip, seed) : ds;
}

TrainConfig small_config() {
  TrainConfig tc;
  tc.hidden = {32, 32};
  tc.max_epochs = 15;
  tc.seed = 3;
  return tc;
}

double kd_loss_only(const Vector& z, const Vector& p, std::size_t y, double tau, double beta) {
  return kd_loss_and_grad(z, p, y, tau, beta).loss;
}

Vector central_diff(const Vector& z, const Vector& p, std::size_t y, double tau, double beta) {
  Vector g(z.size());
  const double h = 1e-5;
  for (std::size_t i = 0; i < z.size(); ++i) {
    Vector up = z, down = z;
    up[i] += h;
    down[i] -= h;
    g[i] = (kd_loss_only(up, p, y, tau, beta) - kd_loss_only(down, p, y, tau, beta)) / (2 * h);
  }
  return g;
}

}  // namespace

TEST_CASE("target table constructors") {
  const ToyDataset ds = small_dataset(2, 300, 0.2);
  const TargetTable oh = make_onehot_targets(ds);
  CHECK(oh.in_simplex());
  for (std::size_t n = 0; n < ds.size(); ++n) CHECK(oh.probs(n, ds[n].y) == 1.0);
  const std::size_t f = ds.flipped_indices().front();
  CHECK(oh.probs(f, ds[f].original_y) == 0.0);

  CHECK(make_ls_targets(ds, 0.0).probs == oh.probs);
  const TargetTable uni = make_ls_targets(ds, 1.0);
  for (double v : uni.probs.data()) CHECK(v == doctest::Approx(1.0 / 3.0));
  const TargetTable ls = make_ls_targets(ds, 0.1);
  CHECK(ls.in_simplex());
  for (std::size_t n = 0; n < ds.size(); ++n)
    for (std::size_t k = 0; k < 3; ++k)
      CHECK(ls.probs(n, k) == doctest::Approx(k == ds[n].y ? 0.9 + 0.1 / 3 : 0.1 / 3));

  const TargetTable gt = make_gt_targets(ds);
  for (std::size_t n = 0; n < ds.size(); ++n) {
    CHECK(Vector(gt.row(n).begin(), gt.row(n).end()) == ds[n].p_star);
    CHECK(distance_l2(gt.row(n), oh.row(n)) == doctest::Approx(distance_l2(one_hot(ds[n].y, 3), ds[n].p_star)));
  }
  CHECK(make_noisy_gt_targets(ds, 0.3, 4).in_simplex());
  CHECK(make_noisy_gt_targets(ds, 0.0, 4).probs == gt.probs);
}

TEST_CASE("distillation loss and gradient") {
  const Vector z{0.4, -1.1, 2.3};
  const Vector p{0.2, 0.5, 0.3};
  SUBCASE("tau 1, beta 1 is soft cross-entropy") {
    const KdLoss r = kd_loss_and_grad(z, p, 0, 1.0, 1.0);
    const Vector q = oracle::softmax_ld(z);
    CHECK(r.loss == doctest::Approx(oracle::cross_entropy_soft(z, p)).epsilon(1e-12));
    for (int i = 0; i < 3; ++i) CHECK(r.grad_logits[i] == doctest::Approx(q[i] - p[i]).epsilon(1e-12));
  }
  SUBCASE("beta 0 is hard-label cross-entropy") {
    const KdLoss r = kd_loss_and_grad(z, p, 2, 3.0, 0.0);
    const Vector q = oracle::softmax_ld(z);
    CHECK(r.loss == doctest::Approx(-std::log(q[2])).epsilon(1e-12));
    for (int i = 0; i < 3; ++i)
      CHECK(r.grad_logits[i] == doctest::Approx(q[i] - (i == 2 ? 1.0 : 0.0)).epsilon(1e-12));
  }
  SUBCASE("closed-form gradient against differences of the loss") {
    std::mt19937_64 rng(44);
    for (double tau : {0.5, 1.0, 2.0, 4.0, 10.0})
      for (double beta : {0.0, 0.5, 1.0}) {
        for (int t = 0; t < 20; ++t) {
          const Vector logits = oracle::random_vector(rng, 3, 2.0);
          const Vector target = oracle::random_simplex(rng, 3);
          const std::size_t y = t % 3;
          const Vector fd = central_diff(logits, target, y, tau, beta);
          const KdLoss closed = kd_loss_and_grad(logits, target, y, tau, beta);
          // The soft part of the closed form is τ² times the true derivative.
          const KdLoss soft = kd_loss_and_grad(logits, target, y, tau, 1.0);
          Vector corrected(3);
          for (int i = 0; i < 3; ++i)
            corrected[i] = closed.grad_logits[i] - beta * soft.grad_logits[i] * (1.0 - 1.0 / (tau * tau));
          CHECK(max_relative_error(corrected, fd, 1e-6) < 1e-5);
          if (tau == 1.0 || beta == 0.0) CHECK(max_relative_error(closed.grad_logits, fd, 1e-6) < 1e-5);
        }
      }
  }
  SUBCASE("tempering") {
    const Vector t = temper_distribution(p, 2.0);
    double total = 0.0;
    for (std::size_t i = 0; i < 3; ++i) {
      total += t[i];
      CHECK(t[i] == doctest::Approx(std::sqrt(p[i]) / (std::sqrt(0.2) + std::sqrt(0.5) + std::sqrt(0.3))));
    }
    CHECK(total == doctest::Approx(1.0));
    CHECK(temper_distribution(Vector{1.0, 0.0, 0.0}, 0.1) == Vector{1.0, 0.0, 0.0});
    const Vector st = softmax_tempered(z, 2.0);
    const Vector ref = oracle::softmax_ld({0.2, -0.55, 1.15});
    for (int i = 0; i < 3; ++i) CHECK(st[i] == doctest::Approx(ref[i]).epsilon(1e-14));
  }
}

TEST_CASE("training") {
  const ToyDataset ds = small_dataset();
  TrainConfig tc = small_config();

  SUBCASE("deterministic") {
    const TrainResult a = train_model(ds, make_onehot_targets(ds), tc);
    const TrainResult b = train_model(ds, make_onehot_targets(ds), tc);
    CHECK(a.final_model == b.final_model);
    CHECK(a.best_model == b.best_model);
    CHECK(a.valid_accuracy == b.valid_accuracy);
    CHECK(a.best_epoch == b.best_epoch);
  }
  SUBCASE("memorizes one-hot labels") {
    tc.stop_rule = StopRule::kTrainConverged;
    tc.max_epochs = 200;
    tc.patience = 3;
    const TrainResult r = train_model(small_dataset(5, 200), make_onehot_targets(small_dataset(5, 200)), tc);
    CHECK(r.train_accuracy.back() == 1.0);
  }
  SUBCASE("early stopping tracks the best validation epoch") {
    tc.max_epochs = 40;
    tc.patience = 3;
    const TrainResult r = train_model(ds, make_onehot_targets(ds), tc);
    CHECK(r.best_valid_accuracy() == r.valid_accuracy[r.best_epoch - 1]);
    CHECK(evaluate_accuracy(r.best_model, ds, Split::kValid) == r.best_valid_accuracy());
    CHECK(r.stop_epoch <= r.best_epoch + tc.patience);
  }
  SUBCASE("paths hold one point per epoch for each training sample") {
    tc.record_paths = true;
    tc.max_epochs = 6;
    tc.stop_rule = StopRule::kFixedEpochs;
    const TrainResult r = train_model(ds, make_onehot_targets(ds), tc);
    REQUIRE(r.paths.has_value());
    CHECK(r.paths->num_samples() == ds.indices(Split::kTrain).size());
    for (const auto& [n, path] : r.paths->paths()) CHECK(path.size() == r.stop_epoch);
  }
  SUBCASE("errors") {
    ToyDataset none = ds;
    for (auto& s : none.samples()) s.split = Split::kTest;
    CHECK_THROWS_AS(train_model(none, make_onehot_targets(none), tc), std::invalid_argument);
    tc.learning_rate = 0.0;
    CHECK_THROWS_AS(train_model(ds, make_onehot_targets(ds), tc), std::invalid_argument);
  }
}

TEST_CASE("teacher targets") {
  const ToyDataset ds = small_dataset();
  const TrainResult r = train_model(ds, make_onehot_targets(ds), small_config());
  const TargetTable eskd = extract_eskd_targets(r, ds);
  const TargetTable kd = extract_kd_targets(r, ds);
  CHECK(eskd.in_simplex());
  CHECK(kd.in_simplex());
  CHECK(eskd.provenance == Provenance::kEskd);
  CHECK(extract_eskd_targets(r, ds).probs == eskd.probs);

  TrainResult same = r;
  same.best_model = same.final_model;
  CHECK(extract_eskd_targets(same, ds).probs == kd.probs);

  TrainConfig tc = small_config();
  tc.stop_rule = StopRule::kTrainConverged;
  tc.max_epochs = 300;
  tc.patience = 5;
  const ToyDataset tiny = small_dataset(8, 150);
  const TrainResult conv = train_model(tiny, make_onehot_targets(tiny), tc);
  const TargetTable kdc = extract_kd_targets(conv, tiny);
  double gap = 0.0;
  const auto train = tiny.indices(Split::kTrain);
  for (std::size_t n : train) gap += distance_l2(kdc.row(n), one_hot(tiny[n].y, 3));
  CHECK(gap / static_cast<double>(train.size()) < 0.1);
}

TEST_CASE("Filter-KD teacher") {
  const ToyDataset ds = small_dataset(3, 600, 0.2);
  TrainConfig tc = small_config();
  tc.max_epochs = 8;
  tc.stop_rule = StopRule::kFixedEpochs;

  SUBCASE("alpha 1 keeps the last visit of the stopping epoch") {
    std::vector<Vector> last(ds.size());
    TrainHooks hooks;
    hooks.on_visit = [&](std::size_t n, std::size_t, std::span<const double> q) { last[n].assign(q.begin(), q.end()); };
    const TrainResult r = train_teacher_filterkd(ds, tc, 1.0, hooks);
    REQUIRE(r.q_smooth.has_value());
    for (std::size_t n : ds.indices(Split::kTrain))
      for (std::size_t k = 0; k < 3; ++k) CHECK(r.q_smooth->probs(n, k) == doctest::Approx(last[n][k]).epsilon(1e-14));
  }
  SUBCASE("tables stay convex combinations") {
    const std::vector<double> alphas{0.01, 0.05, 0.5};
    const FilterKdTeacher t = train_teacher_filterkd_multi(ds, tc, alphas);
    REQUIRE(t.tables.size() == 3);
    for (const auto& table : t.tables) {
      CHECK(table.in_simplex());
      for (double v : table.probs.data()) CHECK((v >= 0.0 && v <= 1.0));
      CHECK(table.provenance == Provenance::kFilterKd);
    }
    const TrainResult single = train_teacher_filterkd(ds, tc, 0.05);
    CHECK(single.q_smooth->probs == t.tables[1].probs);
  }
  SUBCASE("a frozen model converges geometrically") {
    tc.learning_rate = 1e-300;
    const double alpha = 0.2;
    const TrainResult r = train_teacher_filterkd(ds, tc, alpha);
    const DenseMatrix fixed = predict_all(r.initial_model, ds);
    for (std::size_t n : ds.indices(Split::kTrain))
      for (std::size_t k = 0; k < 3; ++k) CHECK(r.q_smooth->probs(n, k) == doctest::Approx(fixed(n, k)).epsilon(1e-12));
  }
  SUBCASE("best-epoch freeze matches the table at the best epoch") {
    tc.stop_rule = StopRule::kValidPatience;
    tc.patience = 2;
    tc.max_epochs = 30;
    const std::vector<double> alphas{0.1};
    const FilterKdTeacher stop = train_teacher_filterkd_multi(ds, tc, alphas);
    const FilterKdTeacher frozen = train_teacher_filterkd_multi(ds, tc, alphas, {}, FilterFreeze::kBestEpoch);
    CHECK(stop.result.best_epoch == frozen.result.best_epoch);
    if (stop.result.stop_epoch > stop.result.best_epoch) CHECK_FALSE(stop.tables[0].probs == frozen.tables[0].probs);
  }
  CHECK_THROWS_AS(train_teacher_filterkd(ds, tc, 0.0), std::invalid_argument);
}

TEST_CASE("parameter-space tracker") {
  MlpModel track({1, 1}), train({1, 1});
  train.params().layers[0].weights(0, 0) = 1.0;
  CHECK(param_ema_tracker(track, train, 0.1).params().layers[0].weights(0, 0) == doctest::Approx(0.1));
  CHECK(param_ema_tracker(track, train, 1.0) == train);
  MlpModel t = track;
  for (int i = 0; i < 50; ++i) param_ema_update(t, train, 0.1);
  CHECK(t.params().layers[0].weights(0, 0) == doctest::Approx(1.0 - std::pow(0.9, 50)));
  CHECK_THROWS(param_ema_tracker(MlpModel({2, 1}), train, 0.1));
}

TEST_CASE("targets and checkpoints round trip") {
  const auto dir = std::filesystem::temp_directory_path() / "learnpath_supervision_rt";
  std::filesystem::create_directories(dir);
  const ToyDataset ds = small_dataset(4, 100);
  const TargetTable t = make_noisy_gt_targets(ds, 0.2, 1);
  write_targets(t, dir / "t.csv");
  const TargetTable back = read_targets(dir / "t.csv");
  CHECK(back.probs == t.probs);
  CHECK(back.provenance == t.provenance);

  const MlpModel m = MlpModel::he_init({30, 8, 3}, 6);
  write_checkpoint(m, dir / "m.txt");
  CHECK(read_checkpoint(dir / "m.txt") == m);
  std::filesystem::remove_all(dir);
}
