#include "learnpath/supervision.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "learnpath/csv.hpp"
#include "learnpath/rng.hpp"

namespace learnpath {

namespace {

constexpr const char* kProvenanceNames[] = {"onehot", "smoothed", "ground_truth", "kd_converged",
                                            "eskd",   "filter_kd", "custom"};

TargetTable table_for(const ToyDataset& ds, Provenance p) {
  return TargetTable{DenseMatrix(ds.size(), ds.num_classes()), p};
}

/// log softmax(z / τ)
Vector log_softmax_tempered(std::span<const double> logits, double temperature) {
  if (!all_finite(logits)) throw std::invalid_argument("kd_loss_and_grad: non-finite logits");
  Vector scaled(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) scaled[i] = logits[i] / temperature;
  const double peak = *std::max_element(scaled.begin(), scaled.end());
  double total = 0.0;
  for (double s : scaled) total += std::exp(s - peak);
  const double lse = peak + std::log(total);
  for (double& s : scaled) s -= lse;
  return scaled;
}

double cross_entropy(std::span<const double> target, std::span<const double> log_q) {
  double h = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i)
    if (target[i] > 0.0) h -= target[i] * log_q[i];
  return h;
}

}  // namespace

const char* to_string(Provenance p) { return kProvenanceNames[static_cast<int>(p)]; }

Provenance provenance_from_string(const std::string& s) {
  for (int i = 0; i < 7; ++i)
    if (s == kProvenanceNames[i]) return static_cast<Provenance>(i);
  throw std::invalid_argument("unknown provenance '" + s + "'");
}

bool TargetTable::in_simplex(double tol) const {
  for (std::size_t n = 0; n < size(); ++n) {
    double total = 0.0;
    for (double v : row(n)) {
      if (!(v >= -tol)) return false;
      total += v;
    }
    if (std::abs(total - 1.0) > tol) return false;
  }
  return true;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("TrainConfig: learning_rate must be > 0");
  if (!(temperature > 0.0)) throw std::invalid_argument("TrainConfig: temperature must be > 0");
  if (!(beta >= 0.0 && beta <= 1.0)) throw std::invalid_argument("TrainConfig: beta must lie in [0, 1]");
  if (max_epochs == 0) throw std::invalid_argument("TrainConfig: max_epochs must be >= 1");
  if (!(param_ema_alpha >= 0.0 && param_ema_alpha <= 1.0))
    throw std::invalid_argument("TrainConfig: param_ema_alpha must lie in [0, 1]");
  if (!(output_init_scale > 0.0))
    throw std::invalid_argument("TrainConfig: output_init_scale must be > 0");
  for (std::size_t h : hidden)
    if (h == 0) throw std::invalid_argument("TrainConfig: hidden widths must be positive");
}

double TrainResult::best_valid_accuracy() const {
  if (valid_accuracy.empty()) return 0.0;
  return *std::max_element(valid_accuracy.begin(), valid_accuracy.end());
}

// ---------------------------------------------------------------------------

TargetTable make_onehot_targets(const ToyDataset& ds) {
  TargetTable t = table_for(ds, Provenance::kOneHot);
  for (std::size_t n = 0; n < ds.size(); ++n) t.probs(n, ds[n].y) = 1.0;
  return t;
}

TargetTable make_ls_targets(const ToyDataset& ds, double epsilon) {
  if (!(epsilon >= 0.0 && epsilon <= 1.0))
    throw std::invalid_argument("make_ls_targets: epsilon must lie in [0, 1]");
  TargetTable t = table_for(ds, Provenance::kSmoothed);
  const double floor = epsilon / static_cast<double>(ds.num_classes());
  for (std::size_t n = 0; n < ds.size(); ++n) {
    for (double& v : t.probs.row(n)) v = floor;
    t.probs(n, ds[n].y) += 1.0 - epsilon;
  }
  return t;
}

TargetTable make_gt_targets(const ToyDataset& ds) {
  TargetTable t = table_for(ds, Provenance::kGroundTruth);
  for (std::size_t n = 0; n < ds.size(); ++n)
    std::copy(ds[n].p_star.begin(), ds[n].p_star.end(), t.probs.row(n).begin());
  return t;
}

TargetTable make_noisy_gt_targets(const ToyDataset& ds, double noise_scale, std::uint64_t seed) {
  TargetTable t = table_for(ds, Provenance::kCustom);
  for (std::size_t n = 0; n < ds.size(); ++n) {
    const Vector p = perturb_target(ds[n].p_star, noise_scale, derive_seed(seed, Stream::kPerturb, n));
    std::copy(p.begin(), p.end(), t.probs.row(n).begin());
  }
  return t;
}

Vector softmax_tempered(std::span<const double> logits, double temperature) {
  if (!(temperature > 0.0)) throw std::invalid_argument("softmax_tempered: temperature must be > 0");
  Vector scaled(logits.begin(), logits.end());
  for (double& v : scaled) v /= temperature;
  return softmax(scaled);
}

Vector temper_distribution(std::span<const double> p, double temperature) {
  if (!(temperature > 0.0)) throw std::invalid_argument("temper_distribution: temperature must be > 0");
  Vector out(p.begin(), p.end());
  if (temperature == 1.0) return out;
  // Work in log space so tiny entries survive large 1/τ.
  double peak = -HUGE_VAL;
  for (double v : p)
    if (v > 0.0) peak = std::max(peak, std::log(v) / temperature);
  double total = 0.0;
  for (double& v : out) {
    v = v > 0.0 ? std::exp(std::log(v) / temperature - peak) : 0.0;
    total += v;
  }
  for (double& v : out) v /= total;
  return out;
}

KdLoss kd_loss_and_grad(std::span<const double> logits, std::span<const double> p_tar,
                        std::size_t y, double temperature, double beta) {
  if (!(temperature > 0.0)) throw std::invalid_argument("kd_loss_and_grad: temperature must be > 0");
  if (p_tar.size() != logits.size() || y >= logits.size())
    throw std::invalid_argument("kd_loss_and_grad: shape mismatch");
  const std::size_t k = logits.size();
  KdLoss out;
  out.grad_logits.assign(k, 0.0);
  if (beta > 0.0) {
    const Vector log_q_tau = log_softmax_tempered(logits, temperature);
    const Vector p_tau = temper_distribution(p_tar, temperature);
    out.loss += beta / (temperature * temperature) * cross_entropy(p_tau, log_q_tau);
    for (std::size_t i = 0; i < k; ++i)
      out.grad_logits[i] += beta / temperature * (std::exp(log_q_tau[i]) - p_tau[i]);
  }
  if (beta < 1.0) {
    const Vector log_q = log_softmax_tempered(logits, 1.0);
    out.loss += (1.0 - beta) * -log_q[y];
    for (std::size_t i = 0; i < k; ++i)
      out.grad_logits[i] += (1.0 - beta) * (std::exp(log_q[i]) - (i == y ? 1.0 : 0.0));
  }
  return out;
}

// ---------------------------------------------------------------------------

DenseMatrix predict_all(const MlpModel& model, const ToyDataset& ds) {
  DenseMatrix out(ds.size(), model.output_dim());
  for (std::size_t n = 0; n < ds.size(); ++n) {
    const Vector q = mlp_predict(model, ds[n].x);
    std::copy(q.begin(), q.end(), out.row(n).begin());
  }
  return out;
}

namespace {

double accuracy_on(const MlpModel& model, const ToyDataset& ds,
                   const std::vector<std::size_t>& idx) {
  if (idx.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t n : idx)
    if (argmax(mlp_logits(model, ds[n].x)) == ds[n].y) ++hits;
  return static_cast<double>(hits) / static_cast<double>(idx.size());
}

}  // namespace

double evaluate_accuracy(const MlpModel& model, const ToyDataset& ds, Split split) {
  return accuracy_on(model, ds, ds.indices(split));
}

TrainResult train_model(const ToyDataset& ds, const TargetTable& targets,
                        const TrainConfig& config, const TrainHooks& hooks) {
  config.validate();
  if (targets.size() != ds.size() || targets.num_classes() != ds.num_classes())
    throw std::invalid_argument("train_model: target table does not match dataset");
  const std::vector<std::size_t> train = ds.indices(Split::kTrain);
  const std::vector<std::size_t> valid = ds.indices(Split::kValid);
  if (train.empty()) throw std::invalid_argument("train_model: no training samples");
  if (valid.empty() && config.stop_rule == StopRule::kValidPatience)
    throw std::invalid_argument("train_model: early stopping needs validation samples");

  std::vector<std::size_t> layers{ds.spec().input_dim};
  layers.insert(layers.end(), config.hidden.begin(), config.hidden.end());
  layers.push_back(ds.num_classes());

  TrainResult result;
  MlpModel model = MlpModel::he_init(layers, derive_seed(config.seed, Stream::kInit),
                                     config.output_init_scale);
  result.initial_model = model;
  result.best_model = model;
  if (config.record_paths) result.paths.emplace(ds.num_classes(), config.path_granularity);
  if (config.param_ema_alpha > 0.0) result.param_ema_model = model;
  if (hooks.on_epoch_end) hooks.on_epoch_end(0, model);

  Rng shuffle = make_rng(config.seed, Stream::kShuffle);
  std::vector<std::size_t> order = train;
  MlpGradient grad = model.zero_gradient();
  std::size_t step = 0;
  double best_acc = -1.0;
  std::size_t since_best = 0;
  std::size_t epochs_at_full = 0;

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle);
    for (std::size_t n : order) {
      const ForwardCache cache = mlp_forward(model, ds[n].x);
      if (!all_finite(cache.logits()))
        throw TrainingDivergence("train_model: non-finite logits at step " + std::to_string(step) +
                                 " (epoch " + std::to_string(epoch) + ")");
      const Vector q = softmax(cache.logits());
      if (result.paths && config.path_granularity == Granularity::kPerVisit)
        result.paths->record(n, step, q);
      if (hooks.on_visit) hooks.on_visit(n, step, q);

      const KdLoss kd =
          kd_loss_and_grad(cache.logits(), targets.row(n), ds[n].y, config.temperature, config.beta);
      if (!std::isfinite(kd.loss))
        throw TrainingDivergence("train_model: non-finite loss at step " + std::to_string(step) +
                                 " (epoch " + std::to_string(epoch) + ")");
      mlp_backward(model, cache, kd.grad_logits, grad);
      apply_sgd_step(model, grad, config.learning_rate);
      ++step;
      if (result.param_ema_model)
        param_ema_update(*result.param_ema_model, model, config.param_ema_alpha);
    }
    if (!model.params().all_finite())
      throw TrainingDivergence("train_model: non-finite parameters after epoch " +
                               std::to_string(epoch));
    if (result.paths) {
      if (config.path_granularity == Granularity::kPerEpoch)
        for (std::size_t n : train) result.paths->record(n, step, mlp_predict(model, ds[n].x));
      result.paths->mark_epoch_complete();
    }

    const double valid_acc = accuracy_on(model, ds, valid);
    const double train_acc = accuracy_on(model, ds, train);
    result.valid_accuracy.push_back(valid_acc);
    result.train_accuracy.push_back(train_acc);
    result.stop_epoch = epoch;
    if (valid_acc > best_acc) {
      best_acc = valid_acc;
      result.best_model = model;
      result.best_epoch = epoch;
      since_best = 0;
      if (hooks.on_new_best) hooks.on_new_best(epoch, model);
    } else {
      ++since_best;
    }
    if (hooks.on_epoch_end) hooks.on_epoch_end(epoch, model);

    if (config.stop_rule == StopRule::kValidPatience && since_best >= config.patience) break;
    epochs_at_full = train_acc >= 1.0 ? epochs_at_full + 1 : 0;
    if (config.stop_rule == StopRule::kTrainConverged && epochs_at_full >= config.patience) break;
  }
  result.total_steps = step;
  result.final_model = std::move(model);
  return result;
}

FilterKdTeacher train_teacher_filterkd_multi(const ToyDataset& ds, const TrainConfig& config,
                                             std::span<const double> alphas,
                                             const TrainHooks& hooks, FilterFreeze freeze) {
  for (double a : alphas)
    if (!(a > 0.0 && a <= 1.0))
      throw std::invalid_argument("train_teacher_filterkd: alpha must lie in (0, 1]");
  FilterKdTeacher teacher;
  teacher.tables.assign(alphas.size(), TargetTable{DenseMatrix(), Provenance::kFilterKd});

  std::vector<DenseMatrix> at_best;
  TrainHooks inner;
  inner.on_new_best = [&](std::size_t epoch, const MlpModel& model) {
    if (freeze == FilterFreeze::kBestEpoch) {
      at_best.clear();
      for (const auto& t : teacher.tables) at_best.push_back(t.probs);
    }
    if (hooks.on_new_best) hooks.on_new_best(epoch, model);
  };
  inner.on_epoch_end = [&](std::size_t epoch, const MlpModel& model) {
    if (epoch == 0) {
      const DenseMatrix init = predict_all(model, ds);
      for (auto& t : teacher.tables) t.probs = init;
    }
    if (hooks.on_epoch_end) hooks.on_epoch_end(epoch, model);
  };
  inner.on_visit = [&](std::size_t n, std::size_t step, std::span<const double> p_hat) {
    for (std::size_t a = 0; a < alphas.size(); ++a) {
      auto row = teacher.tables[a].probs.row(n);
      for (std::size_t k = 0; k < row.size(); ++k)
        row[k] = (1.0 - alphas[a]) * row[k] + alphas[a] * p_hat[k];
    }
    if (hooks.on_visit) hooks.on_visit(n, step, p_hat);
  };
  TrainConfig onehot = config;
  onehot.temperature = 1.0;
  onehot.beta = 1.0;
  teacher.result = train_model(ds, make_onehot_targets(ds), onehot, inner);
  if (freeze == FilterFreeze::kBestEpoch)
    for (std::size_t a = 0; a < alphas.size(); ++a) teacher.tables[a].probs = std::move(at_best[a]);
  return teacher;
}

TrainResult train_teacher_filterkd(const ToyDataset& ds, const TrainConfig& config, double alpha,
                                   const TrainHooks& hooks, FilterFreeze freeze) {
  const double alphas[] = {alpha};
  FilterKdTeacher t = train_teacher_filterkd_multi(ds, config, alphas, hooks, freeze);
  t.result.q_smooth = std::move(t.tables.front());
  return std::move(t.result);
}

TargetTable extract_eskd_targets(const TrainResult& result, const ToyDataset& ds) {
  return TargetTable{predict_all(result.best_model, ds), Provenance::kEskd};
}

TargetTable extract_kd_targets(const TrainResult& result, const ToyDataset& ds) {
  return TargetTable{predict_all(result.final_model, ds), Provenance::kKdConverged};
}

void param_ema_update(MlpModel& track, const MlpModel& train, double alpha) {
  if (!track.same_architecture(train))
    throw std::invalid_argument("param_ema_tracker: architectures differ");
  auto& t = track.params().layers;
  const auto& w = train.params().layers;
  for (std::size_t l = 0; l < t.size(); ++l) {
    auto td = t[l].weights.data();
    const auto wd = w[l].weights.data();
    for (std::size_t i = 0; i < td.size(); ++i) td[i] = (1.0 - alpha) * td[i] + alpha * wd[i];
    for (std::size_t i = 0; i < t[l].bias.size(); ++i)
      t[l].bias[i] = (1.0 - alpha) * t[l].bias[i] + alpha * w[l].bias[i];
  }
}

MlpModel param_ema_tracker(const MlpModel& track, const MlpModel& train, double alpha) {
  MlpModel out = track;
  param_ema_update(out, train, alpha);
  return out;
}

// ---------------------------------------------------------------------------

void write_targets(const TargetTable& t, const std::filesystem::path& path) {
  std::ostringstream os;
  os << "index";
  for (std::size_t k = 0; k < t.num_classes(); ++k) os << ",k" << k;
  os << ",provenance\n";
  for (std::size_t n = 0; n < t.size(); ++n) {
    os << n;
    for (double v : t.row(n)) os << ',' << format_double(v);
    os << ',' << to_string(t.provenance) << '\n';
  }
  write_file_atomic(path, os.str());
}

TargetTable read_targets(const std::filesystem::path& path) {
  std::istringstream is(read_file(path));
  std::string line;
  std::getline(is, line);
  const std::size_t k = split_csv_line(line).size() - 2;
  std::vector<double> data;
  std::size_t rows = 0;
  Provenance prov = Provenance::kCustom;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != k + 2 || parse_size(f[0]) != rows)
      throw std::runtime_error("read_targets: malformed row " + std::to_string(rows));
    for (std::size_t i = 0; i < k; ++i) data.push_back(parse_double(f[1 + i]));
    prov = provenance_from_string(f.back());
    ++rows;
  }
  return TargetTable{DenseMatrix(rows, k, std::move(data)), prov};
}

void write_checkpoint(const MlpModel& model, const std::filesystem::path& path) {
  std::ostringstream os;
  os << "layer_sizes";
  for (std::size_t s : model.layer_sizes()) os << ' ' << s;
  os << '\n';
  for (double v : model.params().flatten()) os << format_double(v) << '\n';
  write_file_atomic(path, os.str());
}

MlpModel read_checkpoint(const std::filesystem::path& path) {
  std::istringstream is(read_file(path));
  std::string line;
  std::getline(is, line);
  std::istringstream head(line);
  std::string tag;
  head >> tag;
  if (tag != "layer_sizes") throw std::runtime_error("read_checkpoint: missing layer_sizes header");
  std::vector<std::size_t> sizes;
  for (std::size_t s; head >> s;) sizes.push_back(s);
  MlpModel model(sizes);
  Vector flat;
  while (std::getline(is, line))
    if (!line.empty()) flat.push_back(parse_double(line));
  model.params().assign_flat(flat);
  return model;
}

}  // namespace learnpath
