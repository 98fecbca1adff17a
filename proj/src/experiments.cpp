#include "learnpath/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <iostream>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "learnpath/csv.hpp"
#include "learnpath/rng.hpp"

namespace learnpath {

namespace {

constexpr std::size_t kPermutations = 2000;

std::string csv_document(const ExperimentConfig& cfg, const std::string& columns,
                         const std::string& body) {
  return cfg.header_comment() + columns + "\n" + body;
}

void write_csv(const ExperimentConfig& cfg, const std::string& name, const std::string& columns,
               const std::string& body) {
  write_file_atomic(cfg.output_dir / name, csv_document(cfg, columns, body));
}

std::string fmt(double v) { return format_double(v); }

std::string fmt_opt(const std::optional<double>& v) { return v ? fmt(*v) : "nan"; }

TrainConfig student_config(const ExperimentConfig& cfg, std::uint64_t seed, std::size_t index) {
  TrainConfig t = cfg.train;
  t.seed = cfg.shared_student_init ? seed : derive_seed(seed, Stream::kStudent, index);
  t.record_paths = false;
  return t;
}

TrainConfig teacher_config(const ExperimentConfig& cfg, std::uint64_t seed, StopRule rule) {
  TrainConfig t = cfg.train;
  t.seed = seed;
  t.stop_rule = rule;
  t.temperature = 1.0;
  t.beta = 1.0;
  return t;
}

DenseMatrix p_star_table(const ToyDataset& ds) {
  DenseMatrix p(ds.size(), ds.num_classes());
  for (std::size_t n = 0; n < ds.size(); ++n)
    std::copy(ds[n].p_star.begin(), ds[n].p_star.end(), p.row(n).begin());
  return p;
}

std::vector<std::size_t> original_labels(const ToyDataset& ds, std::span<const std::size_t> idx) {
  std::vector<std::size_t> out;
  out.reserve(idx.size());
  for (std::size_t n : idx) out.push_back(ds[n].original_y);
  return out;
}

/// Prints the message and maps the exception type onto an exit status.
template <class Fn>
int guarded(const char* name, Fn&& fn) {
  try {
    fn();
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << name << ": invalid configuration: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << name << ": " << e.what() << "\n";
    return 2;
  }
}

/// Validates the config and the dataset it points to before any output.
void preflight(const ExperimentConfig& cfg, ExperimentKind expected) {
  if (cfg.kind != expected)
    throw ConfigError(std::string("config kind '") + to_string(cfg.kind) + "' does not match '" +
                      to_string(expected) + "'");
  cfg.validate();
  if (cfg.dataset_csv) {
    ToyDataset ds;
    try {
      ds = read_dataset(*cfg.dataset_csv, *cfg.dataset_header);
    } catch (const std::exception& e) {
      throw ConfigError(std::string("cannot load dataset: ") + e.what());
    }
    if (ds.num_classes() != cfg.gaussian.num_classes || ds.spec().input_dim != cfg.gaussian.input_dim)
      throw ConfigError("dataset shape does not match num_classes/input_dim");
    if (ds.indices(Split::kTrain).empty() || ds.indices(Split::kValid).empty())
      throw ConfigError("dataset needs train and valid samples");
  }
}

}  // namespace

std::uint64_t run_seed(std::uint64_t master, std::uint64_t s) {
  return derive_seed(master, Stream::kRun, s);
}

ToyDataset build_dataset(const ExperimentConfig& cfg, std::uint64_t seed, double flip_ratio) {
  ToyDataset ds;
  if (cfg.dataset_csv) {
    ds = read_dataset(*cfg.dataset_csv, *cfg.dataset_header);
    if (flip_ratio > 0.0 && !ds.flipped_indices().empty())
      throw ConfigError("dataset already carries flipped labels; set flip ratios to 0");
  } else {
    GaussianSpec spec = cfg.gaussian;
    spec.seed = seed;
    ds = split_dataset(sample_dataset(spec, cfg.num_samples), cfg.split, seed);
  }
  if (flip_ratio > 0.0) ds = flip_labels(std::move(ds), flip_ratio, seed);
  return ds;
}

void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> workers;
  for (std::size_t w = 0; w < jobs; ++w)
    workers.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  for (auto& t : workers) t.join();
  if (error) std::rethrow_exception(error);
}

TestMetrics evaluate_test(const MlpModel& model, const ToyDataset& ds, std::size_t ece_bins) {
  const std::vector<std::size_t> test = ds.indices(Split::kTest);
  if (test.empty()) throw std::invalid_argument("evaluate_test: no test samples");
  DenseMatrix preds(test.size(), ds.num_classes());
  std::vector<std::size_t> labels;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const Vector q = mlp_predict(model, ds[test[i]].x);
    std::copy(q.begin(), q.end(), preds.row(i).begin());
    labels.push_back(ds[test[i]].y);
  }
  return {accuracy(preds, labels), ece(preds, labels, EceConfig{ece_bins})};
}

// ---------------------------------------------------------------------------
// correlate

CorrelateResult run_correlate(const ExperimentConfig& cfg) {
  const ToyDataset ds = build_dataset(cfg, cfg.master_seed, cfg.flip_ratio);
  const std::vector<std::size_t> train = ds.indices(Split::kTrain);
  const DenseMatrix p_star = p_star_table(ds);

  // One converged one-hot teacher per seed provides the KD and ESKD targets.
  std::vector<TrainResult> teachers(cfg.seeds.size());
  std::vector<std::string> teacher_errors(cfg.seeds.size());
  parallel_for(cfg.seeds.size(), cfg.jobs, [&](std::size_t s) {
    try {
      teachers[s] = train_model(ds, make_onehot_targets(ds),
                                teacher_config(cfg, run_seed(cfg.master_seed, cfg.seeds[s]),
                                               StopRule::kTrainConverged));
    } catch (const TrainingDivergence& e) {
      teacher_errors[s] = e.what();
    }
  });

  static const char* kBaselines[] = {"onehot", "smoothed", "ground_truth", "kd_converged", "eskd"};
  struct Job {
    std::size_t seed_pos;
    std::string supervision;
    double noise;
    std::size_t index;
  };
  std::vector<Job> jobs;
  for (std::size_t s = 0; s < cfg.seeds.size(); ++s) {
    std::size_t index = 0;
    for (const char* b : kBaselines) jobs.push_back({s, b, 0.0, index++});
    for (double noise : cfg.noise_grid) jobs.push_back({s, "noisy_gt", noise, index++});
  }

  CorrelateResult out;
  out.runs.resize(jobs.size());
  parallel_for(jobs.size(), cfg.jobs, [&](std::size_t j) {
    const Job& job = jobs[j];
    const std::uint64_t seed = run_seed(cfg.master_seed, cfg.seeds[job.seed_pos]);
    CorrelateRun& run = out.runs[j];
    run.supervision = job.supervision;
    run.noise_scale = job.noise;
    run.seed = cfg.seeds[job.seed_pos];
    const bool needs_teacher = job.supervision == "kd_converged" || job.supervision == "eskd";
    if (needs_teacher && !teacher_errors[job.seed_pos].empty()) {
      run.diverged = true;
      run.error = "teacher: " + teacher_errors[job.seed_pos];
      return;
    }
    TargetTable targets;
    if (job.supervision == "onehot") targets = make_onehot_targets(ds);
    else if (job.supervision == "smoothed") targets = make_ls_targets(ds, cfg.ls_epsilon);
    else if (job.supervision == "ground_truth") targets = make_gt_targets(ds);
    else if (job.supervision == "kd_converged") targets = extract_kd_targets(teachers[job.seed_pos], ds);
    else if (job.supervision == "eskd") targets = extract_eskd_targets(teachers[job.seed_pos], ds);
    else targets = make_noisy_gt_targets(ds, job.noise, derive_seed(seed, Stream::kPerturb, job.index));
    run.l2_gap = mean_gap(targets, p_star, train, GapNorm::kL2);
    try {
      const TrainResult r = train_model(ds, targets, student_config(cfg, seed, job.index));
      const TestMetrics m = evaluate_test(r.best_model, ds, cfg.ece_bins);
      run.test_accuracy = m.accuracy;
      run.test_ece = m.ece;
    } catch (const TrainingDivergence& e) {
      run.diverged = true;
      run.error = e.what();
    }
  });

  std::vector<double> gaps, accs, eces;
  for (const auto& r : out.runs) {
    if (r.diverged) continue;
    gaps.push_back(r.l2_gap);
    accs.push_back(r.test_accuracy);
    eces.push_back(r.test_ece);
  }
  out.completed = gaps.size();
  if (gaps.size() >= 2) {
    out.rho_accuracy = spearman(gaps, accs);
    out.rho_ece = spearman(gaps, eces);
    const std::uint64_t pseed = derive_seed(cfg.master_seed, Stream::kPairs);
    out.p_accuracy = spearman_permutation_pvalue(gaps, accs, kPermutations, pseed);
    out.p_ece = spearman_permutation_pvalue(gaps, eces, kPermutations, pseed + 1);
  }
  for (const char* b : kBaselines) {
    std::vector<double> v;
    for (const auto& r : out.runs)
      if (!r.diverged && r.supervision == b) v.push_back(r.test_accuracy);
    out.baseline_accuracy.emplace_back(b, mean_and_se(v));
  }
  return out;
}

int cmd_correlate(const ExperimentConfig& cfg) {
  return guarded("correlate", [&] {
    preflight(cfg, ExperimentKind::kCorrelate);
    const CorrelateResult r = run_correlate(cfg);
    std::ostringstream runs;
    for (const auto& x : r.runs)
      runs << x.supervision << ',' << fmt(x.noise_scale) << ',' << x.seed << ',' << fmt(x.l2_gap)
           << ',' << fmt(x.test_accuracy) << ',' << fmt(x.test_ece) << ','
           << (x.diverged ? "diverged" : "ok") << '\n';
    write_csv(cfg, "correlate_runs.csv",
              "supervision,noise_scale,seed,l2_gap,test_accuracy,test_ece,status", runs.str());
    std::ostringstream summary;
    summary << "runs_completed," << r.completed << '\n'
            << "runs_diverged," << r.runs.size() - r.completed << '\n'
            << "spearman_gap_accuracy," << fmt_opt(r.rho_accuracy) << '\n'
            << "pvalue_gap_accuracy," << fmt(r.p_accuracy) << '\n'
            << "spearman_gap_ece," << fmt_opt(r.rho_ece) << '\n'
            << "pvalue_gap_ece," << fmt(r.p_ece) << '\n';
    for (const auto& [name, m] : r.baseline_accuracy)
      summary << "accuracy_mean_" << name << ',' << fmt(m.mean) << '\n'
              << "accuracy_se_" << name << ',' << fmt(m.se) << '\n';
    write_csv(cfg, "correlate_summary.csv", "metric,value", summary.str());
    std::cout << "correlate: " << r.completed << " runs, spearman(gap, acc) = "
              << fmt_opt(r.rho_accuracy) << ", spearman(gap, ece) = " << fmt_opt(r.rho_ece) << "\n";
  });
}

// ---------------------------------------------------------------------------
// distill

std::vector<double> DistillResult::accuracies(double flip_ratio, const std::string& method,
                                              double alpha) const {
  std::vector<double> out;
  for (const auto& r : runs)
    if (!r.diverged && r.flip_ratio == flip_ratio && r.method == method &&
        (method != "filter_kd" || r.alpha == alpha))
      out.push_back(r.test_accuracy);
  return out;
}

DistillResult run_distill(const ExperimentConfig& cfg) {
  std::vector<double> alphas = cfg.alpha_grid;
  if (std::find(alphas.begin(), alphas.end(), cfg.filter_alpha) == alphas.end())
    alphas.push_back(cfg.filter_alpha);

  struct Cell {
    std::size_t seed_pos;
    std::size_t flip_pos;
  };
  std::vector<Cell> cells;
  for (std::size_t f = 0; f < cfg.flip_grid.size(); ++f)
    for (std::size_t s = 0; s < cfg.seeds.size(); ++s) cells.push_back({s, f});

  // Methods per cell: onehot, eskd, one filter_kd per alpha, ground_truth.
  const std::size_t per_cell = alphas.size() + 3;
  DistillResult out;
  out.runs.resize(cells.size() * per_cell);
  parallel_for(cells.size(), cfg.jobs, [&](std::size_t c) {
    const Cell cell = cells[c];
    const std::uint64_t seed = run_seed(cfg.master_seed, cfg.seeds[cell.seed_pos]);
    const double flip = cfg.flip_grid[cell.flip_pos];
    const ToyDataset ds = build_dataset(cfg, seed, flip);
    auto slot = [&](std::size_t m) -> DistillRun& { return out.runs[c * per_cell + m]; };
    for (std::size_t m = 0; m < per_cell; ++m) {
      slot(m).flip_ratio = flip;
      slot(m).seed = cfg.seeds[cell.seed_pos];
    }
    slot(0).method = "onehot";
    slot(1).method = "eskd";
    for (std::size_t a = 0; a < alphas.size(); ++a) {
      slot(2 + a).method = "filter_kd";
      slot(2 + a).alpha = alphas[a];
    }
    slot(per_cell - 1).method = "ground_truth";

    FilterKdTeacher teacher;
    try {
      teacher = train_teacher_filterkd_multi(
          ds, teacher_config(cfg, seed, cfg.train.stop_rule), alphas, {}, cfg.filter_freeze);
    } catch (const TrainingDivergence& e) {
      for (std::size_t m = 0; m < per_cell; ++m)
        if (m != 0 && m != per_cell - 1) {
          slot(m).diverged = true;
          slot(m).error = std::string("teacher: ") + e.what();
        }
    }
    for (std::size_t m = 0; m < per_cell; ++m) {
      DistillRun& run = slot(m);
      if (run.diverged) continue;
      TargetTable targets;
      if (m == 0) targets = make_onehot_targets(ds);
      else if (m == 1) targets = extract_eskd_targets(teacher.result, ds);
      else if (m == per_cell - 1) targets = make_gt_targets(ds);
      else targets = teacher.tables[m - 2];
      try {
        const TrainResult r = train_model(ds, targets, student_config(cfg, seed, m));
        const TestMetrics t = evaluate_test(r.best_model, ds, cfg.ece_bins);
        run.test_accuracy = t.accuracy;
        run.test_ece = t.ece;
      } catch (const TrainingDivergence& e) {
        run.diverged = true;
        run.error = e.what();
      }
    }
  });

  for (double flip : cfg.flip_grid) {
    auto add = [&](const std::string& method, double alpha, const std::string& label) {
      DistillSummaryRow row;
      row.flip_ratio = flip;
      row.method = method;
      row.alpha = alpha;
      row.label = label;
      std::vector<double> acc, ec;
      for (const auto& r : out.runs)
        if (!r.diverged && r.flip_ratio == flip && r.method == method &&
            (method != "filter_kd" || r.alpha == alpha)) {
          acc.push_back(r.test_accuracy);
          ec.push_back(r.test_ece);
        }
      row.accuracy = mean_and_se(acc);
      row.ece = mean_and_se(ec);
      row.runs = acc.size();
      out.summary.push_back(row);
    };
    add("onehot", 0.0, "onehot");
    add("eskd", 0.0, "eskd");
    for (double a : alphas)
      add("filter_kd", a, "filter_kd(" + fmt(a) + (a == 1.0 ? ",eskd-equivalent)" : ")"));
    add("ground_truth", 0.0, "ground_truth");
  }
  return out;
}

int cmd_distill(const ExperimentConfig& cfg) {
  return guarded("distill", [&] {
    preflight(cfg, ExperimentKind::kDistill);
    if (cfg.dataset_csv)
      for (double f : cfg.flip_grid) build_dataset(cfg, cfg.master_seed, f);
    const DistillResult r = run_distill(cfg);
    std::ostringstream runs;
    for (const auto& x : r.runs)
      runs << fmt(x.flip_ratio) << ',' << x.method << ',' << fmt(x.alpha) << ',' << x.seed << ','
           << fmt(x.test_accuracy) << ',' << fmt(x.test_ece) << ','
           << (x.diverged ? "diverged" : "ok") << '\n';
    write_csv(cfg, "distill_runs.csv", "flip_ratio,method,alpha,seed,test_accuracy,test_ece,status",
              runs.str());
    std::ostringstream summary;
    for (const auto& s : r.summary)
      summary << fmt(s.flip_ratio) << ',' << s.label << ',' << fmt(s.alpha) << ','
              << fmt(s.accuracy.mean) << ',' << fmt(s.accuracy.se) << ',' << fmt(s.ece.mean) << ','
              << fmt(s.ece.se) << ',' << s.runs << '\n';
    write_csv(cfg, "distill_summary.csv",
              "flip_ratio,method,alpha,accuracy_mean,accuracy_se,ece_mean,ece_se,runs", summary.str());
    for (const auto& s : r.summary)
      std::cout << "distill: flip " << fmt(s.flip_ratio) << " " << s.label << " acc "
                << fmt(s.accuracy.mean) << " +/- " << fmt(s.accuracy.se) << "\n";
  });
}

// ---------------------------------------------------------------------------
// recovery

RecoveryResult run_recovery(const ExperimentConfig& cfg) {
  const ToyDataset ds = build_dataset(cfg, cfg.master_seed, cfg.flip_ratio);
  const std::vector<std::size_t> flipped = ds.flipped_indices();
  if (flipped.empty()) throw ConfigError("recovery: dataset has no flipped training labels");
  const std::vector<std::size_t> originals = original_labels(ds, flipped);

  RecoveryResult out;
  out.num_flipped = flipped.size();
  out.num_classes = ds.num_classes();
  DenseMatrix raw, filtered;
  const double alpha = cfg.filter_alpha;

  TrainHooks hooks;
  hooks.on_visit = [&](std::size_t n, std::size_t, std::span<const double> q) {
    auto r = raw.row(n);
    auto f = filtered.row(n);
    for (std::size_t k = 0; k < q.size(); ++k) {
      r[k] = q[k];
      f[k] = (1.0 - alpha) * f[k] + alpha * q[k];
    }
  };
  hooks.on_epoch_end = [&](std::size_t epoch, const MlpModel& model) {
    DenseMatrix fresh(ds.size(), ds.num_classes());
    for (std::size_t n : flipped) {
      const Vector q = mlp_predict(model, ds[n].x);
      std::copy(q.begin(), q.end(), fresh.row(n).begin());
    }
    if (epoch == 0) {
      raw = fresh;
      filtered = fresh;
    }
    RecoveryRow row;
    row.epoch = epoch;
    row.raw = recovery_fraction(raw, flipped, originals);
    row.filtered = recovery_fraction(filtered, flipped, originals);
    row.epoch_end = recovery_fraction(fresh, flipped, originals);
    out.rows.push_back(row);
  };
  const TrainResult result =
      train_model(ds, make_onehot_targets(ds),
                  teacher_config(cfg, run_seed(cfg.master_seed, cfg.seeds.front()), cfg.train.stop_rule),
                  hooks);
  for (std::size_t e = 1; e < out.rows.size(); ++e) {
    out.rows[e].valid_accuracy = result.valid_accuracy[e - 1];
    out.rows[e].train_accuracy = result.train_accuracy[e - 1];
    out.raw_peak = std::max(out.raw_peak, out.rows[e].raw);
    out.filtered_peak = std::max(out.filtered_peak, out.rows[e].filtered);
  }
  out.best_epoch = result.best_epoch;
  out.initial = out.rows.front().epoch_end;
  out.converged = out.rows.back().epoch_end;
  out.final_train_accuracy = result.train_accuracy.empty() ? 0.0 : result.train_accuracy.back();
  return out;
}

int cmd_recovery(const ExperimentConfig& cfg) {
  return guarded("recovery", [&] {
    preflight(cfg, ExperimentKind::kRecovery);
    const RecoveryResult r = run_recovery(cfg);
    std::ostringstream rows;
    for (const auto& x : r.rows)
      rows << x.epoch << ',' << fmt(x.raw) << ',' << fmt(x.filtered) << ',' << fmt(x.epoch_end)
           << ',' << fmt(x.valid_accuracy) << ',' << fmt(x.train_accuracy) << ','
           << (x.epoch == r.best_epoch ? 1 : 0) << '\n';
    write_csv(cfg, "recovery_curve.csv",
              "epoch,raw,filtered,epoch_end,valid_accuracy,train_accuracy,early_stop", rows.str());
    std::ostringstream summary;
    summary << "num_flipped," << r.num_flipped << '\n'
            << "initial," << fmt(r.initial) << '\n'
            << "chance," << fmt(1.0 / static_cast<double>(r.num_classes)) << '\n'
            << "raw_peak," << fmt(r.raw_peak) << '\n'
            << "filtered_peak," << fmt(r.filtered_peak) << '\n'
            << "early_stop_epoch," << r.best_epoch << '\n'
            << "early_stop_raw," << fmt(r.rows.at(r.best_epoch).raw) << '\n'
            << "converged," << fmt(r.converged) << '\n'
            << "final_train_accuracy," << fmt(r.final_train_accuracy) << '\n';
    write_csv(cfg, "recovery_summary.csv", "metric,value", summary.str());
    std::cout << "recovery: initial " << fmt(r.initial) << ", raw peak " << fmt(r.raw_peak)
              << ", filtered peak " << fmt(r.filtered_peak) << ", converged " << fmt(r.converged)
              << "\n";
  });
}

// ---------------------------------------------------------------------------
// paths

PathsResult run_paths(const ExperimentConfig& cfg) {
  const ToyDataset ds = build_dataset(cfg, cfg.master_seed, cfg.flip_ratio);
  TrainConfig tc = teacher_config(cfg, run_seed(cfg.master_seed, cfg.seeds.front()), cfg.train.stop_rule);
  tc.record_paths = true;
  TrainResult result = train_model(ds, make_onehot_targets(ds), tc);

  PathsResult out;
  out.store = std::move(*result.paths);
  std::vector<std::size_t> train = ds.indices(Split::kTrain);
  std::vector<double> difficulty(ds.size(), 0.0);
  for (std::size_t n : train) difficulty[n] = base_difficulty(ds[n].y, ds[n].p_star);
  std::stable_sort(train.begin(), train.end(),
                   [&](std::size_t a, std::size_t b) { return difficulty[a] < difficulty[b]; });

  for (double q : {0.05, 0.5, 0.75, 0.95}) {
    const auto pos = static_cast<std::size_t>(std::llround(q * static_cast<double>(train.size() - 1)));
    const std::size_t n = train[pos];
    const LearningPath& path = out.store.path(n);
    SelectedPath sel;
    sel.quantile = q;
    sel.sample_index = n;
    sel.base_difficulty = difficulty[n];
    sel.end_distance_to_label = distance_l2(path.points.back().q, one_hot(ds[n].y, ds.num_classes()));
    sel.final_distance_to_pstar = distance_l2(path.points.back().q, ds[n].p_star);
    sel.min_distance_to_pstar = sel.final_distance_to_pstar;
    for (const auto& pt : path.points)
      sel.min_distance_to_pstar = std::min(sel.min_distance_to_pstar, distance_l2(pt.q, ds[n].p_star));
    out.selected.push_back(sel);

    for (const auto& row : project_path(path, false)) out.projections.push_back(row);
    for (const auto& row : project_path(ema_filter_path(path, cfg.filter_alpha), true))
      out.projections.push_back(row);
  }
  const double h = 0.5 * std::sqrt(3.0);
  for (const auto& row : out.projections) {
    const double x = row.point.x, y = row.point.y, eps = 1e-12;
    if (y < -eps || y > h * 2.0 * x + eps || y > h * 2.0 * (1.0 - x) + eps) out.all_inside_triangle = false;
  }
  out.easiest_reaches_label = out.selected.front().end_distance_to_label <= 0.05;
  out.hardest_zigzags =
      out.selected.back().min_distance_to_pstar < out.selected.back().final_distance_to_pstar;
  return out;
}

int cmd_paths(const ExperimentConfig& cfg) {
  return guarded("paths", [&] {
    preflight(cfg, ExperimentKind::kPaths);
    const PathsResult r = run_paths(cfg);
    std::ostringstream paths;
    for (const auto& [idx, p] : r.store.paths())
      for (const auto& pt : p.points) {
        paths << idx << ',' << pt.step;
        for (double v : pt.q) paths << ',' << fmt(v);
        paths << '\n';
      }
    std::string qcols;
    for (std::size_t k = 0; k < r.store.num_classes(); ++k) qcols += ",q_" + std::to_string(k);
    write_csv(cfg, "paths.csv", "sample_index,step" + qcols, paths.str());
    const std::string proj = projection_csv(r.projections);
    const auto nl = proj.find('\n');
    write_csv(cfg, "paths_projection.csv", proj.substr(0, nl), proj.substr(nl + 1));
    std::ostringstream sel;
    for (const auto& s : r.selected)
      sel << fmt(s.quantile) << ',' << s.sample_index << ',' << fmt(s.base_difficulty) << ','
          << fmt(s.end_distance_to_label) << ',' << fmt(s.min_distance_to_pstar) << ','
          << fmt(s.final_distance_to_pstar) << '\n';
    write_csv(cfg, "paths_selected.csv",
              "quantile,sample_index,base_difficulty,end_distance_to_label,min_distance_to_pstar,"
              "final_distance_to_pstar",
              sel.str());
    std::cout << "paths: " << r.store.num_samples() << " samples over " << r.store.epochs()
              << " epochs; projections inside triangle: " << (r.all_inside_triangle ? "yes" : "no")
              << "; easiest reaches label: " << (r.easiest_reaches_label ? "yes" : "no")
              << "; hardest zig-zags: " << (r.hardest_zigzags ? "yes" : "no") << "\n";
  });
}

// ---------------------------------------------------------------------------
// zigzag

ZigzagResult run_zigzag(const ExperimentConfig& cfg) {
  const ToyDataset ds = build_dataset(cfg, cfg.master_seed, cfg.flip_ratio);
  TrainConfig tc = teacher_config(cfg, run_seed(cfg.master_seed, cfg.seeds.front()), cfg.train.stop_rule);
  tc.record_paths = true;
  const TrainResult result = train_model(ds, make_onehot_targets(ds), tc);

  ZigzagResult out;
  std::vector<double> diff, score, flipped, clean;
  for (const auto& [n, path] : result.paths->paths()) {
    ZigzagRecord rec{n, base_difficulty(ds[n].y, ds[n].p_star), zigzag_score(path, ds[n].y),
                     ds[n].flipped()};
    out.path_length = path.size();
    diff.push_back(rec.base_difficulty);
    score.push_back(rec.score);
    (rec.flipped ? flipped : clean).push_back(rec.score);
    out.records.push_back(rec);
  }
  out.rho = spearman(diff, score);
  out.p_value = spearman_permutation_pvalue(diff, score, kPermutations,
                                            derive_seed(cfg.master_seed, Stream::kPairs));
  out.mean_flipped = mean_and_se(flipped).mean;
  out.mean_clean = mean_and_se(clean).mean;
  return out;
}

int cmd_zigzag(const ExperimentConfig& cfg) {
  return guarded("zigzag", [&] {
    preflight(cfg, ExperimentKind::kZigzag);
    const ZigzagResult r = run_zigzag(cfg);
    std::ostringstream rows;
    for (const auto& x : r.records)
      rows << x.sample_index << ',' << fmt(x.base_difficulty) << ',' << fmt(x.score) << ','
           << (x.flipped ? 1 : 0) << '\n';
    write_csv(cfg, "zigzag_scores.csv", "sample_index,base_difficulty,zigzag_score,flipped", rows.str());
    std::ostringstream summary;
    summary << "samples," << r.records.size() << '\n'
            << "path_length," << r.path_length << '\n'
            << "spearman_difficulty_score," << fmt_opt(r.rho) << '\n'
            << "pvalue," << fmt(r.p_value) << '\n'
            << "mean_score_flipped," << fmt(r.mean_flipped) << '\n'
            << "mean_score_clean," << fmt(r.mean_clean) << '\n';
    write_csv(cfg, "zigzag_summary.csv", "metric,value", summary.str());
    std::cout << "zigzag: spearman " << fmt_opt(r.rho) << ", flipped mean " << fmt(r.mean_flipped)
              << ", clean mean " << fmt(r.mean_clean) << "\n";
  });
}

// ---------------------------------------------------------------------------
// distance-gap

DistanceGapResult run_distance_gap(const ExperimentConfig& cfg) {
  const ToyDataset ds = build_dataset(cfg, cfg.master_seed, cfg.flip_ratio);
  const std::uint64_t seed = run_seed(cfg.master_seed, cfg.seeds.front());
  const TrainResult teacher =
      train_model(ds, make_onehot_targets(ds), teacher_config(cfg, seed, StopRule::kTrainConverged));
  const std::vector<TargetTable> tables = {make_onehot_targets(ds), make_ls_targets(ds, cfg.ls_epsilon),
                                           extract_kd_targets(teacher, ds),
                                           extract_eskd_targets(teacher, ds), make_gt_targets(ds)};
  std::vector<std::vector<DistanceGapSnapshot>> per(tables.size());
  parallel_for(tables.size(), cfg.jobs, [&](std::size_t i) {
    const TrainResult r = train_model(ds, tables[i], student_config(cfg, seed, i));
    const std::pair<const char*, const MlpModel*> stages[] = {
        {"init", &r.initial_model}, {"best", &r.best_model}, {"final", &r.final_model}};
    for (const auto& [stage, model] : stages) {
      DistanceGapSnapshot snap;
      snap.supervision = to_string(tables[i].provenance);
      snap.stage = stage;
      snap.records = distance_gap_snapshot(*model, ds, tables[i]);
      for (const auto& rec : snap.records) {
        snap.mean_dist_to_pstar += rec.dist_to_pstar;
        snap.mean_dist_to_target += rec.dist_to_target;
      }
      snap.mean_dist_to_pstar /= static_cast<double>(snap.records.size());
      snap.mean_dist_to_target /= static_cast<double>(snap.records.size());
      per[i].push_back(std::move(snap));
    }
  });
  DistanceGapResult out;
  for (auto& v : per)
    for (auto& s : v) out.snapshots.push_back(std::move(s));
  return out;
}

int cmd_distance_gap(const ExperimentConfig& cfg) {
  return guarded("distance-gap", [&] {
    preflight(cfg, ExperimentKind::kDistanceGap);
    const DistanceGapResult r = run_distance_gap(cfg);
    std::ostringstream rows, summary;
    for (const auto& s : r.snapshots) {
      for (const auto& x : s.records)
        rows << s.supervision << ',' << s.stage << ',' << x.sample_index << ','
             << fmt(x.base_difficulty) << ',' << fmt(x.dist_to_pstar) << ',' << fmt(x.dist_to_target)
             << '\n';
      summary << s.supervision << ',' << s.stage << ',' << fmt(s.mean_dist_to_pstar) << ','
              << fmt(s.mean_dist_to_target) << '\n';
    }
    write_csv(cfg, "distance_gap.csv",
              "supervision,stage,sample_index,base_difficulty,dist_to_pstar,dist_to_target", rows.str());
    write_csv(cfg, "distance_gap_summary.csv",
              "supervision,stage,mean_dist_to_pstar,mean_dist_to_target", summary.str());
    for (const auto& s : r.snapshots)
      if (s.stage == std::string("best"))
        std::cout << "distance-gap: " << s.supervision << " mean ||q - p*|| "
                  << fmt(s.mean_dist_to_pstar) << "\n";
  });
}

// ---------------------------------------------------------------------------
// ntk-verify

NtkResult run_ntk_verify(const ExperimentConfig& cfg) {
  const ToyDataset ds = build_dataset(cfg, cfg.master_seed, cfg.flip_ratio);
  const std::uint64_t seed = run_seed(cfg.master_seed, cfg.seeds.front());
  std::vector<std::size_t> layers{ds.spec().input_dim};
  layers.insert(layers.end(), cfg.train.hidden.begin(), cfg.train.hidden.end());
  layers.push_back(ds.num_classes());
  const MlpModel init =
      MlpModel::he_init(layers, derive_seed(seed, Stream::kInit), cfg.train.output_init_scale);

  NtkResult out;
  for (std::size_t i = 0; i < cfg.ntk_levels; ++i)
    out.eta_grid.push_back(cfg.ntk_eta / std::pow(2.0, static_cast<double>(i)));
  const std::vector<NtkPair> pairs = sample_ntk_pairs(ds, cfg.ntk_pairs, seed);
  out.scaling = residual_scaling_test(init, pairs, out.eta_grid);
  const std::vector<double> ratios = out.scaling.ratios();
  // Only the ratio from the starting step is checked; smaller steps are reported.
  out.ratios_ok = !ratios.empty() && ratios.front() >= 3.0 && ratios.front() <= 5.0;

  const double limit = 1.0 - 1.0 / static_cast<double>(ds.num_classes());
  auto trace_ok = [&](double t) { return t >= -1e-12 && t <= limit + 1e-12; };
  out.traces_ok = true;
  for (const auto& rec : out.scaling.records) {
    const Vector q = mlp_predict(init, ds[rec.x_o_index].x);
    const double t = rec.a_matrix.trace();
    if (!trace_ok(t) || std::abs(t - softmax_jacobian_trace(q)) > 1e-12) out.traces_ok = false;
  }

  const std::vector<std::size_t> train = ds.indices(Split::kTrain);
  out.similarity_anchor = train.front();
  out.similarity = similarity_trace_study(init, out.similarity_anchor, ds);
  std::vector<double> cosines, traces;
  for (const auto& s : out.similarity) {
    if (s.x_u_index == out.similarity_anchor) continue;
    cosines.push_back(s.cosine);
    traces.push_back(s.trace_k);
  }
  out.similarity_rho = spearman(cosines, traces);

  std::vector<MlpModel> checkpoints;
  TrainConfig tc = teacher_config(cfg, seed, StopRule::kFixedEpochs);
  tc.max_epochs = cfg.ntk_checkpoints;
  TrainHooks hooks;
  hooks.on_epoch_end = [&](std::size_t, const MlpModel& m) { checkpoints.push_back(m); };
  train_model(ds, make_onehot_targets(ds), tc, hooks);
  const std::size_t tracked = std::min<std::size_t>(8, train.size());
  for (std::size_t i = 0; i < tracked; ++i) {
    const Vector t = trace_evolution(checkpoints, ds[train[i]].x);
    for (std::size_t c = 0; c < t.size(); ++c) {
      out.traces.push_back({c, train[i], t[c]});
      if (!trace_ok(t[c])) out.traces_ok = false;
    }
  }
  return out;
}

int cmd_ntk_verify(const ExperimentConfig& cfg) {
  bool passed = false;
  const int status = guarded("ntk-verify", [&] {
    preflight(cfg, ExperimentKind::kNtkVerify);
    const NtkResult r = run_ntk_verify(cfg);
    const std::string dec = decomposition_csv(r.scaling.records);
    const auto nl = dec.find('\n');
    write_csv(cfg, "ntk_decomposition.csv", dec.substr(0, nl), dec.substr(nl + 1));
    const std::vector<double> ratios = r.scaling.ratios();
    std::ostringstream res;
    for (std::size_t i = 0; i < r.scaling.rows.size(); ++i)
      res << fmt(r.scaling.rows[i].eta) << ',' << fmt(r.scaling.rows[i].median_residual) << ','
          << (i < ratios.size() ? fmt(ratios[i]) : "nan") << '\n';
    write_csv(cfg, "ntk_residuals.csv", "eta,median_residual,ratio_to_next", res.str());
    std::ostringstream sim;
    for (const auto& s : r.similarity)
      sim << r.similarity_anchor << ',' << s.x_u_index << ',' << fmt(s.cosine) << ',' << fmt(s.trace_k)
          << '\n';
    write_csv(cfg, "ntk_similarity.csv", "x_o_index,x_u_index,cosine,trace_k", sim.str());
    std::ostringstream tr;
    for (const auto& t : r.traces) tr << t.checkpoint << ',' << t.sample_index << ',' << fmt(t.trace_a) << '\n';
    write_csv(cfg, "ntk_trace_evolution.csv", "checkpoint,sample_index,trace_a", tr.str());
    std::ostringstream summary;
    summary << "ratios_ok," << (r.ratios_ok ? 1 : 0) << '\n'
            << "traces_ok," << (r.traces_ok ? 1 : 0) << '\n'
            << "similarity_spearman," << fmt_opt(r.similarity_rho) << '\n';
    write_csv(cfg, "ntk_summary.csv", "metric,value", summary.str());
    std::cout << "ntk-verify: residual ratios";
    for (double x : ratios) std::cout << ' ' << fmt(x);
    std::cout << "; traces " << (r.traces_ok ? "ok" : "violated") << "; spearman(cos, tr K0) "
              << fmt_opt(r.similarity_rho) << "\n";
    passed = r.passed();
  });
  if (status != 0) return status;
  if (!passed) {
    std::cerr << "ntk-verify: checks failed\n";
    return 2;
  }
  return 0;
}

// ---------------------------------------------------------------------------
// gen-data

int cmd_gen_data(const ExperimentConfig& cfg) {
  return guarded("gen-data", [&] {
    preflight(cfg, ExperimentKind::kGenData);
    if (cfg.dataset_csv) throw ConfigError("gen-data generates a dataset; drop dataset_csv");
    const ToyDataset ds = build_dataset(cfg, cfg.master_seed, cfg.flip_ratio);
    write_dataset(ds, cfg.output_dir / "dataset.csv", cfg.output_dir / "dataset_header.json");
    std::cout << "gen-data: wrote " << ds.size() << " samples to " << (cfg.output_dir / "dataset.csv").string()
              << "\n";
  });
}

int run_experiment(const ExperimentConfig& cfg) {
  switch (cfg.kind) {
    case ExperimentKind::kGenData: return cmd_gen_data(cfg);
    case ExperimentKind::kCorrelate: return cmd_correlate(cfg);
    case ExperimentKind::kPaths: return cmd_paths(cfg);
    case ExperimentKind::kDistanceGap: return cmd_distance_gap(cfg);
    case ExperimentKind::kRecovery: return cmd_recovery(cfg);
    case ExperimentKind::kDistill: return cmd_distill(cfg);
    case ExperimentKind::kNtkVerify: return cmd_ntk_verify(cfg);
    case ExperimentKind::kZigzag: return cmd_zigzag(cfg);
  }
  return 1;
}

}  // namespace learnpath
