#include "learnpath/pathtrace.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "learnpath/csv.hpp"

namespace learnpath {

void PathStore::record(std::size_t sample_index, std::size_t step, std::span<const double> q) {
  if (q.size() != num_classes_) throw std::invalid_argument("PathStore::record: wrong class count");
  auto last = last_step_.find(sample_index);
  if (last != last_step_.end() && step <= last->second)
    throw std::invalid_argument("PathStore::record: steps must be strictly increasing");
  last_step_[sample_index] = step;
  if (spill_) {
    *spill_ << sample_index << ',' << step;
    for (double v : q) *spill_ << ',' << format_double(v);
    *spill_ << '\n';
    return;
  }
  auto& p = paths_[sample_index];
  p.sample_index = sample_index;
  p.points.push_back({step, Vector(q.begin(), q.end())});
}

void PathStore::set_spill(std::ostream* os) {
  spill_ = os;
  if (spill_) {
    *spill_ << "sample_index,step";
    for (std::size_t k = 0; k < num_classes_; ++k) *spill_ << ",q_" << k;
    *spill_ << '\n';
  }
}

const LearningPath& PathStore::path(std::size_t sample_index) const {
  auto it = paths_.find(sample_index);
  if (it == paths_.end())
    throw std::out_of_range("PathStore: no path for sample " + std::to_string(sample_index));
  return it->second;
}

LearningPath ema_filter_path(const LearningPath& path, double alpha) {
  if (!(alpha > 0.0 && alpha <= 1.0))
    throw std::invalid_argument("ema_filter_path: alpha must lie in (0, 1]");
  if (path.empty()) throw std::invalid_argument("ema_filter_path: empty path");
  LearningPath out;
  out.sample_index = path.sample_index;
  out.points.reserve(path.size());
  out.points.push_back(path.points.front());
  for (std::size_t t = 1; t < path.size(); ++t) {
    const Vector& prev = out.points.back().q;
    const Vector& in = path.points[t].q;
    Vector next(in.size());
    double total = 0.0;
    for (std::size_t k = 0; k < in.size(); ++k) {
      next[k] = (1.0 - alpha) * prev[k] + alpha * in[k];
      total += next[k];
    }
    if (std::abs(total - 1.0) > 1e-12)
      for (double& v : next) v /= total;
    out.points.push_back({path.points[t].step, std::move(next)});
  }
  return out;
}

PlanarPoint barycentric_project(std::span<const double> q) {
  if (q.size() != 3) throw std::invalid_argument("barycentric_project: needs exactly 3 classes");
  // v0 = (0,0), v1 = (1,0), v2 = (1/2, √3/2)
  return {q[1] + 0.5 * q[2], 0.5 * std::sqrt(3.0) * q[2]};
}

double base_difficulty(std::size_t y, std::span<const double> p_star) {
  return distance_l2(one_hot(y, p_star.size()), p_star);
}

double base_difficulty_normalized(std::size_t y, std::span<const double> p_star) {
  return base_difficulty(y, p_star) / std::sqrt(2.0);
}

Vector path_column_sums(const LearningPath& path) {
  if (path.empty()) throw std::invalid_argument("zigzag_score: empty path");
  Vector sums(path.points.front().q.size(), 0.0);
  for (const auto& p : path.points)
    for (std::size_t k = 0; k < sums.size(); ++k) sums[k] += p.q[k];
  return sums;
}

double zigzag_score(const LearningPath& path, std::size_t y) {
  const Vector sums = path_column_sums(path);
  if (y >= sums.size()) throw std::invalid_argument("zigzag_score: label out of range");
  double best = 0.0;
  for (std::size_t k = 0; k < sums.size(); ++k)
    if (k != y) best = std::max(best, sums[k]);
  return best;
}

std::vector<DistanceGapRecord> distance_gap_snapshot(const DenseMatrix& predictions,
                                                     const ToyDataset& ds,
                                                     const TargetTable& targets) {
  if (predictions.rows() != ds.size() || targets.size() != ds.size())
    throw std::invalid_argument("distance_gap_snapshot: tables do not match dataset");
  std::vector<DistanceGapRecord> out;
  for (std::size_t n : ds.indices(Split::kTrain)) {
    const auto& s = ds[n];
    out.push_back({n, base_difficulty(s.y, s.p_star), distance_l2(predictions.row(n), s.p_star),
                   distance_l2(predictions.row(n), targets.row(n))});
  }
  return out;
}

std::vector<DistanceGapRecord> distance_gap_snapshot(const MlpModel& model, const ToyDataset& ds,
                                                     const TargetTable& targets) {
  DenseMatrix preds(ds.size(), ds.num_classes());
  for (std::size_t n : ds.indices(Split::kTrain)) {
    const Vector q = mlp_predict(model, ds[n].x);
    std::copy(q.begin(), q.end(), preds.row(n).begin());
  }
  return distance_gap_snapshot(preds, ds, targets);
}

double recovery_fraction(const DenseMatrix& predictions, std::span<const std::size_t> flipped,
                         std::span<const std::size_t> original_labels) {
  if (flipped.empty()) throw std::invalid_argument("recovery_fraction: empty flip set");
  if (flipped.size() != original_labels.size())
    throw std::invalid_argument("recovery_fraction: index/label length mismatch");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < flipped.size(); ++i)
    if (argmax(predictions.row(flipped[i])) == original_labels[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(flipped.size());
}

void write_paths_csv(const PathStore& store, const std::filesystem::path& path) {
  std::ostringstream os;
  os << "sample_index,step";
  for (std::size_t k = 0; k < store.num_classes(); ++k) os << ",q_" << k;
  os << '\n';
  for (const auto& [idx, p] : store.paths())
    for (const auto& pt : p.points) {
      os << idx << ',' << pt.step;
      for (double v : pt.q) os << ',' << format_double(v);
      os << '\n';
    }
  write_file_atomic(path, os.str());
}

std::vector<ProjectionRow> project_path(const LearningPath& path, bool filtered) {
  std::vector<ProjectionRow> rows;
  rows.reserve(path.size());
  for (const auto& pt : path.points)
    rows.push_back({path.sample_index, pt.step, barycentric_project(pt.q), filtered});
  return rows;
}

std::string projection_csv(std::span<const ProjectionRow> rows) {
  std::ostringstream os;
  os << "sample_index,step,px,py,filtered\n";
  for (const auto& r : rows)
    os << r.sample_index << ',' << r.step << ',' << format_double(r.point.x) << ','
       << format_double(r.point.y) << ',' << (r.filtered ? 1 : 0) << '\n';
  return os.str();
}

}  // namespace learnpath
