#pragma once

#include <cstddef>
#include <map>
#include <ostream>
#include <span>
#include <vector>

#include "learnpath/numerics.hpp"

namespace learnpath {

struct PathPoint {
  std::size_t step = 0;  // global SGD update counter at the time of recording
  Vector q;
};

struct LearningPath {
  std::size_t sample_index = 0;
  std::vector<PathPoint> points;

  std::size_t size() const noexcept { return points.size(); }
  bool empty() const noexcept { return points.empty(); }
};

enum class Granularity { kPerVisit, kPerEpoch };

/// Per-sample learning paths written by one training loop. With a spill
/// stream attached, points go straight to CSV instead of memory.
class PathStore {
 public:
  PathStore() = default;
  PathStore(std::size_t num_classes, Granularity granularity)
      : num_classes_(num_classes), granularity_(granularity) {}

  /// Throws if steps for a sample are not strictly increasing.
  void record(std::size_t sample_index, std::size_t step, std::span<const double> q);
  void set_spill(std::ostream* os);
  void mark_epoch_complete() noexcept { ++epochs_; }

  const std::map<std::size_t, LearningPath>& paths() const noexcept { return paths_; }
  const LearningPath& path(std::size_t sample_index) const;
  bool contains(std::size_t sample_index) const { return paths_.count(sample_index) > 0; }

  std::size_t num_classes() const noexcept { return num_classes_; }
  std::size_t epochs() const noexcept { return epochs_; }
  std::size_t num_samples() const noexcept { return paths_.size(); }
  Granularity granularity() const noexcept { return granularity_; }
  bool spilled() const noexcept { return spill_ != nullptr; }

 private:
  std::size_t num_classes_ = 0;
  Granularity granularity_ = Granularity::kPerVisit;
  std::size_t epochs_ = 0;
  std::map<std::size_t, LearningPath> paths_;
  std::map<std::size_t, std::size_t> last_step_;
  std::ostream* spill_ = nullptr;
};

}  // namespace learnpath
