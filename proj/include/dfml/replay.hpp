#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <string>
#include <vector>

#include "dfml/episode.hpp"
#include "dfml/meta_distill.hpp"

namespace dfml {

// Bounded FIFO store of recovered episodes with per-class sample indexing.
class MemoryBank {
 public:
  explicit MemoryBank(int capacity);

  int capacity() const { return capacity_; }
  int size() const { return int(entries_.size()); }
  const TaskEpisode& entry(int i) const { return entries_.at(i); }

  // Appends; evicts the oldest entry when over capacity.
  void push(TaskEpisode episode);

  // Global class ids currently stored, ascending.
  std::vector<int> stored_classes() const;
  // ...restricted to classes holding at least min_samples rows.
  std::vector<int> classes_with_at_least(int min_samples) const;
  int samples_of(int class_id) const;

  // Ordered view of every stored row of one class (support and query pooled).
  std::vector<const double*> rows_of(int class_id) const;
  int row_dim() const;

  void save(const std::string& path) const;
  static MemoryBank load(const std::string& path);

 private:
  int capacity_;
  std::deque<TaskEpisode> entries_;
};

// A task resampled from the bank under a fresh label space 0..N-1.
struct InterpolatedTask {
  MatD support_x;
  std::vector<int> support_y;
  MatD query_x;
  std::vector<int> query_y;
  std::vector<int> class_map;  // position -> global class id
};

// Draws N distinct stored classes (each with >= shots + query_shots rows),
// then disjoint support/query rows per class. Deterministic under seed.
InterpolatedTask sample_interpolated(const MemoryBank& bank, int ways, int shots, int query_shots,
                                     std::uint64_t seed);

// MAML step on an interpolated task: inner CE adaptation on the support,
// outer CE gradient on the query applied to theta. Consumes no API queries.
void replay_update(MetaModel& meta, nn::Adam& opt, const InterpolatedTask& task,
                   const InnerOuterConfig& cfg);

}  // namespace dfml
