#include "dfml/replay.hpp"

#include <algorithm>

#include "dfml/errors.hpp"
#include "dfml/rng.hpp"
#include "dfml/serialize.hpp"

namespace dfml {

MemoryBank::MemoryBank(int capacity) : capacity_(capacity) {
  if (capacity < 1) throw ConfigError("memory bank capacity must be positive");
}

void MemoryBank::push(TaskEpisode episode) {
  entries_.push_back(std::move(episode));
  while (int(entries_.size()) > capacity_) entries_.pop_front();
}

int MemoryBank::row_dim() const {
  for (const auto& e : entries_) {
    if (e.support.inputs.rows) return e.support.inputs.cols;
    if (e.query.inputs.rows) return e.query.inputs.cols;
  }
  return 0;
}

std::vector<const double*> MemoryBank::rows_of(int class_id) const {
  std::vector<const double*> rows;
  for (const auto& e : entries_) {
    for (const auto* batch : {&e.support, &e.query}) {
      for (int i = 0; i < batch->inputs.rows; ++i) {
        const int pos = batch->labels[i];
        if (pos >= 0 && pos < int(e.label_space.size()) && e.label_space[pos] == class_id)
          rows.push_back(batch->inputs.row(i));
      }
    }
  }
  return rows;
}

std::vector<int> MemoryBank::stored_classes() const {
  std::vector<int> ids;
  for (const auto& e : entries_)
    for (int c : e.label_space) ids.push_back(c);
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  return ids;
}

int MemoryBank::samples_of(int class_id) const { return int(rows_of(class_id).size()); }

std::vector<int> MemoryBank::classes_with_at_least(int min_samples) const {
  std::vector<int> out;
  for (int c : stored_classes())
    if (samples_of(c) >= min_samples) out.push_back(c);
  return out;
}

void MemoryBank::save(const std::string& path) const {
  BinWriter w(path);
  w.i32(capacity_);
  w.i32(int(entries_.size()));
  for (const auto& e : entries_) write_episode(w, e);
}

MemoryBank MemoryBank::load(const std::string& path) {
  BinReader r(path);
  MemoryBank bank(r.i32());
  const int n = r.i32();
  for (int i = 0; i < n; ++i) bank.entries_.push_back(read_episode(r));
  return bank;
}

InterpolatedTask sample_interpolated(const MemoryBank& bank, int ways, int shots, int query_shots,
                                     std::uint64_t seed) {
  if (ways < 1 || shots < 1 || query_shots < 0)
    throw InputError("interpolated task needs ways >= 1, shots >= 1, query_shots >= 0");
  const int need = shots + query_shots;
  const std::vector<int> eligible = bank.classes_with_at_least(need);
  if (int(eligible.size()) < ways)
    throw SamplingError("bank holds " + std::to_string(eligible.size()) + " classes with >= " +
                        std::to_string(need) + " samples, task needs " + std::to_string(ways));

  Rng rng(seed);
  const auto pick = rng.sample_without_replacement(int(eligible.size()), ways);
  InterpolatedTask task;
  const int dim = bank.row_dim();
  task.support_x = MatD(ways * shots, dim);
  task.query_x = MatD(ways * query_shots, dim);
  for (int c = 0; c < ways; ++c) {
    const int cls = eligible[pick[c]];
    task.class_map.push_back(cls);
    const auto rows = bank.rows_of(cls);
    const auto idx = rng.sample_without_replacement(int(rows.size()), need);
    for (int s = 0; s < shots; ++s) {
      std::copy(rows[idx[s]], rows[idx[s]] + dim, task.support_x.row(c * shots + s));
      task.support_y.push_back(c);
    }
    for (int s = 0; s < query_shots; ++s) {
      std::copy(rows[idx[shots + s]], rows[idx[shots + s]] + dim,
                task.query_x.row(c * query_shots + s));
      task.query_y.push_back(c);
    }
  }
  return task;
}

void replay_update(MetaModel& meta, nn::Adam& opt, const InterpolatedTask& task,
                   const InnerOuterConfig& cfg) {
  if (meta.arch.n_out() != int(task.class_map.size()))
    throw InputError("meta head width does not match the interpolated task ways");
  for (int y : task.support_y)
    if (y < 0 || y >= meta.arch.n_out()) throw InputError("support label out of range");
  for (int y : task.query_y)
    if (y < 0 || y >= meta.arch.n_out()) throw InputError("query label out of range");
  const nn::LossTarget ts = nn::LossTarget::ce(task.support_y, nn::Reduction::mean);
  const nn::LossTarget tq = nn::LossTarget::ce(task.query_y, nn::Reduction::mean);
  nn::BilevelConfig bl{cfg.inner_steps, cfg.inner_lr, cfg.second_order};
  nn::BilevelResult r = nn::bilevel_grad(meta.arch, meta.theta, task.support_x, ts, task.query_x,
                                         tq, bl);
  meta_update(meta, opt, r.meta_grad, cfg.outer_lr);
}

}  // namespace dfml
