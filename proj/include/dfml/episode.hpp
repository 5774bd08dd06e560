#pragma once

#include <string>
#include <vector>

#include "dfml/mat.hpp"

namespace dfml {

// A batch of synthetic inputs with their assigned labels. Labels are
// positions inside the owning API's label space, not global class ids.
struct RecoveredBatch {
  MatD inputs;
  std::vector<int> labels;
  int api_id = -1;
};

enum class EpisodeOrigin { recovered, interpolated, real };

std::string origin_name(EpisodeOrigin o);
EpisodeOrigin origin_from_name(const std::string& s);

// A support/query split defining one N-way task. label_space maps label
// positions to global class ids (the API's classes for recovered episodes,
// the sampled test classes for real ones).
struct TaskEpisode {
  RecoveredBatch support;
  RecoveredBatch query;
  int api_id = -1;
  EpisodeOrigin origin = EpisodeOrigin::recovered;
  std::vector<int> label_space;
};

void write_episode(class BinWriter& w, const TaskEpisode& e);
TaskEpisode read_episode(class BinReader& r);

void save_episode(const std::string& path, const TaskEpisode& e);
TaskEpisode load_episode(const std::string& path);

}  // namespace dfml
