#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dfml/api_pool.hpp"
#include "dfml/episode.hpp"
#include "dfml/meta_distill.hpp"
#include "dfml/sources.hpp"

namespace dfml {

struct EpisodeSpec {
  int ways = 5;
  int shots = 1;
  int query_shots = 15;
  int num_episodes = 600;
  int adapt_steps = 10;
  double adapt_lr = 0.01;
};

struct EvalReport {
  double mean_accuracy = 0.0;
  double ci95 = 0.0;  // 1.96 * sd / sqrt(n)
  std::vector<double> per_episode;
  std::string method_tag;
  long query_ledger_total = 0;

  static EvalReport from_accuracies(std::vector<double> acc, std::string tag, long ledger);
};

// One balanced real-data episode from the meta-test split; support and query
// rows are disjoint; deterministic under seed.
TaskEpisode sample_test_episode(const Source& source, const EpisodeSpec& spec,
                                std::uint64_t seed);

// Fine-tunes a copy of theta on the support cross-entropy, then reports
// query argmax accuracy. theta itself is untouched.
double adapt_and_eval(const MetaModel& meta, const TaskEpisode& episode, const EpisodeSpec& spec);

// Evaluates over spec.num_episodes episodes; sources alternate per episode.
// Episodes run independently (parallel-safe) with per-episode seeds.
EvalReport evaluate_meta(const MetaModel& meta, const std::vector<const Source*>& test_sources,
                         const EpisodeSpec& spec, std::uint64_t seed, const std::string& tag,
                         long ledger_total = 0);

// Chance-level reference: the best-reported API labels query points directly
// through a fixed index mapping (its classes are disjoint from the test
// classes, so no alignment exists).
EvalReport evaluate_best_api(const ApiPool& pool, const std::vector<const Source*>& test_sources,
                             const EpisodeSpec& spec, std::uint64_t seed);

enum class BaselineTag { random, best_api, single_dfkd, distill_avg, whitebox_fo, bidf_mkd };
BaselineTag baseline_from_name(const std::string& s);
std::string baseline_name(BaselineTag t);

struct RunConfig;  // defined in config.hpp

// Full baseline driver (implemented with the training pipeline in run.cpp).
EvalReport run_baseline(BaselineTag tag, ApiPool& pool, const SourceSet& sources,
                        const EpisodeSpec& spec, const RunConfig& cfg);

}  // namespace dfml
