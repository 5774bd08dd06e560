#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dfml/api_pool.hpp"
#include "dfml/generator.hpp"
#include "dfml/harness.hpp"
#include "dfml/meta_distill.hpp"
#include "dfml/task_recovery.hpp"
#include "dfml/zo_grad.hpp"

namespace dfml {

// One synthetic or on-disk data world.
struct SourceSpec {
  std::string id = "gauss0";
  std::string kind = "gaussian";  // gaussian | glyph | dir
  int dims = 16;                  // gaussian
  double sigma = 0.1;             // gaussian
  int train_classes = 40;
  int test_classes = 20;
  std::string path;  // dir
};

struct ReplayConfig {
  int capacity = 0;  // 0 -> number of APIs
  double p_replay = 0.5;
};

// Full experiment description. Defaults follow the reference configuration
// (q=100, mu=0.005, lambda_q=1, generator lr 0.001 for 200 recovery epochs,
// inner lr 0.01, outer lr 0.001, latent 256, 30+30 recovered images, 100
// APIs); the "desk" profile shrinks it to run end-to-end in minutes.
struct RunConfig {
  ScenarioConfig scenario;
  std::vector<SourceSpec> sources;
  PretrainConfig pretrain;
  GeneratorConfig generator;
  BoundaryConfig recovery;
  ZoConfig zo;
  InnerOuterConfig bilevel;
  ReplayConfig replay;
  EpisodeSpec eval;
  std::string meta_arch = "mlp:64x64";

  std::string mode = "zo";  // zo | fo
  int max_iterations = 20;
  int batch_size = 5;
  bool accumulate_outer = false;  // average the outer updates of one iteration
  bool use_kd = true;             // component toggles for ablations
  bool use_boundary = true;
  std::uint64_t seed = 1;
  std::string output_dir = "out";
  int checkpoint_every = 0;  // slots between checkpoints; 0 disables
  int max_slot_failures = 10;
  int distill_steps = 150;  // surrogate budget for distill_avg / single_dfkd

  static RunConfig defaults();     // reference-scale values
  static RunConfig desk_preset();  // minute-scale synthetic scenario

  std::string to_json() const;
  static RunConfig from_json(const std::string& text);
  static RunConfig load_file(const std::string& path);
  void save_file(const std::string& path) const;

  // 64-bit hash of the canonical serialization; changes iff a field changes.
  std::uint64_t hash() const;
  std::string hash_hex() const;

  void validate() const;
};

// Materializes the configured sources with disjoint global class id ranges.
SourceSet build_sources(const RunConfig& cfg);

}  // namespace dfml
