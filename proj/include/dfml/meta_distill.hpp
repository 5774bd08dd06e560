#pragma once

#include <cstdint>
#include <vector>

#include "dfml/api_pool.hpp"
#include "dfml/episode.hpp"
#include "dfml/nn.hpp"

namespace dfml {

// The meta-learned initialization and its architecture.
struct MetaModel {
  nn::ArchSpec arch;
  std::vector<double> theta;

  static MetaModel init(const nn::ArchSpec& arch, std::uint64_t seed);
};

struct InnerOuterConfig {
  int inner_steps = 5;
  double inner_lr = 0.01;
  double outer_lr = 0.001;
  bool second_order = true;
};

// KL(p || q) with both arguments clamped at 1e-12; never non-finite for
// valid probability vectors.
double kl_divergence(const double* p, const double* q, int n);
double kl_divergence(const std::vector<double>& p, const std::vector<double>& q);

struct AdaptedParams {
  std::vector<double> theta_i;
  int provenance_id = -1;  // api id (or interpolated-task id)
  int steps_taken = 0;
};

// Soft labels for a fixed batch; one query per row, cached by callers.
MatD query_teacher(const ApiPool& pool, int api_id, const MatD& inputs);

// Clones the API onto a task-specific model: inner_steps plain gradient
// steps on the summed support KL starting from theta. Soft labels are
// queried once (or taken from cached_teacher).
AdaptedParams inner_distill(const MetaModel& meta, const ApiPool& pool, int api_id,
                            const RecoveredBatch& support, const InnerOuterConfig& cfg,
                            const MatD* cached_teacher = nullptr,
                            std::vector<double>* kl_curve = nullptr);

struct OuterDiag {
  double outer_kl_sum = 0.0;       // summed query KL at the adapted parameters
  double outer_kl_mean = 0.0;      // per-datum mean of the clamped KL
  double disagreement_rate = 0.0;  // argmax mismatch fraction on the query set
  std::vector<double> inner_kls;   // inner objective at steps 0..k
  std::vector<double> theta_adapted;
};

// Gradient of the query KL at the adapted parameters, differentiated through
// the inner loop (exact when cfg.second_order, else first-order).
std::vector<double> outer_distill_grad(const MetaModel& meta, const ApiPool& pool, int api_id,
                                       const TaskEpisode& episode, const InnerOuterConfig& cfg,
                                       OuterDiag* diag = nullptr);

// Two-phase form used by the training loop: inner adaptation first (so the
// boundary query recovery can see theta_i), outer gradient after.
class EpisodeDistill {
 public:
  EpisodeDistill(const MetaModel& meta, const InnerOuterConfig& cfg);

  // queries the support teacher once (unless supplied) and runs the inner loop
  const AdaptedParams& run_inner(const ApiPool& pool, int api_id, const RecoveredBatch& support,
                                 const MatD* cached_teacher = nullptr);
  const AdaptedParams& adapted() const { return adapted_; }
  const std::vector<double>& inner_kls() const { return inner_kls_; }

  // queries the query teacher once and returns the meta gradient + diagnostics
  std::vector<double> outer_grad(const ApiPool& pool, int api_id, const RecoveredBatch& query,
                                 OuterDiag* diag = nullptr,
                                 const MatD* cached_teacher = nullptr);

 private:
  nn::ArchSpec arch_;
  InnerOuterConfig cfg_;
  std::vector<double> theta0_;
  std::vector<std::vector<double>> trajectory_;
  MatD support_x_;
  MatD support_teacher_;
  std::vector<double> inner_kls_;
  AdaptedParams adapted_;
  bool inner_done_ = false;
};

// Adaptive-moment update of theta; rejects non-finite gradients.
void meta_update(MetaModel& meta, nn::Adam& opt, const std::vector<double>& grad,
                 double outer_lr);

// Empirical knowledge-vanish diagnostic: adapt on the support, then report
// the mean query KL and the argmax disagreement rate. Both near zero means
// the query set adds nothing beyond the support.
struct VanishScore {
  double outer_kl = 0.0;
  double disagreement_rate = 0.0;
};

VanishScore knowledge_vanish_score(const MetaModel& meta, const ApiPool& pool, int api_id,
                                   const TaskEpisode& episode, const InnerOuterConfig& cfg);

}  // namespace dfml
