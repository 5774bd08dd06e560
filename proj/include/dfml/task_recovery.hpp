#pragma once

#include <cstdint>
#include <vector>

#include "dfml/api_pool.hpp"
#include "dfml/episode.hpp"
#include "dfml/generator.hpp"
#include "dfml/zo_grad.hpp"

namespace dfml {

// -log(probs[y]) with probs clamped below at 1e-12.
double ce_loss(const double* probs, int n, int y);
double ce_loss(const std::vector<double>& probs, int y);

// 1 iff the two argmaxes agree; ties break to the lowest index on both sides.
int boundary_eta(const double* task_probs, const double* api_probs, int n);
int boundary_eta(const std::vector<double>& task_probs, const std::vector<double>& api_probs);

// CE(api_probs, y) - lambda_q * eta * KL(task_probs || api_probs).
double boundary_loss(int y, const double* api_probs, const double* task_probs, int n,
                     double lambda_q);

struct BoundaryConfig {
  double lambda_q = 1.0;
  int recover_epochs = 200;
  int batch_per_set = 30;
  double gen_lr = 0.001;
  // Ablation flag: differentiate the task-model branch of the boundary loss
  // exactly through the surrogate instead of folding it into the black-box
  // scalar. Query cost is identical either way.
  bool exact_task_branch = false;
};

struct TaskModelRef {
  const nn::ArchSpec* arch = nullptr;
  const std::vector<double>* theta = nullptr;
};

struct RecoveryStats {
  long queries = 0;
  std::vector<double> loss_curve;  // mean per-datum objective per epoch
};

// Label-conditional recovery: repeatedly estimate input gradients of the
// per-datum CE under the API, push them through the generator surrogate, and
// update (theta_G, z). fo_mode swaps the estimator for exact whitebox input
// gradients.
RecoveredBatch recover_support(const ApiPool& pool, int api_id, const GeneratorConfig& gcfg,
                               const BoundaryConfig& cfg, const ZoConfig& zo, std::uint64_t seed,
                               bool fo_mode = false, RecoveryStats* stats = nullptr);

// As recover_support but minimizing the boundary objective against the
// adapted task model.
RecoveredBatch recover_query(const ApiPool& pool, int api_id, const TaskModelRef& task,
                             const GeneratorConfig& gcfg, const BoundaryConfig& cfg,
                             const ZoConfig& zo, std::uint64_t seed, bool fo_mode = false,
                             RecoveryStats* stats = nullptr);

// Assembles and validates a recovered episode.
TaskEpisode split_episode(const RecoveredBatch& support, const RecoveredBatch& query,
                          const std::vector<int>& label_space, bool allow_empty = false);

// Diagnostic: fraction of rows whose API argmax equals the assigned label.
double label_fidelity(const ApiPool& pool, int api_id, const RecoveredBatch& batch);

}  // namespace dfml
