#include "dfml/task_recovery.hpp"

#include <algorithm>
#include <cmath>

#include "dfml/errors.hpp"
#include "dfml/meta_distill.hpp"
#include "dfml/rng.hpp"

namespace dfml {

double ce_loss(const double* probs, int n, int y) {
  if (y < 0 || y >= n) throw InputError("class position out of range");
  return -std::log(std::max(probs[y], 1e-12));
}

double ce_loss(const std::vector<double>& probs, int y) {
  return ce_loss(probs.data(), int(probs.size()), y);
}

int boundary_eta(const double* task_probs, const double* api_probs, int n) {
  const int ta = int(std::max_element(task_probs, task_probs + n) - task_probs);
  const int aa = int(std::max_element(api_probs, api_probs + n) - api_probs);
  return ta == aa ? 1 : 0;
}

int boundary_eta(const std::vector<double>& task_probs, const std::vector<double>& api_probs) {
  if (task_probs.size() != api_probs.size())
    throw InputError("boundary_eta needs equal-length vectors");
  return boundary_eta(task_probs.data(), api_probs.data(), int(task_probs.size()));
}

double boundary_loss(int y, const double* api_probs, const double* task_probs, int n,
                     double lambda_q) {
  const int eta = boundary_eta(task_probs, api_probs, n);
  return ce_loss(api_probs, n, y) -
         lambda_q * eta * kl_divergence(task_probs, api_probs, n);
}

namespace {

MatD task_probs_of(const TaskModelRef& task, const MatD& x) {
  Mat<double> logits =
      nn::model_logits<double>(*task.arch, task.theta->data(), nullptr, x, true, nullptr);
  return nn::softmax_rows(logits);
}

// Shared engine for both recovery passes. A null task model (or lambda_q == 0)
// reduces the objective to plain CE, bit-for-bit.
RecoveredBatch recover_set(const ApiPool& pool, int api_id, const TaskModelRef* task,
                           const GeneratorConfig& gcfg, const BoundaryConfig& cfg,
                           const ZoConfig& zo, std::uint64_t seed, bool fo_mode,
                           RecoveryStats* stats) {
  const ApiHandle& handle = pool.handle(api_id);
  const int ways = int(handle.label_space.size());
  const int B = cfg.batch_per_set;
  const int D = pool.input_dim();
  if (B < 1) throw ConfigError("batch_per_set must be positive");
  if (B % ways != 0) throw ConfigError("batch_per_set must be divisible by the api ways");
  if (shape_numel(gcfg.out_shape) != D)
    throw ConfigError("generator output shape does not match the pool input shape");
  if (fo_mode && !pool.whitebox_enabled())
    throw PermissionError("first-order recovery requires a whitebox pool");

  const bool use_boundary = task && task->arch && cfg.lambda_q != 0.0;
  const long q0 = pool.query_count(api_id);

  Generator gen(gcfg, derive_seed(seed, {0x6E}));
  MatD z = gen.sample_latent(B, derive_seed(seed, {0x5A}));
  std::vector<int> labels(B);
  for (int j = 0; j < B; ++j) labels[j] = j % ways;

  for (int epoch = 0; epoch < cfg.recover_epochs; ++epoch) {
    MatD x = gen.forward(z, /*train_mode=*/true);

    MatD api_probs;
    WhiteboxInfer wb;
    if (fo_mode) {
      wb = pool.infer_whitebox(api_id, x);
      api_probs = wb.probs;
    } else {
      api_probs = pool.infer(api_id, x);
    }
    MatD tprobs;
    if (use_boundary) tprobs = task_probs_of(*task, x);

    std::vector<double> base_loss(B);
    std::vector<int> eta(B, 0);
    double mean_loss = 0.0;
    for (int j = 0; j < B; ++j) {
      if (use_boundary) {
        eta[j] = boundary_eta(tprobs.row(j), api_probs.row(j), ways);
        base_loss[j] = ce_loss(api_probs.row(j), ways, labels[j]) -
                       cfg.lambda_q * eta[j] *
                           kl_divergence(tprobs.row(j), api_probs.row(j), ways);
      } else {
        base_loss[j] = ce_loss(api_probs.row(j), ways, labels[j]);
      }
      mean_loss += base_loss[j];
    }
    if (stats) stats->loss_curve.push_back(B ? mean_loss / B : 0.0);

    MatD grad_x(B, D);
    if (fo_mode) {
      // exact input gradients: API branch through the whitebox pullback,
      // task branch through the surrogate
      MatD cot_a(B, ways);
      for (int j = 0; j < B; ++j) {
        const double* a = api_probs.row(j);
        double* c = cot_a.row(j);
        c[labels[j]] = -1.0 / std::max(a[labels[j]], 1e-12);
        if (use_boundary && eta[j]) {
          const double* f = tprobs.row(j);
          for (int k = 0; k < ways; ++k)
            c[k] += cfg.lambda_q * f[k] / std::max(a[k], 1e-12);
        }
      }
      grad_x = wb.input_grads(cot_a);
      if (use_boundary) {
        nn::ModelTape<double> tape;
        Mat<double> logits =
            nn::model_logits<double>(*task->arch, task->theta->data(), nullptr, x, true, &tape);
        Mat<double> probs = nn::softmax_rows(logits);
        Mat<double> dlogits(B, ways);
        for (int j = 0; j < B; ++j) {
          if (!eta[j]) continue;
          const double* f = probs.row(j);
          const double* a = api_probs.row(j);
          const double kl = kl_divergence(f, a, ways);
          double* dl = dlogits.row(j);
          for (int k = 0; k < ways; ++k) {
            const double g = std::log(std::max(f[k], 1e-12)) - std::log(std::max(a[k], 1e-12));
            dl[k] = -cfg.lambda_q * f[k] * (g - kl);
          }
        }
        std::vector<double> scratch(task->arch->param_count(), 0.0);
        Mat<double> dx_task;
        nn::model_backward<double>(*task->arch, task->theta->data(), nullptr, tape, dlogits,
                                   scratch.data(), &dx_task);
        for (std::size_t i = 0; i < grad_x.size(); ++i) grad_x.a[i] += dx_task.a[i];
      }
    } else {
      for (int j = 0; j < B; ++j) {
        ZoConfig zj = zo;
        zj.seed = derive_seed(seed, {0xD1, std::uint64_t(epoch), std::uint64_t(j)});
        const int label = labels[j];
        auto probe_losses = [&](const MatD& probes) {
          MatD ap = pool.infer(api_id, probes);
          std::vector<double> losses(probes.rows);
          if (!use_boundary) {
            for (int i = 0; i < probes.rows; ++i) losses[i] = ce_loss(ap.row(i), ways, label);
          } else if (cfg.exact_task_branch) {
            // the task branch is handled exactly below; freeze its
            // distribution at the base point inside the black-box scalar
            const double* f0 = tprobs.row(j);
            for (int i = 0; i < probes.rows; ++i)
              losses[i] = ce_loss(ap.row(i), ways, label) -
                          cfg.lambda_q * eta[j] * kl_divergence(f0, ap.row(i), ways);
          } else {
            MatD fp = task_probs_of(*task, probes);
            for (int i = 0; i < probes.rows; ++i) {
              const int e = boundary_eta(fp.row(i), ap.row(i), ways);
              losses[i] = ce_loss(ap.row(i), ways, label) -
                          cfg.lambda_q * e * kl_divergence(fp.row(i), ap.row(i), ways);
            }
          }
          return losses;
        };
        GradEstimate est =
            estimate_input_grad_batched(base_loss[j], probe_losses, x.row(j), D, zj);
        std::copy(est.grad.begin(), est.grad.end(), grad_x.row(j));
      }
      if (use_boundary && cfg.exact_task_branch) {
        nn::ModelTape<double> tape;
        Mat<double> logits =
            nn::model_logits<double>(*task->arch, task->theta->data(), nullptr, x, true, &tape);
        Mat<double> probs = nn::softmax_rows(logits);
        Mat<double> dlogits(B, ways);
        for (int j = 0; j < B; ++j) {
          if (!eta[j]) continue;
          const double* f = probs.row(j);
          const double* a = api_probs.row(j);
          const double kl = kl_divergence(f, a, ways);
          double* dl = dlogits.row(j);
          for (int k = 0; k < ways; ++k) {
            const double g = std::log(std::max(f[k], 1e-12)) - std::log(std::max(a[k], 1e-12));
            dl[k] = -cfg.lambda_q * f[k] * (g - kl);
          }
        }
        std::vector<double> scratch(task->arch->param_count(), 0.0);
        Mat<double> dx_task;
        nn::model_backward<double>(*task->arch, task->theta->data(), nullptr, tape, dlogits,
                                   scratch.data(), &dx_task);
        for (std::size_t i = 0; i < grad_x.size(); ++i) grad_x.a[i] += dx_task.a[i];
      }
    }

    GeneratorGrads gg = estimated_generator_grads(grad_x, D, gen.jacobian_products());
    gen.apply_estimated_grads(z, gg, cfg.gen_lr);
  }

  RecoveredBatch out;
  out.inputs = gen.forward(z, /*train_mode=*/true);
  out.labels = labels;
  out.api_id = api_id;
  if (stats) stats->queries = pool.query_count(api_id) - q0;
  return out;
}

}  // namespace

RecoveredBatch recover_support(const ApiPool& pool, int api_id, const GeneratorConfig& gcfg,
                               const BoundaryConfig& cfg, const ZoConfig& zo, std::uint64_t seed,
                               bool fo_mode, RecoveryStats* stats) {
  return recover_set(pool, api_id, nullptr, gcfg, cfg, zo, seed, fo_mode, stats);
}

RecoveredBatch recover_query(const ApiPool& pool, int api_id, const TaskModelRef& task,
                             const GeneratorConfig& gcfg, const BoundaryConfig& cfg,
                             const ZoConfig& zo, std::uint64_t seed, bool fo_mode,
                             RecoveryStats* stats) {
  if (!task.arch || !task.theta)
    throw InputError("query recovery needs the adapted task model");
  return recover_set(pool, api_id, &task, gcfg, cfg, zo, seed, fo_mode, stats);
}

TaskEpisode split_episode(const RecoveredBatch& support, const RecoveredBatch& query,
                          const std::vector<int>& label_space, bool allow_empty) {
  if (support.api_id != query.api_id)
    throw InputError("support and query come from different apis");
  if (int(support.labels.size()) != support.inputs.rows ||
      int(query.labels.size()) != query.inputs.rows)
    throw InputError("episode labels do not match the inputs");
  if (!allow_empty && (support.inputs.rows == 0 || query.inputs.rows == 0))
    throw InputError("episode has an empty set");
  TaskEpisode e;
  e.support = support;
  e.query = query;
  e.api_id = support.api_id;
  e.origin = EpisodeOrigin::recovered;
  e.label_space = label_space;
  return e;
}

double label_fidelity(const ApiPool& pool, int api_id, const RecoveredBatch& batch) {
  if (batch.inputs.rows == 0) return 0.0;
  MatD probs = pool.infer(api_id, batch.inputs);
  int hit = 0;
  for (int i = 0; i < probs.rows; ++i) {
    const double* r = probs.row(i);
    const int am = int(std::max_element(r, r + probs.cols) - r);
    if (am == batch.labels[i]) ++hit;
  }
  return double(hit) / probs.rows;
}

}  // namespace dfml
