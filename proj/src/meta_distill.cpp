#include "dfml/meta_distill.hpp"

#include <algorithm>
#include <cmath>

#include "dfml/errors.hpp"

namespace dfml {

MetaModel MetaModel::init(const nn::ArchSpec& arch, std::uint64_t seed) {
  MetaModel m;
  m.arch = arch;
  Rng rng(seed);
  nn::init_params(arch, m.theta, rng);
  return m;
}

double kl_divergence(const double* p, const double* q, int n) {
  double kl = 0.0;
  for (int i = 0; i < n; ++i) {
    const double pi = std::max(p[i], 1e-12);
    const double qi = std::max(q[i], 1e-12);
    kl += pi * std::log(pi / qi);
  }
  return kl;
}

double kl_divergence(const std::vector<double>& p, const std::vector<double>& q) {
  if (p.size() != q.size()) throw InputError("kl_divergence needs equal-length vectors");
  return kl_divergence(p.data(), q.data(), int(p.size()));
}

MatD query_teacher(const ApiPool& pool, int api_id, const MatD& inputs) {
  return pool.infer(api_id, inputs);
}

namespace {

// mean clamped KL + argmax disagreement of student logits vs teacher probs
void kl_stats(const Mat<double>& logits, const MatD& teacher, double* mean_kl,
              double* disagreement) {
  Mat<double> probs = nn::softmax_rows(logits);
  double kl = 0.0;
  int mismatch = 0;
  for (int i = 0; i < probs.rows; ++i) {
    kl += kl_divergence(probs.row(i), teacher.row(i), probs.cols);
    const double* f = probs.row(i);
    const double* a = teacher.row(i);
    const int fa = int(std::max_element(f, f + probs.cols) - f);
    const int aa = int(std::max_element(a, a + probs.cols) - a);
    if (fa != aa) ++mismatch;
  }
  if (mean_kl) *mean_kl = probs.rows ? kl / probs.rows : 0.0;
  if (disagreement) *disagreement = probs.rows ? double(mismatch) / probs.rows : 0.0;
}

void check_support(const MetaModel& meta, const ApiPool& pool, int api_id,
                   const RecoveredBatch& support) {
  if (support.api_id != api_id) throw InputError("support batch belongs to a different api");
  const int ways = int(pool.handle(api_id).label_space.size());
  if (meta.arch.n_out() != ways) throw InputError("meta head width does not match the api ways");
}

}  // namespace

AdaptedParams inner_distill(const MetaModel& meta, const ApiPool& pool, int api_id,
                            const RecoveredBatch& support, const InnerOuterConfig& cfg,
                            const MatD* cached_teacher, std::vector<double>* kl_curve) {
  EpisodeDistill d(meta, cfg);
  AdaptedParams out = d.run_inner(pool, api_id, support, cached_teacher);
  if (kl_curve) *kl_curve = d.inner_kls();
  return out;
}

EpisodeDistill::EpisodeDistill(const MetaModel& meta, const InnerOuterConfig& cfg)
    : arch_(meta.arch), cfg_(cfg), theta0_(meta.theta) {}

const AdaptedParams& EpisodeDistill::run_inner(const ApiPool& pool, int api_id,
                                               const RecoveredBatch& support,
                                               const MatD* cached_teacher) {
  check_support({arch_, theta0_}, pool, api_id, support);
  support_x_ = support.inputs;
  support_teacher_ = cached_teacher ? *cached_teacher : query_teacher(pool, api_id, support.inputs);
  if (support_teacher_.rows != support_x_.rows ||
      support_teacher_.cols != int(pool.handle(api_id).label_space.size()))
    throw InputError("cached teacher labels have the wrong shape");
  const nn::LossTarget target = nn::LossTarget::kl(support_teacher_, nn::Reduction::sum);
  trajectory_ = nn::inner_trajectory(arch_, theta0_, support_x_, target, cfg_.inner_steps,
                                     cfg_.inner_lr, &inner_kls_);
  adapted_.theta_i = trajectory_.back();
  adapted_.provenance_id = api_id;
  adapted_.steps_taken = cfg_.inner_steps;
  inner_done_ = true;
  return adapted_;
}

std::vector<double> EpisodeDistill::outer_grad(const ApiPool& pool, int api_id,
                                               const RecoveredBatch& query, OuterDiag* diag,
                                               const MatD* cached_teacher) {
  if (!inner_done_) throw InputError("outer_grad requires a completed inner pass");
  if (query.api_id != api_id) throw InputError("query batch belongs to a different api");
  const MatD teacher =
      cached_teacher ? *cached_teacher : query_teacher(pool, api_id, query.inputs);
  const nn::LossTarget target_s = nn::LossTarget::kl(support_teacher_, nn::Reduction::sum);
  const nn::LossTarget target_q = nn::LossTarget::kl(teacher, nn::Reduction::sum);
  nn::BilevelConfig bl{cfg_.inner_steps, cfg_.inner_lr, cfg_.second_order};
  nn::BilevelResult r = nn::outer_from_trajectory(arch_, trajectory_, support_x_, target_s,
                                                  query.inputs, target_q, bl);
  if (diag) {
    diag->outer_kl_sum = r.outer_loss;
    diag->inner_kls = inner_kls_;
    diag->theta_adapted = r.theta_adapted;
    nn::ModelTape<double> tape;
    Mat<double> logits = nn::model_logits<double>(arch_, r.theta_adapted.data(), nullptr,
                                                  query.inputs, true, &tape);
    kl_stats(logits, teacher, &diag->outer_kl_mean, &diag->disagreement_rate);
  }
  return r.meta_grad;
}

std::vector<double> outer_distill_grad(const MetaModel& meta, const ApiPool& pool, int api_id,
                                       const TaskEpisode& episode, const InnerOuterConfig& cfg,
                                       OuterDiag* diag) {
  if (episode.origin != EpisodeOrigin::recovered)
    throw InputError("outer distillation expects a recovered episode");
  EpisodeDistill d(meta, cfg);
  d.run_inner(pool, api_id, episode.support);
  return d.outer_grad(pool, api_id, episode.query, diag);
}

void meta_update(MetaModel& meta, nn::Adam& opt, const std::vector<double>& grad,
                 double outer_lr) {
  if (grad.size() != meta.theta.size()) throw InputError("meta gradient size mismatch");
  for (double g : grad)
    if (!std::isfinite(g)) throw InputError("non-finite meta gradient; update rejected");
  opt.step(meta.theta.data(), grad.data(), int(grad.size()), outer_lr);
}

VanishScore knowledge_vanish_score(const MetaModel& meta, const ApiPool& pool, int api_id,
                                   const TaskEpisode& episode, const InnerOuterConfig& cfg) {
  EpisodeDistill d(meta, cfg);
  d.run_inner(pool, api_id, episode.support);
  const MatD teacher = query_teacher(pool, api_id, episode.query.inputs);
  nn::ModelTape<double> tape;
  Mat<double> logits = nn::model_logits<double>(meta.arch, d.adapted().theta_i.data(), nullptr,
                                                episode.query.inputs, true, &tape);
  VanishScore v;
  kl_stats(logits, teacher, &v.outer_kl, &v.disagreement_rate);
  return v;
}

}  // namespace dfml
