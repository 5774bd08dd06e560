#include "dfml/harness.hpp"

#include <algorithm>
#include <cmath>

#include "dfml/errors.hpp"
#include "dfml/kernels.hpp"

namespace dfml {

EvalReport EvalReport::from_accuracies(std::vector<double> acc, std::string tag, long ledger) {
  EvalReport r;
  r.per_episode = std::move(acc);
  r.method_tag = std::move(tag);
  r.query_ledger_total = ledger;
  const int n = int(r.per_episode.size());
  if (n == 0) return r;
  double sum = 0.0;
  for (double a : r.per_episode) sum += a;
  r.mean_accuracy = sum / n;
  if (n > 1) {
    double ss = 0.0;
    for (double a : r.per_episode) ss += (a - r.mean_accuracy) * (a - r.mean_accuracy);
    r.ci95 = 1.96 * std::sqrt(ss / (n - 1)) / std::sqrt(double(n));
  }
  return r;
}

TaskEpisode sample_test_episode(const Source& source, const EpisodeSpec& spec,
                                std::uint64_t seed) {
  const auto classes = source.class_ids(Split::meta_test);
  if (int(classes.size()) < spec.ways)
    throw SamplingError("meta-test split of '" + source.id() + "' has " +
                        std::to_string(classes.size()) + " classes, episode needs " +
                        std::to_string(spec.ways));
  Rng rng(seed);
  const auto pick = rng.sample_without_replacement(int(classes.size()), spec.ways);
  TaskEpisode e;
  e.origin = EpisodeOrigin::real;
  e.api_id = -1;
  for (int c = 0; c < spec.ways; ++c) {
    const int cls = classes[pick[c]];
    e.label_space.push_back(cls);
    source.sample_episode_rows(cls, spec.shots, spec.query_shots, rng, e.support.inputs,
                               e.query.inputs);
    e.support.labels.insert(e.support.labels.end(), spec.shots, c);
    e.query.labels.insert(e.query.labels.end(), spec.query_shots, c);
  }
  return e;
}

double adapt_and_eval(const MetaModel& meta, const TaskEpisode& episode, const EpisodeSpec& spec) {
  if (meta.arch.n_out() != int(episode.label_space.size()))
    throw InputError("meta head width does not match the episode ways");
  std::vector<double> theta = meta.theta;  // the meta parameters stay untouched
  const nn::LossTarget target = nn::LossTarget::ce(episode.support.labels, nn::Reduction::mean);
  std::vector<double> grad(theta.size());
  for (int s = 0; s < spec.adapt_steps; ++s) {
    nn::set_loss_grad<double>(meta.arch, theta.data(), episode.support.inputs, target,
                              grad.data());
    nn::sgd_step(theta, grad, spec.adapt_lr);
  }
  Mat<double> logits =
      nn::model_logits<double>(meta.arch, theta.data(), nullptr, episode.query.inputs, true,
                               nullptr);
  int hit = 0;
  for (int i = 0; i < logits.rows; ++i) {
    const double* r = logits.row(i);
    const int am = int(std::max_element(r, r + logits.cols) - r);
    if (am == episode.query.labels[i]) ++hit;
  }
  return logits.rows ? double(hit) / logits.rows : 0.0;
}

EvalReport evaluate_meta(const MetaModel& meta, const std::vector<const Source*>& test_sources,
                         const EpisodeSpec& spec, std::uint64_t seed, const std::string& tag,
                         long ledger_total) {
  if (test_sources.empty()) throw InputError("evaluation needs at least one source");
  std::vector<double> acc(spec.num_episodes, 0.0);
  const bool parallel = kernels::backend() == kernels::Backend::openmp;
#pragma omp parallel for schedule(dynamic) if (parallel)
  for (int ep = 0; ep < spec.num_episodes; ++ep) {
    const Source& src = *test_sources[ep % test_sources.size()];
    TaskEpisode episode = sample_test_episode(src, spec, derive_seed(seed, {0xE9, std::uint64_t(ep)}));
    acc[ep] = adapt_and_eval(meta, episode, spec);
  }
  return EvalReport::from_accuracies(std::move(acc), tag, ledger_total);
}

EvalReport evaluate_best_api(const ApiPool& pool, const std::vector<const Source*>& test_sources,
                             const EpisodeSpec& spec, std::uint64_t seed) {
  int best = 0;
  for (int i = 1; i < pool.size(); ++i)
    if (pool.handle(i).reported_accuracy > pool.handle(best).reported_accuracy) best = i;
  const long q0 = pool.total_queries();
  std::vector<double> acc(spec.num_episodes, 0.0);
  for (int ep = 0; ep < spec.num_episodes; ++ep) {
    const Source& src = *test_sources[ep % test_sources.size()];
    TaskEpisode episode = sample_test_episode(src, spec, derive_seed(seed, {0xE9, std::uint64_t(ep)}));
    MatD probs = pool.infer(best, episode.query.inputs);
    int hit = 0;
    for (int i = 0; i < probs.rows; ++i) {
      const double* r = probs.row(i);
      const int am = int(std::max_element(r, r + probs.cols) - r);
      if (am % spec.ways == episode.query.labels[i]) ++hit;
    }
    acc[ep] = probs.rows ? double(hit) / probs.rows : 0.0;
  }
  return EvalReport::from_accuracies(std::move(acc), "best_api", pool.total_queries() - q0);
}

BaselineTag baseline_from_name(const std::string& s) {
  if (s == "random") return BaselineTag::random;
  if (s == "best_api") return BaselineTag::best_api;
  if (s == "single_dfkd") return BaselineTag::single_dfkd;
  if (s == "distill_avg") return BaselineTag::distill_avg;
  if (s == "whitebox_fo") return BaselineTag::whitebox_fo;
  if (s == "bidf_mkd") return BaselineTag::bidf_mkd;
  throw ConfigError("unknown method tag '" + s + "'");
}

std::string baseline_name(BaselineTag t) {
  switch (t) {
    case BaselineTag::random: return "random";
    case BaselineTag::best_api: return "best_api";
    case BaselineTag::single_dfkd: return "single_dfkd";
    case BaselineTag::distill_avg: return "distill_avg";
    case BaselineTag::whitebox_fo: return "whitebox_fo";
    case BaselineTag::bidf_mkd: return "bidf_mkd";
  }
  return "?";
}

}  // namespace dfml
