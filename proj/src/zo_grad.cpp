#include "dfml/zo_grad.hpp"

#include <cmath>

#include "dfml/errors.hpp"
#include "dfml/rng.hpp"

namespace dfml {

MatD sample_sphere_directions(int dim, int q, std::uint64_t seed) {
  if (dim < 1) throw InputError("direction dimension must be >= 1");
  Rng rng(seed);
  MatD u(q, dim);
  for (int i = 0; i < q; ++i) {
    double* r = u.row(i);
    double norm2 = 0.0;
    do {
      norm2 = 0.0;
      for (int d = 0; d < dim; ++d) {
        r[d] = rng.normal();
        norm2 += r[d] * r[d];
      }
    } while (norm2 == 0.0);
    const double inv = 1.0 / std::sqrt(norm2);
    for (int d = 0; d < dim; ++d) r[d] *= inv;
  }
  return u;
}

GradEstimate estimate_input_grad_batched(
    double base_loss, const std::function<std::vector<double>(const MatD&)>& batch_loss_fn,
    const double* x, int dim, const ZoConfig& cfg) {
  if (cfg.q < 1) throw InputError("zo estimation needs q >= 1");
  if (!(cfg.mu > 0.0)) throw InputError("zo estimation needs mu > 0");
  if (!std::isfinite(base_loss)) throw EstimationError("non-finite base loss", -1);

  const MatD u = sample_sphere_directions(dim, cfg.q, cfg.seed);
  MatD probes(cfg.q, dim);
  for (int i = 0; i < cfg.q; ++i) {
    const double* ur = u.row(i);
    double* pr = probes.row(i);
    for (int d = 0; d < dim; ++d) pr[d] = x[d] + cfg.mu * ur[d];
  }
  const std::vector<double> losses = batch_loss_fn(probes);
  if (int(losses.size()) != cfg.q) throw InputError("batch loss evaluator returned wrong count");

  std::vector<double> coef(cfg.q);
  const double scale = double(dim) / (cfg.mu * double(cfg.q));
  for (int i = 0; i < cfg.q; ++i) {
    if (!std::isfinite(losses[i])) throw EstimationError("non-finite probe loss", i);
    coef[i] = scale * (losses[i] - base_loss);
  }

  GradEstimate est;
  est.grad.assign(dim, 0.0);
  for (int i = 0; i < cfg.q; ++i) {
    const double* ur = u.row(i);
    for (int d = 0; d < dim; ++d) est.grad[d] += coef[i] * ur[d];
  }
  est.queries_used = cfg.q + 1;
  return est;
}

GradEstimate estimate_input_grad(const std::function<double(const std::vector<double>&)>& loss_fn,
                                 const std::vector<double>& x, const ZoConfig& cfg) {
  const double base = loss_fn(x);
  auto batched = [&](const MatD& probes) {
    std::vector<double> losses(probes.rows);
    std::vector<double> point(probes.cols);
    for (int i = 0; i < probes.rows; ++i) {
      std::copy(probes.row(i), probes.row(i) + probes.cols, point.begin());
      losses[i] = loss_fn(point);
    }
    return losses;
  };
  return estimate_input_grad_batched(base, batched, x.data(), int(x.size()), cfg);
}

GeneratorGrads estimated_generator_grads(const MatD& grad_x, int expected_out_dim,
                                         const JacobianVjp& vjp) {
  if (grad_x.cols != expected_out_dim)
    throw InputError("input-gradient width does not match the generator output");
  GeneratorGrads out;
  vjp(grad_x, out.d_theta_g, out.d_z);
  // the generator objective averages the per-datum losses over the batch
  const double inv_b = grad_x.rows > 0 ? 1.0 / grad_x.rows : 0.0;
  for (auto& g : out.d_theta_g) g *= inv_b;
  return out;
}

}  // namespace dfml
