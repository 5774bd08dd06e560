#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "dfml/mat.hpp"

namespace dfml {

struct ZoConfig {
  int q = 100;        // random directions per estimate
  double mu = 0.005;  // smoothing step, in input units
  std::uint64_t seed = 0;
};

struct GradEstimate {
  std::vector<double> grad;
  long queries_used = 0;  // q + 1 per datum
};

// q unit vectors drawn uniformly from the sphere (Gaussian draw, normalized).
MatD sample_sphere_directions(int dim, int q, std::uint64_t seed);

// Forward-difference estimate from loss values only:
//   grad = (1/q) * sum_i (dim/mu) * (loss(x + mu*u_i) - loss(x)) * u_i
// Exactly q + 1 loss evaluations. Non-finite losses raise EstimationError
// carrying the offending direction index (-1 for the base point).
GradEstimate estimate_input_grad(const std::function<double(const std::vector<double>&)>& loss_fn,
                                 const std::vector<double>& x, const ZoConfig& cfg);

// Batched core used by recovery loops: the caller supplies the base loss it
// already measured and an evaluator that maps a (q x dim) matrix of probe
// points to q losses in one call.
GradEstimate estimate_input_grad_batched(
    double base_loss, const std::function<std::vector<double>(const MatD&)>& batch_loss_fn,
    const double* x, int dim, const ZoConfig& cfg);

struct GeneratorGrads {
  std::vector<double> d_theta_g;  // batch mean over the cotangent products
  MatD d_z;                       // per-datum latent gradients
};

// Vector-Jacobian products through the generator's differentiable surrogate.
using JacobianVjp =
    std::function<void(const MatD& cotangents, std::vector<double>& d_theta_g, MatD& d_z)>;

// Composes per-datum input-gradient estimates with the generator Jacobians.
// grad_x holds one estimate per row; consumes no API queries.
GeneratorGrads estimated_generator_grads(const MatD& grad_x, int expected_out_dim,
                                         const JacobianVjp& vjp);

}  // namespace dfml
