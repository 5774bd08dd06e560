#pragma once

#include <cstdint>
#include <vector>

#include "dfml/mat.hpp"
#include "dfml/nn.hpp"
#include "dfml/zo_grad.hpp"

namespace dfml {

enum class GenMode { dense, conv };

struct GeneratorConfig {
  GenMode mode = GenMode::conv;
  int latent_dim = 256;
  std::vector<int> out_shape;  // conv: {nc, img, img} with img % 4 == 0; dense: {dim}
  int nf = 64;                 // conv base filter count
  int dense_hidden = 64;

  static GeneratorConfig conv_cfg(int nc, int img_size, int latent_dim = 256, int nf = 64);
  static GeneratorConfig dense_cfg(int out_dim, int latent_dim = 256, int hidden = 64);
};

// Maps latent noise to synthetic inputs in (0,1). The conv layout is
// FC -> reshape -> BN -> up x2 -> conv+BN+LeakyReLU -> up x2 ->
// conv+BN+LeakyReLU -> conv -> sigmoid; dense is a three-layer perceptron
// ending in sigmoid. Labels never enter the generator; conditioning lives in
// the recovery loss.
class Generator {
 public:
  Generator(const GeneratorConfig& cfg, std::uint64_t seed);

  const GeneratorConfig& config() const { return cfg_; }
  int latent_dim() const { return cfg_.latent_dim; }
  int out_dim() const { return shape_numel(cfg_.out_shape); }
  int param_count() const { return int(theta_.size()); }
  const std::vector<double>& params() const { return theta_; }

  // Draws a fresh standard-normal latent batch.
  MatD sample_latent(int batch, std::uint64_t seed) const;

  // Forward pass; train_mode batch norm uses batch statistics and advances
  // the running buffers. Retains what the next vjp() call needs.
  MatD forward(const MatD& z, bool train_mode = true);

  // Vector-Jacobian products for the most recent forward: cotangents on the
  // outputs produce the summed parameter cotangent and per-datum latent
  // cotangents.
  void vjp(const MatD& cotangents, std::vector<double>& d_theta, MatD& d_z) const;
  JacobianVjp jacobian_products();

  // Adaptive-moment update of (theta_G, z) from estimated gradients.
  void apply_estimated_grads(MatD& z, const GeneratorGrads& grads, double lr);

  // Generation with frozen normalization statistics (post-recovery audits).
  MatD generate_frozen(const MatD& z);

 private:
  struct ConvDims {
    int nc, img, s4, s2, f2;  // f2 = 2*nf
  };
  ConvDims dims() const;

  MatD forward_conv(const MatD& z, bool train_mode, bool keep_tape);
  MatD forward_dense(const MatD& z, bool keep_tape);
  void vjp_conv(const MatD& cot, std::vector<double>& d_theta, MatD& d_z) const;
  void vjp_dense(const MatD& cot, std::vector<double>& d_theta, MatD& d_z) const;

  GeneratorConfig cfg_;
  std::vector<double> theta_;
  std::vector<double> buffers_;  // conv running stats: 3 BN layers
  nn::Adam opt_theta_;
  nn::Adam opt_z_;
  bool opt_z_ready_ = false;

  // tape of the last forward
  struct Tape {
    bool valid = false;
    bool train_mode = true;
    MatD z;
    MatD fc_out;
    std::vector<double> bn_mean[3], bn_invstd[3];
    MatD bn_xhat[3], bn_out[3];
    MatD up0_out, conv1_out, lrelu1_out, up1_out, conv2_out, lrelu2_out, conv3_out;
    MatD dense_pre[3], dense_post[2];
    MatD y;
  };
  Tape tape_;

  // parameter offsets
  struct Offsets {
    std::size_t fc_w, fc_b;
    std::size_t bn_g[3], bn_b[3];
    std::size_t conv_w[3], conv_b[3];
    std::size_t dense_w[3], dense_b[3];
  };
  Offsets off_{};
};

}  // namespace dfml
