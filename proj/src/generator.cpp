#include "dfml/generator.hpp"

#include <cmath>

#include "dfml/errors.hpp"
#include "dfml/kernels.hpp"

namespace dfml {

GeneratorConfig GeneratorConfig::conv_cfg(int nc, int img_size, int latent_dim, int nf) {
  GeneratorConfig c;
  c.mode = GenMode::conv;
  c.latent_dim = latent_dim;
  c.out_shape = {nc, img_size, img_size};
  c.nf = nf;
  return c;
}

GeneratorConfig GeneratorConfig::dense_cfg(int out_dim, int latent_dim, int hidden) {
  GeneratorConfig c;
  c.mode = GenMode::dense;
  c.latent_dim = latent_dim;
  c.out_shape = {out_dim};
  c.dense_hidden = hidden;
  return c;
}

Generator::ConvDims Generator::dims() const {
  ConvDims d;
  d.nc = cfg_.out_shape[0];
  d.img = cfg_.out_shape[1];
  d.s4 = d.img / 4;
  d.s2 = d.img / 2;
  d.f2 = 2 * cfg_.nf;
  return d;
}

namespace {
void xavier(double* w, std::size_t count, int fan_in, int fan_out, Rng& rng) {
  const double s = std::sqrt(6.0 / double(fan_in + fan_out));
  for (std::size_t i = 0; i < count; ++i) w[i] = rng.uniform(-s, s);
}
}  // namespace

Generator::Generator(const GeneratorConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  if (cfg_.latent_dim < 1) throw ConfigError("generator latent_dim must be positive");
  Rng rng(seed);
  if (cfg_.mode == GenMode::conv) {
    if (cfg_.out_shape.size() != 3 || cfg_.out_shape[1] != cfg_.out_shape[2])
      throw ConfigError("conv generator needs a square (nc, img, img) output shape");
    if (cfg_.out_shape[1] % 4 != 0)
      throw ConfigError("conv generator image size must be divisible by 4");
    const ConvDims d = dims();
    const int fc_out = d.f2 * d.s4 * d.s4;
    std::size_t p = 0;
    off_.fc_w = p;
    p += std::size_t(cfg_.latent_dim) * fc_out;
    off_.fc_b = p;
    p += fc_out;
    const int bn_ch[3] = {d.f2, d.f2, cfg_.nf};
    const int conv_ci[3] = {d.f2, d.f2, cfg_.nf};
    const int conv_co[3] = {d.f2, cfg_.nf, d.nc};
    off_.bn_g[0] = p;
    p += bn_ch[0];
    off_.bn_b[0] = p;
    p += bn_ch[0];
    for (int i = 0; i < 3; ++i) {
      off_.conv_w[i] = p;
      p += std::size_t(conv_co[i]) * conv_ci[i] * 9;
      off_.conv_b[i] = p;
      p += conv_co[i];
      if (i < 2) {
        off_.bn_g[i + 1] = p;
        p += bn_ch[i + 1];
        off_.bn_b[i + 1] = p;
        p += bn_ch[i + 1];
      }
    }
    theta_.assign(p, 0.0);
    xavier(theta_.data() + off_.fc_w, std::size_t(cfg_.latent_dim) * fc_out, cfg_.latent_dim,
           fc_out, rng);
    for (int i = 0; i < 3; ++i)
      xavier(theta_.data() + off_.conv_w[i], std::size_t(conv_co[i]) * conv_ci[i] * 9,
             conv_ci[i] * 9, conv_co[i] * 9, rng);
    for (int i = 0; i < 3; ++i)
      for (int c = 0; c < bn_ch[i]; ++c) theta_[off_.bn_g[i] + c] = 1.0;
    buffers_.assign(std::size_t(2) * (bn_ch[0] + bn_ch[1] + bn_ch[2]), 0.0);
    // running variances start at 1
    std::size_t b = 0;
    for (int i = 0; i < 3; ++i) {
      b += bn_ch[i];  // skip means
      for (int c = 0; c < bn_ch[i]; ++c) buffers_[b + c] = 1.0;
      b += bn_ch[i];
    }
  } else {
    if (cfg_.out_shape.size() != 1) throw ConfigError("dense generator needs a flat output shape");
    const int h = cfg_.dense_hidden, out = cfg_.out_shape[0];
    const int widths[4] = {cfg_.latent_dim, h, h, out};
    std::size_t p = 0;
    for (int l = 0; l < 3; ++l) {
      off_.dense_w[l] = p;
      p += std::size_t(widths[l]) * widths[l + 1];
      off_.dense_b[l] = p;
      p += widths[l + 1];
    }
    theta_.assign(p, 0.0);
    for (int l = 0; l < 3; ++l)
      xavier(theta_.data() + off_.dense_w[l], std::size_t(widths[l]) * widths[l + 1], widths[l],
             widths[l + 1], rng);
  }
  opt_theta_ = nn::Adam(int(theta_.size()));
}

MatD Generator::sample_latent(int batch, std::uint64_t seed) const {
  Rng rng(seed);
  MatD z(batch, cfg_.latent_dim);
  rng.fill_normal(z.data(), z.size());
  return z;
}

MatD Generator::forward(const MatD& z, bool train_mode) {
  if (z.cols != cfg_.latent_dim) throw InputError("latent width mismatch");
  return cfg_.mode == GenMode::conv ? forward_conv(z, train_mode, true)
                                    : forward_dense(z, true);
}

MatD Generator::generate_frozen(const MatD& z) {
  if (z.cols != cfg_.latent_dim) throw InputError("latent width mismatch");
  return cfg_.mode == GenMode::conv ? forward_conv(z, /*train_mode=*/false, false)
                                    : forward_dense(z, false);
}

namespace {

// batch-norm in eval mode from running stats
void bn_eval(const MatD& x, int channels, int spatial, const double* gamma, const double* beta,
             const double* running, MatD& y) {
  const double* rm = running;
  const double* rv = running + channels;
  y = MatD(x.rows, x.cols);
  for (int i = 0; i < x.rows; ++i) {
    const double* r = x.row(i);
    double* o = y.row(i);
    for (int c = 0; c < channels; ++c) {
      const double inv = 1.0 / std::sqrt(rv[c] + nn::kBnEps);
      for (int s = 0; s < spatial; ++s) {
        const std::size_t ix = std::size_t(c) * spatial + s;
        o[ix] = gamma[c] * (r[ix] - rm[c]) * inv + beta[c];
      }
    }
  }
}

void update_running(const std::vector<double>& mean, const std::vector<double>& invstd,
                    double* running, int channels) {
  for (int c = 0; c < channels; ++c) {
    const double var = 1.0 / (invstd[c] * invstd[c]) - nn::kBnEps;
    running[c] = (1.0 - nn::kBnMomentum) * running[c] + nn::kBnMomentum * mean[c];
    running[channels + c] = (1.0 - nn::kBnMomentum) * running[channels + c] + nn::kBnMomentum * var;
  }
}

}  // namespace

MatD Generator::forward_conv(const MatD& z, bool train_mode, bool keep_tape) {
  const ConvDims d = dims();
  const int b = z.rows;
  const int fc_out = d.f2 * d.s4 * d.s4;
  Tape t;
  t.train_mode = train_mode;
  t.z = z;

  MatD fc(b, fc_out);
  kernels::gemm_nn(z.data(), theta_.data() + off_.fc_w, fc.data(), b, cfg_.latent_dim, fc_out);
  for (int i = 0; i < b; ++i) {
    double* r = fc.row(i);
    for (int j = 0; j < fc_out; ++j) r[j] += theta_[off_.fc_b + j];
  }
  t.fc_out = fc;

  const int bn_ch[3] = {d.f2, d.f2, cfg_.nf};
  std::size_t running_off[3];
  running_off[0] = 0;
  running_off[1] = running_off[0] + 2 * bn_ch[0];
  running_off[2] = running_off[1] + 2 * bn_ch[1];

  auto bn_layer = [&](int idx, const MatD& x, int spatial) {
    MatD y;
    if (train_mode) {
      nn::detail::bn_forward_train<double>(x, bn_ch[idx], spatial, theta_.data() + off_.bn_g[idx],
                                           theta_.data() + off_.bn_b[idx], y, t.bn_mean[idx],
                                           t.bn_invstd[idx], t.bn_xhat[idx]);
      update_running(t.bn_mean[idx], t.bn_invstd[idx], buffers_.data() + running_off[idx],
                     bn_ch[idx]);
    } else {
      bn_eval(x, bn_ch[idx], spatial, theta_.data() + off_.bn_g[idx],
              theta_.data() + off_.bn_b[idx], buffers_.data() + running_off[idx], y);
    }
    t.bn_out[idx] = y;
    return y;
  };

  MatD bn0 = bn_layer(0, fc, d.s4 * d.s4);
  MatD up0(b, d.f2 * d.s2 * d.s2);
  kernels::upsample2(bn0.data(), up0.data(), b, d.f2, d.s4, d.s4);
  t.up0_out = up0;

  MatD conv1(b, d.f2 * d.s2 * d.s2);
  kernels::conv3x3(up0.data(), theta_.data() + off_.conv_w[0], theta_.data() + off_.conv_b[0],
                   conv1.data(), b, d.f2, d.f2, d.s2, d.s2);
  t.conv1_out = conv1;
  MatD bn1 = bn_layer(1, conv1, d.s2 * d.s2);
  MatD lr1(bn1.rows, bn1.cols);
  for (std::size_t i = 0; i < bn1.size(); ++i)
    lr1.a[i] = bn1.a[i] > 0 ? bn1.a[i] : 0.2 * bn1.a[i];
  t.lrelu1_out = lr1;

  MatD up1(b, d.f2 * d.img * d.img);
  kernels::upsample2(lr1.data(), up1.data(), b, d.f2, d.s2, d.s2);
  t.up1_out = up1;

  MatD conv2(b, cfg_.nf * d.img * d.img);
  kernels::conv3x3(up1.data(), theta_.data() + off_.conv_w[1], theta_.data() + off_.conv_b[1],
                   conv2.data(), b, d.f2, cfg_.nf, d.img, d.img);
  t.conv2_out = conv2;
  MatD bn2 = bn_layer(2, conv2, d.img * d.img);
  MatD lr2(bn2.rows, bn2.cols);
  for (std::size_t i = 0; i < bn2.size(); ++i)
    lr2.a[i] = bn2.a[i] > 0 ? bn2.a[i] : 0.2 * bn2.a[i];
  t.lrelu2_out = lr2;

  MatD conv3(b, d.nc * d.img * d.img);
  kernels::conv3x3(lr2.data(), theta_.data() + off_.conv_w[2], theta_.data() + off_.conv_b[2],
                   conv3.data(), b, cfg_.nf, d.nc, d.img, d.img);
  t.conv3_out = conv3;

  MatD y(conv3.rows, conv3.cols);
  for (std::size_t i = 0; i < conv3.size(); ++i) y.a[i] = 1.0 / (1.0 + std::exp(-conv3.a[i]));
  t.y = y;
  t.valid = keep_tape;
  if (keep_tape) tape_ = std::move(t);
  return y;
}

MatD Generator::forward_dense(const MatD& z, bool keep_tape) {
  const int h = cfg_.dense_hidden, out = cfg_.out_shape[0];
  const int widths[4] = {cfg_.latent_dim, h, h, out};
  Tape t;
  t.z = z;
  MatD cur = z;
  for (int l = 0; l < 3; ++l) {
    MatD pre(cur.rows, widths[l + 1]);
    kernels::gemm_nn(cur.data(), theta_.data() + off_.dense_w[l], pre.data(), cur.rows, widths[l],
                     widths[l + 1]);
    for (int i = 0; i < pre.rows; ++i) {
      double* r = pre.row(i);
      for (int j = 0; j < pre.cols; ++j) r[j] += theta_[off_.dense_b[l] + j];
    }
    t.dense_pre[l] = pre;
    if (l < 2) {
      MatD post(pre.rows, pre.cols);
      for (std::size_t i = 0; i < pre.size(); ++i)
        post.a[i] = pre.a[i] > 0 ? pre.a[i] : 0.2 * pre.a[i];
      t.dense_post[l] = post;
      cur = std::move(post);
    } else {
      MatD y(pre.rows, pre.cols);
      for (std::size_t i = 0; i < pre.size(); ++i) y.a[i] = 1.0 / (1.0 + std::exp(-pre.a[i]));
      t.y = y;
      t.valid = keep_tape;
      if (keep_tape) tape_ = std::move(t);
      return y;
    }
  }
  throw std::logic_error("unreachable");
}

void Generator::vjp(const MatD& cot, std::vector<double>& d_theta, MatD& d_z) const {
  if (!tape_.valid) throw InputError("generator vjp requires a preceding forward pass");
  if (cot.rows != tape_.y.rows || cot.cols != tape_.y.cols)
    throw InputError("cotangent shape does not match the last forward output");
  d_theta.assign(theta_.size(), 0.0);
  if (cfg_.mode == GenMode::conv)
    vjp_conv(cot, d_theta, d_z);
  else
    vjp_dense(cot, d_theta, d_z);
}

void Generator::vjp_dense(const MatD& cot, std::vector<double>& d_theta, MatD& d_z) const {
  const int h = cfg_.dense_hidden, out = cfg_.out_shape[0];
  const int widths[4] = {cfg_.latent_dim, h, h, out};
  const int b = cot.rows;
  // sigmoid
  MatD dpre(b, out);
  for (std::size_t i = 0; i < dpre.size(); ++i) {
    const double y = tape_.y.a[i];
    dpre.a[i] = cot.a[i] * y * (1.0 - y);
  }
  for (int l = 2; l >= 0; --l) {
    const MatD& layer_in = (l == 0) ? tape_.z : tape_.dense_post[l - 1];
    kernels::gemm_tn(layer_in.data(), dpre.data(), d_theta.data() + off_.dense_w[l], widths[l], b,
                     widths[l + 1], true);
    double* db = d_theta.data() + off_.dense_b[l];
    for (int i = 0; i < b; ++i) {
      const double* r = dpre.row(i);
      for (int j = 0; j < widths[l + 1]; ++j) db[j] += r[j];
    }
    MatD dx(b, widths[l]);
    kernels::gemm_nt(dpre.data(), theta_.data() + off_.dense_w[l], dx.data(), b, widths[l + 1],
                     widths[l]);
    if (l == 0) {
      d_z = std::move(dx);
      return;
    }
    const MatD& pre_prev = tape_.dense_pre[l - 1];
    for (std::size_t i = 0; i < dx.size(); ++i)
      dx.a[i] *= pre_prev.a[i] > 0 ? 1.0 : 0.2;
    dpre = std::move(dx);
  }
}

void Generator::vjp_conv(const MatD& cot, std::vector<double>& d_theta, MatD& d_z) const {
  const ConvDims d = dims();
  const int b = cot.rows;
  const int bn_ch[3] = {d.f2, d.f2, cfg_.nf};
  if (!tape_.train_mode) throw InputError("vjp is only defined for train-mode forwards");

  // sigmoid
  MatD dconv3(b, d.nc * d.img * d.img);
  for (std::size_t i = 0; i < dconv3.size(); ++i) {
    const double y = tape_.y.a[i];
    dconv3.a[i] = cot.a[i] * y * (1.0 - y);
  }
  // conv3: nf -> nc at img
  kernels::conv3x3_dweight(tape_.lrelu2_out.data(), dconv3.data(), d_theta.data() + off_.conv_w[2],
                           d_theta.data() + off_.conv_b[2], b, cfg_.nf, d.nc, d.img, d.img, true);
  MatD dlr2(b, cfg_.nf * d.img * d.img);
  kernels::conv3x3_dinput(dconv3.data(), theta_.data() + off_.conv_w[2], dlr2.data(), b, cfg_.nf,
                          d.nc, d.img, d.img);
  for (std::size_t i = 0; i < dlr2.size(); ++i)
    if (!(tape_.bn_out[2].a[i] > 0)) dlr2.a[i] *= 0.2;
  MatD dconv2;
  nn::detail::bn_backward_train<double>(dlr2, tape_.bn_xhat[2], tape_.bn_invstd[2], bn_ch[2],
                                        d.img * d.img, theta_.data() + off_.bn_g[2], dconv2,
                                        d_theta.data() + off_.bn_g[2],
                                        d_theta.data() + off_.bn_b[2]);
  // conv2: 2nf -> nf at img
  kernels::conv3x3_dweight(tape_.up1_out.data(), dconv2.data(), d_theta.data() + off_.conv_w[1],
                           d_theta.data() + off_.conv_b[1], b, d.f2, cfg_.nf, d.img, d.img, true);
  MatD dup1(b, d.f2 * d.img * d.img);
  kernels::conv3x3_dinput(dconv2.data(), theta_.data() + off_.conv_w[1], dup1.data(), b, d.f2,
                          cfg_.nf, d.img, d.img);
  MatD dlr1(b, d.f2 * d.s2 * d.s2);
  kernels::upsample2_backward(dup1.data(), dlr1.data(), b, d.f2, d.s2, d.s2);
  for (std::size_t i = 0; i < dlr1.size(); ++i)
    if (!(tape_.bn_out[1].a[i] > 0)) dlr1.a[i] *= 0.2;
  MatD dconv1;
  nn::detail::bn_backward_train<double>(dlr1, tape_.bn_xhat[1], tape_.bn_invstd[1], bn_ch[1],
                                        d.s2 * d.s2, theta_.data() + off_.bn_g[1], dconv1,
                                        d_theta.data() + off_.bn_g[1],
                                        d_theta.data() + off_.bn_b[1]);
  // conv1: 2nf -> 2nf at s2
  kernels::conv3x3_dweight(tape_.up0_out.data(), dconv1.data(), d_theta.data() + off_.conv_w[0],
                           d_theta.data() + off_.conv_b[0], b, d.f2, d.f2, d.s2, d.s2, true);
  MatD dup0(b, d.f2 * d.s2 * d.s2);
  kernels::conv3x3_dinput(dconv1.data(), theta_.data() + off_.conv_w[0], dup0.data(), b, d.f2,
                          d.f2, d.s2, d.s2);
  MatD dbn0(b, d.f2 * d.s4 * d.s4);
  kernels::upsample2_backward(dup0.data(), dbn0.data(), b, d.f2, d.s4, d.s4);
  MatD dfc;
  nn::detail::bn_backward_train<double>(dbn0, tape_.bn_xhat[0], tape_.bn_invstd[0], bn_ch[0],
                                        d.s4 * d.s4, theta_.data() + off_.bn_g[0], dfc,
                                        d_theta.data() + off_.bn_g[0],
                                        d_theta.data() + off_.bn_b[0]);
  // FC
  const int fc_out = d.f2 * d.s4 * d.s4;
  kernels::gemm_tn(tape_.z.data(), dfc.data(), d_theta.data() + off_.fc_w, cfg_.latent_dim, b,
                   fc_out, true);
  double* db = d_theta.data() + off_.fc_b;
  for (int i = 0; i < b; ++i) {
    const double* r = dfc.row(i);
    for (int j = 0; j < fc_out; ++j) db[j] += r[j];
  }
  d_z = MatD(b, cfg_.latent_dim);
  kernels::gemm_nt(dfc.data(), theta_.data() + off_.fc_w, d_z.data(), b, fc_out, cfg_.latent_dim);
}

JacobianVjp Generator::jacobian_products() {
  return [this](const MatD& cot, std::vector<double>& d_theta, MatD& d_z) {
    vjp(cot, d_theta, d_z);
  };
}

void Generator::apply_estimated_grads(MatD& z, const GeneratorGrads& grads, double lr) {
  if (int(grads.d_theta_g.size()) != int(theta_.size()))
    throw InputError("theta gradient size mismatch");
  if (grads.d_z.rows != z.rows || grads.d_z.cols != z.cols)
    throw InputError("latent gradient shape mismatch");
  for (double g : grads.d_theta_g)
    if (!std::isfinite(g)) throw InputError("non-finite generator gradient; update rejected");
  for (double g : grads.d_z.a)
    if (!std::isfinite(g)) throw InputError("non-finite latent gradient; update rejected");
  if (!opt_z_ready_) {
    opt_z_ = nn::Adam(int(z.size()));
    opt_z_ready_ = true;
  }
  opt_theta_.step(theta_.data(), grads.d_theta_g.data(), int(theta_.size()), lr);
  opt_z_.step(z.data(), grads.d_z.a.data(), int(z.size()), lr);
  tape_.valid = false;  // parameters moved; the cached forward is stale
}

}  // namespace dfml
