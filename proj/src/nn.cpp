#include "dfml/nn.hpp"

#include <cmath>
#include <sstream>

namespace dfml::nn {

Activation activation_from_name(const std::string& name) {
  if (name == "tanh") return Activation::tanh;
  if (name == "relu") return Activation::relu;
  if (name == "lrelu") return Activation::leaky_relu_02;
  if (name == "sigmoid") return Activation::sigmoid;
  if (name == "id") return Activation::identity;
  throw ConfigError("unknown activation '" + name + "'");
}

std::string activation_name(Activation a) {
  switch (a) {
    case Activation::tanh: return "tanh";
    case Activation::relu: return "relu";
    case Activation::leaky_relu_02: return "lrelu";
    case Activation::sigmoid: return "sigmoid";
    case Activation::identity: return "id";
  }
  return "?";
}

std::string ArchSpec::tag() const {
  std::ostringstream os;
  if (kind == Kind::mlp) {
    if (mlp.hidden.empty()) return "linear";
    os << "mlp:";
    for (std::size_t i = 0; i < mlp.hidden.size(); ++i) {
      if (i) os << 'x';
      os << mlp.hidden[i];
    }
    if (mlp.act != Activation::tanh) os << ':' << activation_name(mlp.act);
  } else {
    os << "conv4:" << conv.nf;
  }
  return os.str();
}

ArchSpec ArchSpec::parse(const std::string& tag, const std::vector<int>& input_shape, int n_out) {
  ArchSpec a;
  const auto first_colon = tag.find(':');
  const std::string head = tag.substr(0, first_colon);
  std::string rest = first_colon == std::string::npos ? "" : tag.substr(first_colon + 1);
  if (head == "linear") {
    a.kind = Kind::mlp;
    a.mlp.in_dim = shape_numel(input_shape);
    a.mlp.n_out = n_out;
    return a;
  }
  if (head == "mlp") {
    a.kind = Kind::mlp;
    if (input_shape.size() != 1)
      a.mlp.in_dim = shape_numel(input_shape);
    else
      a.mlp.in_dim = input_shape[0];
    a.mlp.n_out = n_out;
    std::string dims = rest;
    const auto second_colon = rest.find(':');
    if (second_colon != std::string::npos) {
      dims = rest.substr(0, second_colon);
      a.mlp.act = activation_from_name(rest.substr(second_colon + 1));
    }
    if (dims.empty()) throw ConfigError("mlp tag needs hidden dims, e.g. mlp:64x64");
    std::stringstream ss(dims);
    std::string part;
    while (std::getline(ss, part, 'x')) {
      const int h = std::stoi(part);
      if (h <= 0) throw ConfigError("bad hidden width in arch tag '" + tag + "'");
      a.mlp.hidden.push_back(h);
    }
    return a;
  }
  if (head == "conv4") {
    if (input_shape.size() != 3)
      throw ConfigError("conv4 arch needs a (channels, h, w) input shape");
    a.kind = Kind::conv4;
    a.conv.in_c = input_shape[0];
    a.conv.in_h = input_shape[1];
    a.conv.in_w = input_shape[2];
    a.conv.n_out = n_out;
    a.conv.nf = rest.empty() ? 32 : std::stoi(rest);
    if (a.conv.in_h % 16 != 0 || a.conv.in_w % 16 != 0)
      throw ConfigError("conv4 input height/width must be divisible by 16");
    if (a.conv.nf <= 0) throw ConfigError("conv4 filter count must be positive");
    return a;
  }
  throw ConfigError("unknown arch tag '" + tag + "'");
}

namespace {

void xavier_fill(double* w, std::size_t count, int fan_in, int fan_out, Rng& rng) {
  const double s = std::sqrt(6.0 / double(fan_in + fan_out));
  for (std::size_t i = 0; i < count; ++i) w[i] = rng.uniform(-s, s);
}

}  // namespace

void init_params(const ArchSpec& arch, std::vector<double>& params, Rng& rng) {
  params.assign(arch.param_count(), 0.0);
  if (arch.kind == ArchSpec::Kind::mlp) {
    double* p = params.data();
    int in = arch.mlp.in_dim;
    const int L = arch.mlp.layer_count();
    for (int l = 0; l < L; ++l) {
      const int out = (l < L - 1) ? arch.mlp.hidden[l] : arch.mlp.n_out;
      xavier_fill(p, std::size_t(in) * out, in, out, rng);
      p += std::size_t(in) * out + out;  // biases stay zero
      in = out;
    }
    return;
  }
  const auto off = detail::conv4_offsets(arch.conv);
  int c = arch.conv.in_c;
  for (int blk = 0; blk < 4; ++blk) {
    xavier_fill(params.data() + off.conv_w[blk], std::size_t(arch.conv.nf) * c * 9, c * 9,
                arch.conv.nf * 9, rng);
    for (int i = 0; i < arch.conv.nf; ++i) params[off.bn_gamma[blk] + i] = 1.0;
    c = arch.conv.nf;
  }
  xavier_fill(params.data() + off.head_w, std::size_t(arch.conv.head_in()) * arch.conv.n_out,
              arch.conv.head_in(), arch.conv.n_out, rng);
}

void init_buffers(const ArchSpec& arch, std::vector<double>& buffers) {
  buffers.assign(arch.buffer_count(), 0.0);
  if (arch.kind == ArchSpec::Kind::conv4) {
    for (int blk = 0; blk < 4; ++blk) {
      double* rv = buffers.data() + std::size_t(blk) * 2 * arch.conv.nf + arch.conv.nf;
      for (int i = 0; i < arch.conv.nf; ++i) rv[i] = 1.0;
    }
  }
}

std::vector<double> set_loss_hvp(const ArchSpec& arch, const std::vector<double>& theta,
                                 const std::vector<double>& v, const MatD& X,
                                 const LossTarget& target) {
  const int n = arch.param_count();
  std::vector<Dual> th(n), grad(n);
  for (int i = 0; i < n; ++i) th[i] = Dual(theta[i], v[i]);
  set_loss_grad<Dual>(arch, th.data(), X, target, grad.data());
  std::vector<double> hv(n);
  for (int i = 0; i < n; ++i) hv[i] = grad[i].d;
  return hv;
}

void Adam::step(double* params, const double* grad, int n, double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, double(t_));
  const double bc2 = 1.0 - std::pow(beta2_, double(t_));
  for (int i = 0; i < n; ++i) {
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad[i] * grad[i];
    const double mh = m_[i] / bc1;
    const double vh = v_[i] / bc2;
    params[i] -= lr * mh / (std::sqrt(vh) + eps_);
  }
}

std::vector<std::vector<double>> inner_trajectory(const ArchSpec& arch,
                                                  const std::vector<double>& theta,
                                                  const MatD& Xs, const LossTarget& target_s,
                                                  int steps, double lr,
                                                  std::vector<double>* losses) {
  const int n = arch.param_count();
  std::vector<std::vector<double>> traj;
  traj.reserve(steps + 1);
  traj.push_back(theta);
  std::vector<double> grad(n);
  if (losses) losses->clear();
  for (int s = 0; s < steps; ++s) {
    const double loss = set_loss_grad<double>(arch, traj.back().data(), Xs, target_s, grad.data());
    if (losses) losses->push_back(loss);
    std::vector<double> next = traj.back();
    sgd_step(next, grad, lr);
    traj.push_back(std::move(next));
  }
  if (losses) {
    // loss at the adapted parameters as well
    nn::ModelTape<double> tape;
    Mat<double> logits = model_logits<double>(arch, traj.back().data(), nullptr, Xs, true, &tape);
    losses->push_back(set_loss<double>(logits, target_s, nullptr));
  }
  return traj;
}

BilevelResult outer_from_trajectory(const ArchSpec& arch,
                                    const std::vector<std::vector<double>>& trajectory,
                                    const MatD& Xs, const LossTarget& target_s, const MatD& Xq,
                                    const LossTarget& target_q, const BilevelConfig& cfg) {
  const int n = arch.param_count();
  BilevelResult out;
  out.theta_adapted = trajectory.back();
  out.meta_grad.assign(n, 0.0);
  out.outer_loss =
      set_loss_grad<double>(arch, out.theta_adapted.data(), Xq, target_q, out.meta_grad.data());
  if (cfg.second_order) {
    // reverse pass: g <- (I - lr * H_j) g through the inner steps
    for (int j = int(trajectory.size()) - 2; j >= 0; --j) {
      std::vector<double> hv = set_loss_hvp(arch, trajectory[j], out.meta_grad, Xs, target_s);
      for (int i = 0; i < n; ++i) out.meta_grad[i] -= cfg.inner_lr * hv[i];
    }
  }
  return out;
}

BilevelResult bilevel_grad(const ArchSpec& arch, const std::vector<double>& theta, const MatD& Xs,
                           const LossTarget& target_s, const MatD& Xq, const LossTarget& target_q,
                           const BilevelConfig& cfg) {
  std::vector<double> inner_losses;
  auto traj =
      inner_trajectory(arch, theta, Xs, target_s, cfg.inner_steps, cfg.inner_lr, &inner_losses);
  BilevelResult out = outer_from_trajectory(arch, traj, Xs, target_s, Xq, target_q, cfg);
  out.inner_losses = std::move(inner_losses);
  return out;
}

}  // namespace dfml::nn
