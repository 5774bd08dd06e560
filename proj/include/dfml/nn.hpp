#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "dfml/dual.hpp"
#include "dfml/errors.hpp"
#include "dfml/kernels.hpp"
#include "dfml/mat.hpp"
#include "dfml/rng.hpp"

namespace dfml::nn {

enum class Activation { tanh, relu, leaky_relu_02, sigmoid, identity };

Activation activation_from_name(const std::string& name);
std::string activation_name(Activation a);

template <typename T>
inline T activate(Activation a, const T& x) {
  using std::exp;
  using std::tanh;
  switch (a) {
    case Activation::tanh: return tanh(x);
    case Activation::relu: return x > T{} ? x : T{};
    case Activation::leaky_relu_02: return x > T{} ? x : T(0.2) * x;
    case Activation::sigmoid: return T(1.0) / (T(1.0) + exp(-x));
    case Activation::identity: return x;
  }
  return x;
}

// derivative as a function of the pre-activation
template <typename T>
inline T activate_deriv(Activation a, const T& pre) {
  using std::exp;
  using std::tanh;
  switch (a) {
    case Activation::tanh: {
      T t = tanh(pre);
      return T(1.0) - t * t;
    }
    case Activation::relu: return pre > T{} ? T(1.0) : T{};
    case Activation::leaky_relu_02: return pre > T{} ? T(1.0) : T(0.2);
    case Activation::sigmoid: {
      T s = T(1.0) / (T(1.0) + exp(-pre));
      return s * (T(1.0) - s);
    }
    case Activation::identity: return T(1.0);
  }
  return T(1.0);
}

template <typename T>
Mat<T> promote(const MatD& x) {
  Mat<T> out(x.rows, x.cols);
  for (std::size_t i = 0; i < x.size(); ++i) out.a[i] = T(x.a[i]);
  return out;
}

template <>
inline Mat<double> promote<double>(const MatD& x) {
  return x;
}

// ---------------------------------------------------------------------------
// Architectures
// ---------------------------------------------------------------------------

struct MlpSpec {
  int in_dim = 0;
  std::vector<int> hidden;
  int n_out = 0;
  Activation act = Activation::tanh;

  int layer_count() const { return int(hidden.size()) + 1; }
  int param_count() const {
    int n = 0, in = in_dim;
    for (int h : hidden) {
      n += in * h + h;
      in = h;
    }
    return n + in * n_out + n_out;
  }
};

// Four conv blocks (3x3 conv -> batch norm -> ReLU -> 2x2 max pool) and a
// linear head. Input height/width must be divisible by 16.
struct Conv4Spec {
  int in_c = 1, in_h = 16, in_w = 16;
  int nf = 32;
  int n_out = 5;

  int head_in() const { return nf * (in_h / 16) * (in_w / 16); }
  int param_count() const {
    int n = 0, c = in_c;
    for (int blk = 0; blk < 4; ++blk) {
      n += nf * c * 9 + nf;  // conv w + b
      n += 2 * nf;           // bn gamma + beta
      c = nf;
    }
    return n + head_in() * n_out + n_out;
  }
  int buffer_count() const { return 4 * 2 * nf; }  // running mean+var per block
};

struct ArchSpec {
  enum class Kind { mlp, conv4 };
  Kind kind = Kind::mlp;
  MlpSpec mlp;
  Conv4Spec conv;

  int param_count() const { return kind == Kind::mlp ? mlp.param_count() : conv.param_count(); }
  int buffer_count() const { return kind == Kind::mlp ? 0 : conv.buffer_count(); }
  int n_out() const { return kind == Kind::mlp ? mlp.n_out : conv.n_out; }
  std::vector<int> input_shape() const {
    if (kind == Kind::mlp) return {mlp.in_dim};
    return {conv.in_c, conv.in_h, conv.in_w};
  }
  std::string tag() const;

  // Tags: "mlp:64x64", "mlp:32:relu", "conv4:32". The input shape and head
  // width come from the task, not the tag.
  static ArchSpec parse(const std::string& tag, const std::vector<int>& input_shape, int n_out);
};

void init_params(const ArchSpec& arch, std::vector<double>& params, Rng& rng);
void init_buffers(const ArchSpec& arch, std::vector<double>& buffers);

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

template <typename T>
struct MlpTape {
  Mat<T> input;
  std::vector<Mat<T>> pre;   // per layer, incl. final logits
  std::vector<Mat<T>> post;  // per hidden layer
};

template <typename T>
struct Conv4BlockTape {
  Mat<T> in;        // block input (b x c*h*w)
  Mat<T> conv_out;  // pre-BN
  std::vector<T> bn_mean, bn_invstd;
  Mat<T> bn_xhat;
  Mat<T> bn_out;  // pre-ReLU
  Mat<T> relu_out;
  std::vector<int> pool_idx;
  Mat<T> pool_out;
};

template <typename T>
struct Conv4Tape {
  std::vector<Conv4BlockTape<T>> blocks;
  Mat<T> head_in;
};

template <typename T>
struct ModelTape {
  bool train_mode = true;
  MlpTape<T> mlp;
  Conv4Tape<T> conv;
};

constexpr double kBnEps = 1e-5;
constexpr double kBnMomentum = 0.1;

namespace detail {

template <typename T>
void add_bias_rows(Mat<T>& m, const T* bias) {
  for (int i = 0; i < m.rows; ++i) {
    T* r = m.row(i);
    for (int j = 0; j < m.cols; ++j) r[j] += bias[j];
  }
}

template <typename T>
Mat<T> mlp_logits_impl(const MlpSpec& spec, const T* params, const MatD& x, MlpTape<T>* tape) {
  if (x.cols != spec.in_dim) throw InputError("mlp input width mismatch");
  Mat<T> cur = promote<T>(x);
  if (tape) {
    tape->input = cur;
    tape->pre.clear();
    tape->post.clear();
  }
  const T* p = params;
  int in = spec.in_dim;
  const int L = spec.layer_count();
  for (int l = 0; l < L; ++l) {
    const int out = (l < L - 1) ? spec.hidden[l] : spec.n_out;
    Mat<T> pre(cur.rows, out);
    kernels::gemm_nn(cur.data(), p, pre.data(), cur.rows, in, out);
    add_bias_rows(pre, p + std::size_t(in) * out);
    p += std::size_t(in) * out + out;
    if (tape) tape->pre.push_back(pre);
    if (l < L - 1) {
      Mat<T> post(pre.rows, pre.cols);
      for (std::size_t i = 0; i < pre.size(); ++i) post.a[i] = activate(spec.act, pre.a[i]);
      if (tape) tape->post.push_back(post);
      cur = std::move(post);
      in = out;
    } else {
      cur = std::move(pre);
    }
  }
  return cur;
}

template <typename T>
void mlp_backward_impl(const MlpSpec& spec, const T* params, const MlpTape<T>& tape,
                       const Mat<T>& dlogits, T* dparams, Mat<T>* dinput) {
  const int L = spec.layer_count();
  // parameter offsets per layer
  std::vector<std::size_t> off(L);
  {
    std::size_t o = 0;
    int in = spec.in_dim;
    for (int l = 0; l < L; ++l) {
      const int out = (l < L - 1) ? spec.hidden[l] : spec.n_out;
      off[l] = o;
      o += std::size_t(in) * out + out;
      in = out;
    }
  }
  Mat<T> dpre = dlogits;
  for (int l = L - 1; l >= 0; --l) {
    const int in = (l == 0) ? spec.in_dim : spec.hidden[l - 1];
    const int out = (l < L - 1) ? spec.hidden[l] : spec.n_out;
    const Mat<T>& layer_in = (l == 0) ? tape.input : tape.post[l - 1];
    // dW += in^T * dpre ; db += column sums
    kernels::gemm_tn(layer_in.data(), dpre.data(), dparams + off[l], in, dpre.rows, out, true);
    T* db = dparams + off[l] + std::size_t(in) * out;
    for (int i = 0; i < dpre.rows; ++i) {
      const T* r = dpre.row(i);
      for (int j = 0; j < out; ++j) db[j] += r[j];
    }
    if (l == 0 && !dinput) return;
    Mat<T> dx(dpre.rows, in);
    kernels::gemm_nt(dpre.data(), params + off[l], dx.data(), dpre.rows, out, in);
    if (l == 0) {
      *dinput = std::move(dx);
      return;
    }
    const Mat<T>& pre_prev = tape.pre[l - 1];
    for (std::size_t i = 0; i < dx.size(); ++i)
      dx.a[i] *= activate_deriv(spec.act, pre_prev.a[i]);
    dpre = std::move(dx);
  }
}

// Batch norm over (batch, spatial) per channel. Train mode uses batch
// statistics; eval mode uses the provided running stats.
template <typename T>
void bn_forward_train(const Mat<T>& x, int channels, int spatial, const T* gamma, const T* beta,
                      Mat<T>& y, std::vector<T>& mean, std::vector<T>& invstd, Mat<T>& xhat) {
  using std::sqrt;
  const int b = x.rows;
  const double n = double(b) * spatial;
  mean.assign(channels, T{});
  invstd.assign(channels, T{});
  y = Mat<T>(x.rows, x.cols);
  xhat = Mat<T>(x.rows, x.cols);
  for (int c = 0; c < channels; ++c) {
    T m{};
    for (int i = 0; i < b; ++i) {
      const T* r = x.row(i) + std::size_t(c) * spatial;
      for (int s = 0; s < spatial; ++s) m += r[s];
    }
    m = m / T(n);
    T var{};
    for (int i = 0; i < b; ++i) {
      const T* r = x.row(i) + std::size_t(c) * spatial;
      for (int s = 0; s < spatial; ++s) {
        T d = r[s] - m;
        var += d * d;
      }
    }
    var = var / T(n);
    T is = T(1.0) / sqrt(var + T(kBnEps));
    mean[c] = m;
    invstd[c] = is;
    for (int i = 0; i < b; ++i) {
      const T* r = x.row(i) + std::size_t(c) * spatial;
      T* xh = xhat.row(i) + std::size_t(c) * spatial;
      T* yr = y.row(i) + std::size_t(c) * spatial;
      for (int s = 0; s < spatial; ++s) {
        xh[s] = (r[s] - m) * is;
        yr[s] = gamma[c] * xh[s] + beta[c];
      }
    }
  }
}

template <typename T>
void bn_backward_train(const Mat<T>& dy, const Mat<T>& xhat, const std::vector<T>& invstd,
                       int channels, int spatial, const T* gamma, Mat<T>& dx, T* dgamma, T* dbeta) {
  const int b = dy.rows;
  const double n = double(b) * spatial;
  dx = Mat<T>(dy.rows, dy.cols);
  for (int c = 0; c < channels; ++c) {
    T sum_dy{}, sum_dy_xhat{};
    for (int i = 0; i < b; ++i) {
      const T* g = dy.row(i) + std::size_t(c) * spatial;
      const T* xh = xhat.row(i) + std::size_t(c) * spatial;
      for (int s = 0; s < spatial; ++s) {
        sum_dy += g[s];
        sum_dy_xhat += g[s] * xh[s];
      }
    }
    dgamma[c] += sum_dy_xhat;
    dbeta[c] += sum_dy;
    const T k = gamma[c] * invstd[c];
    for (int i = 0; i < b; ++i) {
      const T* g = dy.row(i) + std::size_t(c) * spatial;
      const T* xh = xhat.row(i) + std::size_t(c) * spatial;
      T* d = dx.row(i) + std::size_t(c) * spatial;
      for (int s = 0; s < spatial; ++s)
        d[s] = k * (g[s] - sum_dy / T(n) - xh[s] * sum_dy_xhat / T(n));
    }
  }
}

struct Conv4Offsets {
  std::size_t conv_w[4], conv_b[4], bn_gamma[4], bn_beta[4], head_w, head_b;
};

inline Conv4Offsets conv4_offsets(const Conv4Spec& s) {
  Conv4Offsets o{};
  std::size_t p = 0;
  int c = s.in_c;
  for (int blk = 0; blk < 4; ++blk) {
    o.conv_w[blk] = p;
    p += std::size_t(s.nf) * c * 9;
    o.conv_b[blk] = p;
    p += s.nf;
    o.bn_gamma[blk] = p;
    p += s.nf;
    o.bn_beta[blk] = p;
    p += s.nf;
    c = s.nf;
  }
  o.head_w = p;
  p += std::size_t(s.head_in()) * s.n_out;
  o.head_b = p;
  return o;
}

template <typename T>
Mat<T> conv4_logits_impl(const Conv4Spec& spec, const T* params, const double* buffers,
                         const MatD& x, bool train_mode, Conv4Tape<T>* tape,
                         double* buffers_update) {
  if (x.cols != spec.in_c * spec.in_h * spec.in_w) throw InputError("conv input width mismatch");
  const Conv4Offsets off = conv4_offsets(spec);
  Mat<T> cur = promote<T>(x);
  if (tape) tape->blocks.assign(4, {});
  int c = spec.in_c, h = spec.in_h, w = spec.in_w;
  const int b = x.rows;
  for (int blk = 0; blk < 4; ++blk) {
    Conv4BlockTape<T> bt;
    if (tape) bt.in = cur;
    Mat<T> conv_out(b, spec.nf * h * w);
    kernels::conv3x3(cur.data(), params + off.conv_w[blk], params + off.conv_b[blk],
                     conv_out.data(), b, c, spec.nf, h, w);
    Mat<T> bn_out, bn_xhat;
    std::vector<T> mean, invstd;
    if (train_mode) {
      bn_forward_train(conv_out, spec.nf, h * w, params + off.bn_gamma[blk],
                       params + off.bn_beta[blk], bn_out, mean, invstd, bn_xhat);
      if (buffers_update) {
        double* rm = buffers_update + std::size_t(blk) * 2 * spec.nf;
        double* rv = rm + spec.nf;
        for (int ch = 0; ch < spec.nf; ++ch) {
          const double bm = value_of(mean[ch]);
          const double bis = value_of(invstd[ch]);
          const double bvar = 1.0 / (bis * bis) - kBnEps;
          rm[ch] = (1.0 - kBnMomentum) * rm[ch] + kBnMomentum * bm;
          rv[ch] = (1.0 - kBnMomentum) * rv[ch] + kBnMomentum * bvar;
        }
      }
    } else {
      using std::sqrt;
      const double* rm = buffers + std::size_t(blk) * 2 * spec.nf;
      const double* rv = rm + spec.nf;
      bn_out = Mat<T>(b, spec.nf * h * w);
      for (int i = 0; i < b; ++i) {
        const T* r = conv_out.row(i);
        T* yr = bn_out.row(i);
        for (int ch = 0; ch < spec.nf; ++ch) {
          const T g = params[off.bn_gamma[blk] + ch];
          const T be = params[off.bn_beta[blk] + ch];
          const double is = 1.0 / std::sqrt(rv[ch] + kBnEps);
          for (int s = 0; s < h * w; ++s) {
            const std::size_t ix = std::size_t(ch) * h * w + s;
            yr[ix] = g * ((r[ix] - T(rm[ch])) * T(is)) + be;
          }
        }
      }
    }
    Mat<T> relu_out(bn_out.rows, bn_out.cols);
    for (std::size_t i = 0; i < bn_out.size(); ++i)
      relu_out.a[i] = bn_out.a[i] > T{} ? bn_out.a[i] : T{};
    Mat<T> pool_out(b, spec.nf * (h / 2) * (w / 2));
    std::vector<int> pool_idx(pool_out.size());
    kernels::maxpool2(relu_out.data(), pool_out.data(), pool_idx.data(), b, spec.nf, h, w);
    if (tape) {
      bt.conv_out = std::move(conv_out);
      bt.bn_mean = std::move(mean);
      bt.bn_invstd = std::move(invstd);
      bt.bn_xhat = std::move(bn_xhat);
      bt.bn_out = std::move(bn_out);
      bt.relu_out = std::move(relu_out);
      bt.pool_idx = std::move(pool_idx);
      bt.pool_out = pool_out;
      (*tape).blocks[blk] = std::move(bt);
    }
    cur = std::move(pool_out);
    c = spec.nf;
    h /= 2;
    w /= 2;
  }
  if (tape) tape->head_in = cur;
  Mat<T> logits(b, spec.n_out);
  kernels::gemm_nn(cur.data(), params + off.head_w, logits.data(), b, spec.head_in(), spec.n_out);
  add_bias_rows(logits, params + off.head_b);
  return logits;
}

template <typename T>
void conv4_backward_impl(const Conv4Spec& spec, const T* params, const Conv4Tape<T>& tape,
                         bool train_mode, const double* buffers, const Mat<T>& dlogits,
                         T* dparams, Mat<T>* dinput) {
  const Conv4Offsets off = conv4_offsets(spec);
  const int b = dlogits.rows;
  // head
  kernels::gemm_tn(tape.head_in.data(), dlogits.data(), dparams + off.head_w, spec.head_in(), b,
                   spec.n_out, true);
  T* db = dparams + off.head_b;
  for (int i = 0; i < b; ++i) {
    const T* r = dlogits.row(i);
    for (int j = 0; j < spec.n_out; ++j) db[j] += r[j];
  }
  Mat<T> dcur(b, spec.head_in());
  kernels::gemm_nt(dlogits.data(), params + off.head_w, dcur.data(), b, spec.n_out,
                   spec.head_in());
  int h = spec.in_h / 16, w = spec.in_w / 16;
  for (int blk = 3; blk >= 0; --blk) {
    const Conv4BlockTape<T>& bt = tape.blocks[blk];
    const int hin = h * 2, win = w * 2;  // spatial size entering the pool of this block
    const int cin = (blk == 0) ? spec.in_c : spec.nf;
    Mat<T> drelu(b, spec.nf * hin * win);
    kernels::maxpool2_backward(dcur.data(), bt.pool_idx.data(), drelu.data(), b, spec.nf, hin,
                               win);
    // ReLU
    for (std::size_t i = 0; i < drelu.size(); ++i)
      if (!(bt.bn_out.a[i] > T{})) drelu.a[i] = T{};
    // BN
    Mat<T> dconv;
    if (train_mode) {
      bn_backward_train(drelu, bt.bn_xhat, bt.bn_invstd, spec.nf, hin * win,
                        params + off.bn_gamma[blk], dconv, dparams + off.bn_gamma[blk],
                        dparams + off.bn_beta[blk]);
    } else {
      const double* rv = buffers + std::size_t(blk) * 2 * spec.nf + spec.nf;
      dconv = Mat<T>(drelu.rows, drelu.cols);
      for (int i = 0; i < b; ++i) {
        const T* g = drelu.row(i);
        const T* xr = bt.conv_out.row(i);
        T* d = dconv.row(i);
        const double* rm = buffers + std::size_t(blk) * 2 * spec.nf;
        for (int ch = 0; ch < spec.nf; ++ch) {
          const double is = 1.0 / std::sqrt(rv[ch] + kBnEps);
          const T k = params[off.bn_gamma[blk] + ch] * T(is);
          T sg{}, sb{};
          for (int s = 0; s < hin * win; ++s) {
            const std::size_t ix = std::size_t(ch) * hin * win + s;
            d[ix] = g[ix] * k;
            sg += g[ix] * ((xr[ix] - T(rm[ch])) * T(is));
            sb += g[ix];
          }
          dparams[off.bn_gamma[blk] + ch] += sg;
          dparams[off.bn_beta[blk] + ch] += sb;
        }
      }
    }
    // conv weights + bias
    kernels::conv3x3_dweight(bt.in.data(), dconv.data(), dparams + off.conv_w[blk],
                             dparams + off.conv_b[blk], b, cin, spec.nf, hin, win, true);
    if (blk == 0 && !dinput) return;
    Mat<T> din(b, cin * hin * win);
    kernels::conv3x3_dinput(dconv.data(), params + off.conv_w[blk], din.data(), b, cin, spec.nf,
                            hin, win);
    if (blk == 0) {
      *dinput = std::move(din);
      return;
    }
    dcur = std::move(din);
    h = hin;
    w = win;
  }
}

}  // namespace detail

// Forward to logits. `train_mode` selects batch-norm statistics (batch vs
// running); `buffers_update` (double path only) advances running stats.
template <typename T>
Mat<T> model_logits(const ArchSpec& arch, const T* params, const double* buffers, const MatD& x,
                    bool train_mode, ModelTape<T>* tape, double* buffers_update = nullptr) {
  if (tape) tape->train_mode = train_mode;
  if (arch.kind == ArchSpec::Kind::mlp)
    return detail::mlp_logits_impl(arch.mlp, params, x, tape ? &tape->mlp : nullptr);
  return detail::conv4_logits_impl(arch.conv, params, buffers, x, train_mode,
                                   tape ? &tape->conv : nullptr, buffers_update);
}

// Accumulates into dparams (caller zeroes). dinput optional.
template <typename T>
void model_backward(const ArchSpec& arch, const T* params, const double* buffers,
                    const ModelTape<T>& tape, const Mat<T>& dlogits, T* dparams, Mat<T>* dinput) {
  if (arch.kind == ArchSpec::Kind::mlp)
    detail::mlp_backward_impl(arch.mlp, params, tape.mlp, dlogits, dparams, dinput);
  else
    detail::conv4_backward_impl(arch.conv, params, tape.conv, tape.train_mode, buffers, dlogits,
                                dparams, dinput);
}

// ---------------------------------------------------------------------------
// Losses on logits
// ---------------------------------------------------------------------------

enum class Reduction { sum, mean };

template <typename T>
Mat<T> log_softmax_rows(const Mat<T>& logits) {
  using std::exp;
  using std::log;
  Mat<T> out(logits.rows, logits.cols);
  for (int i = 0; i < logits.rows; ++i) {
    const T* r = logits.row(i);
    T mx = r[0];
    for (int j = 1; j < logits.cols; ++j)
      if (r[j] > mx) mx = r[j];
    T sum{};
    for (int j = 0; j < logits.cols; ++j) sum += exp(r[j] - mx);
    const T lse = mx + log(sum);
    T* o = out.row(i);
    for (int j = 0; j < logits.cols; ++j) o[j] = r[j] - lse;
  }
  return out;
}

template <typename T>
Mat<T> softmax_rows(const Mat<T>& logits) {
  using std::exp;
  Mat<T> out = log_softmax_rows(logits);
  for (std::size_t i = 0; i < out.size(); ++i) out.a[i] = exp(out.a[i]);
  return out;
}

// KL(student || teacher) summed over rows, student = softmax(logits).
// dlogits (optional) receives the gradient with the reduction applied.
template <typename T>
T kl_student_teacher(const Mat<T>& logits, const MatD& teacher, Mat<T>* dlogits, Reduction red) {
  using std::exp;
  if (teacher.rows != logits.rows || teacher.cols != logits.cols)
    throw InputError("teacher probs shape mismatch");
  const double scale = red == Reduction::mean ? 1.0 / logits.rows : 1.0;
  Mat<T> logp = log_softmax_rows(logits);
  if (dlogits) *dlogits = Mat<T>(logits.rows, logits.cols);
  T total{};
  for (int i = 0; i < logits.rows; ++i) {
    const T* lp = logp.row(i);
    const double* a = teacher.row(i);
    T row_kl{};
    for (int j = 0; j < logits.cols; ++j) {
      const double la = std::log(std::max(a[j], 1e-12));
      row_kl += exp(lp[j]) * (lp[j] - T(la));
    }
    total += row_kl;
    if (dlogits) {
      T* d = dlogits->row(i);
      for (int j = 0; j < logits.cols; ++j) {
        const double la = std::log(std::max(a[j], 1e-12));
        d[j] = T(scale) * exp(lp[j]) * (lp[j] - T(la) - row_kl);
      }
    }
  }
  return red == Reduction::mean ? total / T(double(logits.rows)) : total;
}

// Cross entropy against hard labels.
template <typename T>
T ce_hard(const Mat<T>& logits, const std::vector<int>& labels, Mat<T>* dlogits, Reduction red) {
  using std::exp;
  if (int(labels.size()) != logits.rows) throw InputError("label count mismatch");
  const double scale = red == Reduction::mean ? 1.0 / logits.rows : 1.0;
  Mat<T> logp = log_softmax_rows(logits);
  if (dlogits) *dlogits = Mat<T>(logits.rows, logits.cols);
  T total{};
  for (int i = 0; i < logits.rows; ++i) {
    const int y = labels[i];
    if (y < 0 || y >= logits.cols) throw InputError("label out of range");
    total -= logp.row(i)[y];
    if (dlogits) {
      T* d = dlogits->row(i);
      const T* lp = logp.row(i);
      for (int j = 0; j < logits.cols; ++j) d[j] = T(scale) * exp(lp[j]);
      d[y] -= T(scale);
    }
  }
  return red == Reduction::mean ? total / T(double(logits.rows)) : total;
}

// What a set-level objective compares the student's softmax against.
struct LossTarget {
  enum class Kind { kl_vs_teacher, ce_hard };
  Kind kind = Kind::kl_vs_teacher;
  MatD teacher;
  std::vector<int> labels;
  Reduction reduction = Reduction::sum;

  static LossTarget kl(MatD teacher_probs, Reduction red = Reduction::sum) {
    LossTarget t;
    t.kind = Kind::kl_vs_teacher;
    t.teacher = std::move(teacher_probs);
    t.reduction = red;
    return t;
  }
  static LossTarget ce(std::vector<int> hard_labels, Reduction red = Reduction::mean) {
    LossTarget t;
    t.kind = Kind::ce_hard;
    t.labels = std::move(hard_labels);
    t.reduction = red;
    return t;
  }
};

template <typename T>
T set_loss(const Mat<T>& logits, const LossTarget& target, Mat<T>* dlogits) {
  if (target.kind == LossTarget::Kind::kl_vs_teacher)
    return kl_student_teacher(logits, target.teacher, dlogits, target.reduction);
  return ce_hard(logits, target.labels, dlogits, target.reduction);
}

// Loss of the whole set plus gradient w.r.t. theta (grad_out zeroed inside).
template <typename T>
T set_loss_grad(const ArchSpec& arch, const T* theta, const MatD& X, const LossTarget& target,
                T* grad_out, bool train_mode = true) {
  ModelTape<T> tape;
  Mat<T> logits = model_logits(arch, theta, nullptr, X, train_mode, &tape);
  Mat<T> dlogits;
  const T loss = set_loss(logits, target, &dlogits);
  const int np = arch.param_count();
  for (int i = 0; i < np; ++i) grad_out[i] = T{};
  model_backward<T>(arch, theta, nullptr, tape, dlogits, grad_out, nullptr);
  return loss;
}

// Exact Hessian-vector product of the set loss via a dual-number pass.
std::vector<double> set_loss_hvp(const ArchSpec& arch, const std::vector<double>& theta,
                                 const std::vector<double>& v, const MatD& X,
                                 const LossTarget& target);

// ---------------------------------------------------------------------------
// Optimizers
// ---------------------------------------------------------------------------

// Plain gradient step used by differentiable inner loops.
inline void sgd_step(std::vector<double>& params, const std::vector<double>& grad, double lr) {
  for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr * grad[i];
}

class Adam {
 public:
  Adam() = default;
  explicit Adam(int n, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : m_(n, 0.0), v_(n, 0.0), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(double* params, const double* grad, int n, double lr);
  long steps_taken() const { return t_; }

  const std::vector<double>& m() const { return m_; }
  const std::vector<double>& v() const { return v_; }
  void restore(std::vector<double> m, std::vector<double> v, long t) {
    m_ = std::move(m);
    v_ = std::move(v);
    t_ = t;
  }

 private:
  std::vector<double> m_, v_;
  double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  long t_ = 0;
};

// ---------------------------------------------------------------------------
// Bi-level adaptation
// ---------------------------------------------------------------------------

struct BilevelConfig {
  int inner_steps = 5;
  double inner_lr = 0.01;
  bool second_order = true;
};

struct BilevelResult {
  std::vector<double> meta_grad;      // d outer_loss / d theta
  std::vector<double> theta_adapted;  // theta after the inner loop
  std::vector<double> inner_losses;   // inner loss at steps 0..k (k+1 values)
  double outer_loss = 0.0;
};

// Inner loop: k plain gradient steps on the support objective starting from
// theta. Outer: gradient of the query objective at the adapted parameters,
// propagated back through the inner trajectory exactly (second order) or
// applied as-is (first order).
BilevelResult bilevel_grad(const ArchSpec& arch, const std::vector<double>& theta, const MatD& Xs,
                           const LossTarget& target_s, const MatD& Xq, const LossTarget& target_q,
                           const BilevelConfig& cfg);

// Inner loop only; returns the trajectory theta_0..theta_k.
std::vector<std::vector<double>> inner_trajectory(const ArchSpec& arch,
                                                  const std::vector<double>& theta,
                                                  const MatD& Xs, const LossTarget& target_s,
                                                  int steps, double lr,
                                                  std::vector<double>* losses);

// Outer gradient given a stored inner trajectory.
BilevelResult outer_from_trajectory(const ArchSpec& arch,
                                    const std::vector<std::vector<double>>& trajectory,
                                    const MatD& Xs, const LossTarget& target_s, const MatD& Xq,
                                    const LossTarget& target_q, const BilevelConfig& cfg);

}  // namespace dfml::nn
