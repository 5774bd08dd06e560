#pragma once

#include <cstddef>

namespace dfml::kernels {

// Compute-heavy inner loops in two variants: a serial reference and an
// OpenMP one, switchable at runtime. Both reduce every output element in the
// same order, so results are bitwise identical; tests assert that and the
// bench target compares throughput.
enum class Backend { serial, openmp };

Backend backend();
void set_backend(Backend b);
int worker_count();

namespace detail {

template <typename T>
inline void gemm_nn_row(const T* A, const T* B, T* C, int k, int n, bool accumulate, int i) {
  const T* a = A + std::size_t(i) * k;
  T* c = C + std::size_t(i) * n;
  for (int j = 0; j < n; ++j) {
    T acc = accumulate ? c[j] : T{};
    for (int p = 0; p < k; ++p) acc += a[p] * B[std::size_t(p) * n + j];
    c[j] = acc;
  }
}

template <typename T>
inline void gemm_tn_row(const T* A, const T* B, T* C, int m, int k, int n, bool accumulate,
                        int i) {
  T* c = C + std::size_t(i) * n;
  for (int j = 0; j < n; ++j) {
    T acc = accumulate ? c[j] : T{};
    for (int p = 0; p < k; ++p) acc += A[std::size_t(p) * m + i] * B[std::size_t(p) * n + j];
    c[j] = acc;
  }
}

template <typename T>
inline void gemm_nt_row(const T* A, const T* B, T* C, int k, int n, bool accumulate, int i) {
  const T* a = A + std::size_t(i) * k;
  T* c = C + std::size_t(i) * n;
  for (int j = 0; j < n; ++j) {
    T acc = accumulate ? c[j] : T{};
    const T* b = B + std::size_t(j) * k;
    for (int p = 0; p < k; ++p) acc += a[p] * b[p];
    c[j] = acc;
  }
}

// out[b,o,:,:] for a 3x3 / stride 1 / pad 1 convolution.
template <typename T>
inline void conv3x3_plane(const T* in, const T* w, const T* bias, T* out, int ci, int co, int h,
                          int wd, int b_i, int o) {
  const T* wbase = w + std::size_t(o) * ci * 9;
  T* op = out + (std::size_t(b_i) * co + o) * h * wd;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < wd; ++x) {
      T acc = bias ? bias[o] : T{};
      for (int c = 0; c < ci; ++c) {
        const T* ip = in + (std::size_t(b_i) * ci + c) * h * wd;
        const T* wk = wbase + c * 9;
        for (int ky = -1; ky <= 1; ++ky) {
          const int yy = y + ky;
          if (yy < 0 || yy >= h) continue;
          for (int kx = -1; kx <= 1; ++kx) {
            const int xx = x + kx;
            if (xx < 0 || xx >= wd) continue;
            acc += ip[yy * wd + xx] * wk[(ky + 1) * 3 + (kx + 1)];
          }
        }
      }
      op[y * wd + x] = acc;
    }
  }
}

// din[b,c,:,:] from dout and weights (transpose of conv3x3_plane).
template <typename T>
inline void conv3x3_dinput_plane(const T* dout, const T* w, T* din, int ci, int co, int h, int wd,
                                 int b_i, int c) {
  T* dp = din + (std::size_t(b_i) * ci + c) * h * wd;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < wd; ++x) {
      T acc{};
      for (int o = 0; o < co; ++o) {
        const T* gp = dout + (std::size_t(b_i) * co + o) * h * wd;
        const T* wk = w + (std::size_t(o) * ci + c) * 9;
        for (int ky = -1; ky <= 1; ++ky) {
          const int yy = y - ky;
          if (yy < 0 || yy >= h) continue;
          for (int kx = -1; kx <= 1; ++kx) {
            const int xx = x - kx;
            if (xx < 0 || xx >= wd) continue;
            acc += gp[yy * wd + xx] * wk[(ky + 1) * 3 + (kx + 1)];
          }
        }
      }
      dp[y * wd + x] = acc;
    }
  }
}

// dw[o,:,:,:] and dbias[o], summed over the whole batch in batch order.
template <typename T>
inline void conv3x3_dweight_slice(const T* in, const T* dout, T* dw, T* dbias, int b, int ci,
                                  int co, int h, int wd, int o, bool accumulate) {
  T* dwo = dw + std::size_t(o) * ci * 9;
  if (!accumulate) {
    for (int i = 0; i < ci * 9; ++i) dwo[i] = T{};
    if (dbias) dbias[o] = T{};
  }
  for (int b_i = 0; b_i < b; ++b_i) {
    const T* gp = dout + (std::size_t(b_i) * co + o) * h * wd;
    if (dbias) {
      T acc = dbias[o];
      for (int i = 0; i < h * wd; ++i) acc += gp[i];
      dbias[o] = acc;
    }
    for (int c = 0; c < ci; ++c) {
      const T* ip = in + (std::size_t(b_i) * ci + c) * h * wd;
      T* wk = dwo + c * 9;
      for (int ky = -1; ky <= 1; ++ky) {
        for (int kx = -1; kx <= 1; ++kx) {
          T acc = wk[(ky + 1) * 3 + (kx + 1)];
          for (int y = 0; y < h; ++y) {
            const int yy = y + ky;
            if (yy < 0 || yy >= h) continue;
            for (int x = 0; x < wd; ++x) {
              const int xx = x + kx;
              if (xx < 0 || xx >= wd) continue;
              acc += gp[y * wd + x] * ip[yy * wd + xx];
            }
          }
          wk[(ky + 1) * 3 + (kx + 1)] = acc;
        }
      }
    }
  }
}

template <typename T>
inline void maxpool2_plane(const T* in, T* out, int* idx, int h, int wd, std::size_t plane) {
  const int ho = h / 2, wo = wd / 2;
  const T* ip = in + plane * h * wd;
  T* op = out + plane * ho * wo;
  int* xp = idx ? idx + plane * ho * wo : nullptr;
  for (int y = 0; y < ho; ++y) {
    for (int x = 0; x < wo; ++x) {
      int best = 0;
      T bv = ip[(2 * y) * wd + 2 * x];
      const int offs[4][2] = {{0, 0}, {0, 1}, {1, 0}, {1, 1}};
      for (int t = 1; t < 4; ++t) {
        T v = ip[(2 * y + offs[t][0]) * wd + (2 * x + offs[t][1])];
        if (v > bv) {
          bv = v;
          best = t;
        }
      }
      op[y * wo + x] = bv;
      if (xp) xp[y * wo + x] = best;
    }
  }
}

template <typename T>
inline void maxpool2_backward_plane(const T* dout, const int* idx, T* din, int h, int wd,
                                    std::size_t plane) {
  const int ho = h / 2, wo = wd / 2;
  const T* gp = dout + plane * ho * wo;
  const int* xp = idx + plane * ho * wo;
  T* dp = din + plane * h * wd;
  for (int i = 0; i < h * wd; ++i) dp[i] = T{};
  for (int y = 0; y < ho; ++y) {
    for (int x = 0; x < wo; ++x) {
      const int t = xp[y * wo + x];
      const int yy = 2 * y + (t >> 1);
      const int xx = 2 * x + (t & 1);
      dp[yy * wd + xx] = gp[y * wo + x];
    }
  }
}

// nearest-neighbor x2
template <typename T>
inline void upsample2_plane(const T* in, T* out, int h, int wd, std::size_t plane) {
  const T* ip = in + plane * h * wd;
  T* op = out + plane * 4 * h * wd;
  const int wo = 2 * wd;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < wd; ++x) {
      const T v = ip[y * wd + x];
      op[(2 * y) * wo + 2 * x] = v;
      op[(2 * y) * wo + 2 * x + 1] = v;
      op[(2 * y + 1) * wo + 2 * x] = v;
      op[(2 * y + 1) * wo + 2 * x + 1] = v;
    }
  }
}

template <typename T>
inline void upsample2_backward_plane(const T* dout, T* din, int h, int wd, std::size_t plane) {
  const T* gp = dout + plane * 4 * h * wd;
  T* dp = din + plane * h * wd;
  const int wo = 2 * wd;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < wd; ++x) {
      dp[y * wd + x] = gp[(2 * y) * wo + 2 * x] + gp[(2 * y) * wo + 2 * x + 1] +
                       gp[(2 * y + 1) * wo + 2 * x] + gp[(2 * y + 1) * wo + 2 * x + 1];
    }
  }
}

}  // namespace detail

// C (m x n) = A (m x k) * B (k x n), optionally accumulating into C.
template <typename T>
void gemm_nn(const T* A, const T* B, T* C, int m, int k, int n, bool accumulate = false) {
  if (backend() == Backend::openmp) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) detail::gemm_nn_row(A, B, C, k, n, accumulate, i);
  } else {
    for (int i = 0; i < m; ++i) detail::gemm_nn_row(A, B, C, k, n, accumulate, i);
  }
}

// C (m x n) = A^T * B, A stored (k x m), B stored (k x n).
template <typename T>
void gemm_tn(const T* A, const T* B, T* C, int m, int k, int n, bool accumulate = false) {
  if (backend() == Backend::openmp) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) detail::gemm_tn_row(A, B, C, m, k, n, accumulate, i);
  } else {
    for (int i = 0; i < m; ++i) detail::gemm_tn_row(A, B, C, m, k, n, accumulate, i);
  }
}

// C (m x n) = A * B^T, A stored (m x k), B stored (n x k).
template <typename T>
void gemm_nt(const T* A, const T* B, T* C, int m, int k, int n, bool accumulate = false) {
  if (backend() == Backend::openmp) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) detail::gemm_nt_row(A, B, C, k, n, accumulate, i);
  } else {
    for (int i = 0; i < m; ++i) detail::gemm_nt_row(A, B, C, k, n, accumulate, i);
  }
}

template <typename T>
void conv3x3(const T* in, const T* w, const T* bias, T* out, int b, int ci, int co, int h,
             int wd) {
  const int planes = b * co;
  if (backend() == Backend::openmp) {
#pragma omp parallel for schedule(static)
    for (int p = 0; p < planes; ++p)
      detail::conv3x3_plane(in, w, bias, out, ci, co, h, wd, p / co, p % co);
  } else {
    for (int p = 0; p < planes; ++p)
      detail::conv3x3_plane(in, w, bias, out, ci, co, h, wd, p / co, p % co);
  }
}

template <typename T>
void conv3x3_dinput(const T* dout, const T* w, T* din, int b, int ci, int co, int h, int wd) {
  const int planes = b * ci;
  if (backend() == Backend::openmp) {
#pragma omp parallel for schedule(static)
    for (int p = 0; p < planes; ++p)
      detail::conv3x3_dinput_plane(dout, w, din, ci, co, h, wd, p / ci, p % ci);
  } else {
    for (int p = 0; p < planes; ++p)
      detail::conv3x3_dinput_plane(dout, w, din, ci, co, h, wd, p / ci, p % ci);
  }
}

template <typename T>
void conv3x3_dweight(const T* in, const T* dout, T* dw, T* dbias, int b, int ci, int co, int h,
                     int wd, bool accumulate = false) {
  if (backend() == Backend::openmp) {
#pragma omp parallel for schedule(static)
    for (int o = 0; o < co; ++o)
      detail::conv3x3_dweight_slice(in, dout, dw, dbias, b, ci, co, h, wd, o, accumulate);
  } else {
    for (int o = 0; o < co; ++o)
      detail::conv3x3_dweight_slice(in, dout, dw, dbias, b, ci, co, h, wd, o, accumulate);
  }
}

// 2x2 max pooling, stride 2. idx (optional) records the winning corner 0..3.
template <typename T>
void maxpool2(const T* in, T* out, int* idx, int b, int c, int h, int wd) {
  const std::size_t planes = std::size_t(b) * c;
  if (backend() == Backend::openmp) {
#pragma omp parallel for schedule(static)
    for (long long p = 0; p < (long long)planes; ++p)
      detail::maxpool2_plane(in, out, idx, h, wd, std::size_t(p));
  } else {
    for (std::size_t p = 0; p < planes; ++p) detail::maxpool2_plane(in, out, idx, h, wd, p);
  }
}

template <typename T>
void maxpool2_backward(const T* dout, const int* idx, T* din, int b, int c, int h, int wd) {
  const std::size_t planes = std::size_t(b) * c;
  if (backend() == Backend::openmp) {
#pragma omp parallel for schedule(static)
    for (long long p = 0; p < (long long)planes; ++p)
      detail::maxpool2_backward_plane(dout, idx, din, h, wd, std::size_t(p));
  } else {
    for (std::size_t p = 0; p < planes; ++p) detail::maxpool2_backward_plane(dout, idx, din, h, wd, p);
  }
}

template <typename T>
void upsample2(const T* in, T* out, int b, int c, int h, int wd) {
  const std::size_t planes = std::size_t(b) * c;
  if (backend() == Backend::openmp) {
#pragma omp parallel for schedule(static)
    for (long long p = 0; p < (long long)planes; ++p)
      detail::upsample2_plane(in, out, h, wd, std::size_t(p));
  } else {
    for (std::size_t p = 0; p < planes; ++p) detail::upsample2_plane(in, out, h, wd, p);
  }
}

template <typename T>
void upsample2_backward(const T* dout, T* din, int b, int c, int h, int wd) {
  const std::size_t planes = std::size_t(b) * c;
  if (backend() == Backend::openmp) {
#pragma omp parallel for schedule(static)
    for (long long p = 0; p < (long long)planes; ++p)
      detail::upsample2_backward_plane(dout, din, h, wd, std::size_t(p));
  } else {
    for (std::size_t p = 0; p < planes; ++p) detail::upsample2_backward_plane(dout, din, h, wd, p);
  }
}

}  // namespace dfml::kernels
