#include <cmath>
#include <vector>

#include "dfml/kernels.hpp"
#include "dfml/mat.hpp"
#include "dfml/rng.hpp"
#include "doctest.h"

using namespace dfml;
namespace K = dfml::kernels;

namespace {

MatD random_mat(int r, int c, Rng& rng) {
  MatD m(r, c);
  for (auto& v : m.a) v = rng.normal();
  return m;
}

// independent reference implementations
MatD naive_gemm(const MatD& A, const MatD& B) {
  MatD C(A.rows, B.cols);
  for (int i = 0; i < A.rows; ++i)
    for (int p = 0; p < A.cols; ++p)
      for (int j = 0; j < B.cols; ++j) C.at(i, j) += A.at(i, p) * B.at(p, j);
  return C;
}

std::vector<double> naive_conv3x3(const std::vector<double>& in, const std::vector<double>& w,
                                  const std::vector<double>& bias, int b, int ci, int co, int h,
                                  int wd) {
  std::vector<double> out(std::size_t(b) * co * h * wd, 0.0);
  for (int bi = 0; bi < b; ++bi)
    for (int o = 0; o < co; ++o)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < wd; ++x) {
          double acc = bias[o];
          for (int c = 0; c < ci; ++c)
            for (int ky = 0; ky < 3; ++ky)
              for (int kx = 0; kx < 3; ++kx) {
                int yy = y + ky - 1, xx = x + kx - 1;
                if (yy < 0 || yy >= h || xx < 0 || xx >= wd) continue;
                acc += in[((std::size_t(bi) * ci + c) * h + yy) * wd + xx] *
                       w[((std::size_t(o) * ci + c) * 3 + ky) * 3 + kx];
              }
          out[((std::size_t(bi) * co + o) * h + y) * wd + x] = acc;
        }
  return out;
}

struct BackendGuard {
  K::Backend saved = K::backend();
  ~BackendGuard() { K::set_backend(saved); }
};

}  // namespace

TEST_CASE("gemm variants match a naive triple loop") {
  Rng rng(7);
  MatD A = random_mat(9, 5, rng), B = random_mat(5, 11, rng);
  MatD ref = naive_gemm(A, B);

  MatD C(9, 11);
  K::gemm_nn(A.data(), B.data(), C.data(), 9, 5, 11);
  for (std::size_t i = 0; i < ref.size(); ++i) CHECK(C.a[i] == doctest::Approx(ref.a[i]).epsilon(1e-12));

  // A^T path: store A transposed and ask for gemm_tn
  MatD At(5, 9);
  for (int i = 0; i < 9; ++i)
    for (int j = 0; j < 5; ++j) At.at(j, i) = A.at(i, j);
  MatD C2(9, 11);
  K::gemm_tn(At.data(), B.data(), C2.data(), 9, 5, 11);
  for (std::size_t i = 0; i < ref.size(); ++i) CHECK(C2.a[i] == doctest::Approx(ref.a[i]).epsilon(1e-12));

  // B^T path
  MatD Bt(11, 5);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 11; ++j) Bt.at(j, i) = B.at(i, j);
  MatD C3(9, 11);
  K::gemm_nt(A.data(), Bt.data(), C3.data(), 9, 5, 11);
  for (std::size_t i = 0; i < ref.size(); ++i) CHECK(C3.a[i] == doctest::Approx(ref.a[i]).epsilon(1e-12));
}

TEST_CASE("gemm accumulate adds into C") {
  Rng rng(3);
  MatD A = random_mat(4, 3, rng), B = random_mat(3, 2, rng);
  MatD C(4, 2);
  C.fill(1.0);
  K::gemm_nn(A.data(), B.data(), C.data(), 4, 3, 2, true);
  MatD ref = naive_gemm(A, B);
  for (std::size_t i = 0; i < ref.size(); ++i) CHECK(C.a[i] == doctest::Approx(1.0 + ref.a[i]));
}

TEST_CASE("conv3x3 matches naive reference") {
  Rng rng(11);
  const int b = 2, ci = 3, co = 4, h = 6, w = 6;
  std::vector<double> in(std::size_t(b) * ci * h * w), wt(std::size_t(co) * ci * 9), bias(co);
  for (auto& v : in) v = rng.normal();
  for (auto& v : wt) v = rng.normal();
  for (auto& v : bias) v = rng.normal();
  std::vector<double> out(std::size_t(b) * co * h * w);
  K::conv3x3(in.data(), wt.data(), bias.data(), out.data(), b, ci, co, h, w);
  auto ref = naive_conv3x3(in, wt, bias, b, ci, co, h, w);
  for (std::size_t i = 0; i < ref.size(); ++i) CHECK(out[i] == doctest::Approx(ref[i]).epsilon(1e-12));
}

TEST_CASE("conv3x3 backward passes a finite-difference check") {
  Rng rng(13);
  const int b = 1, ci = 2, co = 2, h = 4, w = 4;
  std::vector<double> in(std::size_t(b) * ci * h * w), wt(std::size_t(co) * ci * 9), bias(co);
  for (auto& v : in) v = rng.normal();
  for (auto& v : wt) v = rng.normal();
  for (auto& v : bias) v = rng.normal();
  // scalar objective: sum of elementwise out * cot
  std::vector<double> cot(std::size_t(b) * co * h * w);
  for (auto& v : cot) v = rng.normal();

  auto objective = [&](const std::vector<double>& in_v, const std::vector<double>& w_v) {
    std::vector<double> out(cot.size());
    K::conv3x3(in_v.data(), w_v.data(), bias.data(), out.data(), b, ci, co, h, w);
    double s = 0;
    for (std::size_t i = 0; i < out.size(); ++i) s += out[i] * cot[i];
    return s;
  };

  std::vector<double> din(in.size()), dw(wt.size()), db(co);
  K::conv3x3_dinput(cot.data(), wt.data(), din.data(), b, ci, co, h, w);
  K::conv3x3_dweight(in.data(), cot.data(), dw.data(), db.data(), b, ci, co, h, w);

  const double eps = 1e-6;
  for (std::size_t i = 0; i < in.size(); i += 7) {
    auto p = in, m = in;
    p[i] += eps;
    m[i] -= eps;
    const double fd = (objective(p, wt) - objective(m, wt)) / (2 * eps);
    CHECK(din[i] == doctest::Approx(fd).epsilon(1e-6));
  }
  for (std::size_t i = 0; i < wt.size(); i += 5) {
    auto p = wt, m = wt;
    p[i] += eps;
    m[i] -= eps;
    const double fd = (objective(in, p) - objective(in, m)) / (2 * eps);
    CHECK(dw[i] == doctest::Approx(fd).epsilon(1e-6));
  }
}

TEST_CASE("maxpool and upsample round-trip contracts") {
  Rng rng(17);
  const int b = 2, c = 3, h = 4, w = 4;
  std::vector<double> in(std::size_t(b) * c * h * w);
  for (auto& v : in) v = rng.normal();
  std::vector<double> pooled(std::size_t(b) * c * (h / 2) * (w / 2));
  std::vector<int> idx(pooled.size());
  K::maxpool2(in.data(), pooled.data(), idx.data(), b, c, h, w);
  // every pooled value is the max of its 2x2 window
  for (int bi = 0; bi < b; ++bi)
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < h / 2; ++y)
        for (int x = 0; x < w / 2; ++x) {
          double mx = -1e300;
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx)
              mx = std::max(mx, in[((std::size_t(bi) * c + ch) * h + 2 * y + dy) * w + 2 * x + dx]);
          CHECK(pooled[((std::size_t(bi) * c + ch) * (h / 2) + y) * (w / 2) + x] == mx);
        }

  std::vector<double> up(in.size());
  K::upsample2(pooled.data(), up.data(), b, c, h / 2, w / 2);
  // upsample backward of all-ones gives 4s
  std::vector<double> ones(in.size(), 1.0), back(pooled.size());
  K::upsample2_backward(ones.data(), back.data(), b, c, h / 2, w / 2);
  for (double v : back) CHECK(v == 4.0);
}

TEST_CASE("serial and openmp backends are bitwise identical") {
  BackendGuard guard;
  Rng rng(23);
  MatD A = random_mat(33, 17, rng), B = random_mat(17, 29, rng);

  K::set_backend(K::Backend::serial);
  MatD Cs(33, 29);
  K::gemm_nn(A.data(), B.data(), Cs.data(), 33, 17, 29);

  K::set_backend(K::Backend::openmp);
  MatD Cp(33, 29);
  K::gemm_nn(A.data(), B.data(), Cp.data(), 33, 17, 29);

  for (std::size_t i = 0; i < Cs.size(); ++i) CHECK(Cs.a[i] == Cp.a[i]);

  const int b = 3, ci = 2, co = 5, h = 8, w = 8;
  std::vector<double> in(std::size_t(b) * ci * h * w), wt(std::size_t(co) * ci * 9), bias(co);
  for (auto& v : in) v = rng.normal();
  for (auto& v : wt) v = rng.normal();
  for (auto& v : bias) v = rng.normal();
  std::vector<double> o1(std::size_t(b) * co * h * w), o2(o1.size());
  K::set_backend(K::Backend::serial);
  K::conv3x3(in.data(), wt.data(), bias.data(), o1.data(), b, ci, co, h, w);
  K::set_backend(K::Backend::openmp);
  K::conv3x3(in.data(), wt.data(), bias.data(), o2.data(), b, ci, co, h, w);
  for (std::size_t i = 0; i < o1.size(); ++i) CHECK(o1[i] == o2[i]);
}
