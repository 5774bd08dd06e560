#include <cmath>
#include <vector>

#include "dfml/nn.hpp"
#include "doctest.h"

using namespace dfml;
using namespace dfml::nn;

namespace {

MatD random_mat(int r, int c, Rng& rng, double scale = 1.0) {
  MatD m(r, c);
  for (auto& v : m.a) v = scale * rng.normal();
  return m;
}

MatD random_probs(int r, int c, Rng& rng) {
  MatD m(r, c);
  for (int i = 0; i < r; ++i) {
    double s = 0;
    for (int j = 0; j < c; ++j) {
      m.at(i, j) = -std::log(rng.uniform() + 1e-12);
      s += m.at(i, j);
    }
    for (int j = 0; j < c; ++j) m.at(i, j) /= s;
  }
  return m;
}

double loss_value(const ArchSpec& arch, const std::vector<double>& theta, const MatD& X,
                  const LossTarget& t) {
  ModelTape<double> tape;
  Mat<double> logits = model_logits<double>(arch, theta.data(), nullptr, X, true, &tape);
  return set_loss<double>(logits, t, nullptr);
}

}  // namespace

TEST_CASE("softmax rows sum to one and log-softmax is stable at extremes") {
  MatD logits(1, 3);
  logits.at(0, 0) = 1000.0;
  logits.at(0, 1) = 999.0;
  logits.at(0, 2) = -1000.0;
  MatD p = softmax_rows(logits);
  double s = p.at(0, 0) + p.at(0, 1) + p.at(0, 2);
  CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::isfinite(p.at(0, 2)));
}

TEST_CASE("mlp parameter and input gradients match finite differences") {
  Rng rng(101);
  ArchSpec arch = ArchSpec::parse("mlp:7x5", {6}, 4);
  std::vector<double> theta;
  init_params(arch, theta, rng);
  MatD X = random_mat(3, 6, rng);
  MatD teacher = random_probs(3, 4, rng);
  LossTarget t = LossTarget::kl(teacher);

  std::vector<double> grad(theta.size());
  ModelTape<double> tape;
  Mat<double> logits = model_logits<double>(arch, theta.data(), nullptr, X, true, &tape);
  Mat<double> dlogits;
  set_loss<double>(logits, t, &dlogits);
  Mat<double> dinput;
  model_backward<double>(arch, theta.data(), nullptr, tape, dlogits, grad.data(), &dinput);

  const double eps = 1e-6;
  for (std::size_t i = 0; i < theta.size(); i += 11) {
    auto p = theta, m = theta;
    p[i] += eps;
    m[i] -= eps;
    const double fd = (loss_value(arch, p, X, t) - loss_value(arch, m, X, t)) / (2 * eps);
    CHECK(grad[i] == doctest::Approx(fd).epsilon(1e-5));
  }
  for (std::size_t i = 0; i < X.size(); i += 5) {
    MatD Xp = X, Xm = X;
    Xp.a[i] += eps;
    Xm.a[i] -= eps;
    const double fd = (loss_value(arch, theta, Xp, t) - loss_value(arch, theta, Xm, t)) / (2 * eps);
    CHECK(dinput.a[i] == doctest::Approx(fd).epsilon(1e-5));
  }
}

TEST_CASE("conv4 parameter gradient matches finite differences") {
  Rng rng(202);
  ArchSpec arch = ArchSpec::parse("conv4:4", {1, 16, 16}, 3);
  std::vector<double> theta;
  init_params(arch, theta, rng);
  MatD X(2, 256);
  for (auto& v : X.a) v = rng.uniform();
  std::vector<int> labels = {0, 2};
  LossTarget t = LossTarget::ce(labels, Reduction::sum);

  std::vector<double> grad(theta.size());
  ModelTape<double> tape;
  Mat<double> logits = model_logits<double>(arch, theta.data(), nullptr, X, true, &tape);
  Mat<double> dlogits;
  set_loss<double>(logits, t, &dlogits);
  model_backward<double>(arch, theta.data(), nullptr, tape, dlogits, grad.data(), nullptr);

  const double eps = 1e-6;
  int checked = 0;
  for (std::size_t i = 0; i < theta.size(); i += 37) {
    auto p = theta, m = theta;
    p[i] += eps;
    m[i] -= eps;
    const double fd = (loss_value(arch, p, X, t) - loss_value(arch, m, X, t)) / (2 * eps);
    // ReLU/maxpool kinks make a few coordinates non-smooth; compare loosely
    CHECK(grad[i] == doctest::Approx(fd).epsilon(1e-4));
    ++checked;
  }
  CHECK(checked > 10);
}

TEST_CASE("hessian-vector product matches finite differences of the gradient") {
  Rng rng(303);
  ArchSpec arch = ArchSpec::parse("mlp:6", {4}, 3);
  std::vector<double> theta;
  init_params(arch, theta, rng);
  MatD X = random_mat(5, 4, rng);
  MatD teacher = random_probs(5, 3, rng);
  LossTarget t = LossTarget::kl(teacher);

  std::vector<double> v(theta.size());
  for (auto& x : v) x = rng.normal();
  std::vector<double> hv = set_loss_hvp(arch, theta, v, X, t);

  const double eps = 1e-6;
  std::vector<double> gp(theta.size()), gm(theta.size());
  auto tp = theta, tm = theta;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    tp[i] = theta[i] + eps * v[i];
    tm[i] = theta[i] - eps * v[i];
  }
  set_loss_grad<double>(arch, tp.data(), X, t, gp.data());
  set_loss_grad<double>(arch, tm.data(), X, t, gm.data());
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double fd = (gp[i] - gm[i]) / (2 * eps);
    CHECK(hv[i] == doctest::Approx(fd).epsilon(5e-5));
  }
}

TEST_CASE("adam leaves parameters unchanged for zero gradient or zero lr") {
  std::vector<double> p = {1.0, -2.0, 3.0};
  std::vector<double> zero(3, 0.0), g = {0.5, -0.25, 1.0};
  Adam opt(3);
  auto before = p;
  opt.step(p.data(), zero.data(), 3, 0.01);
  CHECK(p == before);
  opt.step(p.data(), g.data(), 3, 0.0);
  CHECK(p == before);
}

TEST_CASE("adam descends a convex quadratic") {
  std::vector<double> p = {4.0, -3.0};
  Adam opt(2);
  auto f = [](const std::vector<double>& x) { return 0.5 * (x[0] * x[0] + 3 * x[1] * x[1]); };
  const double f0 = f(p);
  for (int i = 0; i < 200; ++i) {
    std::vector<double> g = {p[0], 3 * p[1]};
    opt.step(p.data(), g.data(), 2, 0.05);
  }
  CHECK(f(p) < 0.05 * f0);
}

TEST_CASE("bilevel gradient with zero inner steps is the plain outer gradient") {
  Rng rng(404);
  ArchSpec arch = ArchSpec::parse("mlp:5", {3}, 3);
  std::vector<double> theta;
  init_params(arch, theta, rng);
  MatD Xs = random_mat(4, 3, rng), Xq = random_mat(6, 3, rng);
  LossTarget ts = LossTarget::kl(random_probs(4, 3, rng));
  LossTarget tq = LossTarget::kl(random_probs(6, 3, rng));

  BilevelConfig cfg;
  cfg.inner_steps = 0;
  cfg.second_order = true;
  BilevelResult r = bilevel_grad(arch, theta, Xs, ts, Xq, tq, cfg);
  CHECK(r.theta_adapted == theta);

  std::vector<double> direct(theta.size());
  set_loss_grad<double>(arch, theta.data(), Xq, tq, direct.data());
  for (std::size_t i = 0; i < theta.size(); ++i) CHECK(r.meta_grad[i] == direct[i]);
}

TEST_CASE("second-order bilevel gradient matches finite differences of the composition") {
  Rng rng(505);
  ArchSpec arch = ArchSpec::parse("mlp:5", {4}, 3);
  std::vector<double> theta;
  init_params(arch, theta, rng);
  MatD Xs = random_mat(5, 4, rng), Xq = random_mat(5, 4, rng);
  LossTarget ts = LossTarget::kl(random_probs(5, 3, rng));
  LossTarget tq = LossTarget::kl(random_probs(5, 3, rng));

  BilevelConfig cfg;
  cfg.inner_steps = 3;
  cfg.inner_lr = 0.05;
  cfg.second_order = true;
  BilevelResult r = bilevel_grad(arch, theta, Xs, ts, Xq, tq, cfg);

  auto composed = [&](const std::vector<double>& th) {
    auto traj = inner_trajectory(arch, th, Xs, ts, cfg.inner_steps, cfg.inner_lr, nullptr);
    return loss_value(arch, traj.back(), Xq, tq);
  };
  const double eps = 1e-5;
  Rng pick(99);
  for (int k = 0; k < 5; ++k) {
    const std::size_t i = pick.uniform_int(int(theta.size()));
    auto p = theta, m = theta;
    p[i] += eps;
    m[i] -= eps;
    const double fd = (composed(p) - composed(m)) / (2 * eps);
    CHECK(r.meta_grad[i] == doctest::Approx(fd).epsilon(1e-4));
  }
}

TEST_CASE("arch tags round-trip") {
  ArchSpec a = ArchSpec::parse("mlp:64x64", {16}, 5);
  CHECK(a.tag() == "mlp:64x64");
  CHECK(a.param_count() == 16 * 64 + 64 + 64 * 64 + 64 + 64 * 5 + 5);
  ArchSpec c = ArchSpec::parse("conv4:32", {1, 16, 16}, 5);
  CHECK(c.tag() == "conv4:32");
  CHECK_THROWS_AS(ArchSpec::parse("conv4:32", {1, 12, 12}, 5), ConfigError);
  CHECK_THROWS_AS(ArchSpec::parse("zzz:1", {4}, 2), ConfigError);
  ArchSpec r = ArchSpec::parse("mlp:8:relu", {4}, 2);
  CHECK(r.mlp.act == Activation::relu);
}
