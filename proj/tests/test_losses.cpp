#include <cmath>

#include "doctest.h"
#include "reladiff/errors.hpp"
#include "reladiff/losses.hpp"
#include "reladiff/oracle.hpp"
#include "reladiff/rng.hpp"

using namespace reladiff;

namespace {

const double kLog2 = std::log(2.0);

Tensor vec(std::vector<Real> v) {
  const std::size_t n = v.size();
  return Tensor::constant({n}, std::move(v));
}

double softplus_d(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::fabs(x))); }

// D(x) = sum_i w_i x_i per batch row.
Critic linear_critic(const Tensor& w) {
  return [w](const Tensor& x) {
    const std::size_t n = x.extent(0);
    return reshape(sum_to(mul(x, w), {n, 1}), {n});
  };
}

}  // namespace

TEST_CASE("noise and image loss examples") {
  CHECK(noise_loss(vec({0.3, -0.2}), vec({0.3, -0.2})).item() == 0.0);
  CHECK(noise_loss(vec({1}), vec({0})).item() == 1.0);
  CHECK(noise_loss(vec({1, 1}), vec({0, 2})).item() == 1.0);

  CHECK(image_loss(vec({0.1, 0.9}), vec({0.1, 0.9})).item() == 0.0);
  CHECK(image_loss(vec({0.0, 0.5}), vec({0.25, 0.75})).item() == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(image_loss(vec({0, 1}), vec({1, 1})).item() == 0.5);

  CHECK_THROWS_AS(noise_loss(vec({1, 2}), vec({1})), ShapeError);
  CHECK_THROWS_AS(image_loss(vec({1, 2}), vec({1, 2, 3})), ShapeError);
}

TEST_CASE("relativistic pair examples") {
  const AdvPair equal = rel_adv_losses(vec({0.7, -1.2}), vec({0.7, -1.2}));
  CHECK(equal.g.item() == doctest::Approx(kLog2).epsilon(1e-12));
  CHECK(equal.d.item() == doctest::Approx(kLog2).epsilon(1e-12));

  const AdvPair far = rel_adv_losses(vec({10}), vec({0}));
  CHECK(far.d.item() == doctest::Approx(4.5398899e-5).epsilon(1e-6));
  CHECK(far.g.item() == doctest::Approx(10.0000454).epsilon(1e-8));

  const Tensor a = vec({0.3, 2.0, -1.0}), b = vec({-0.5, 1.0, 4.0});
  const AdvPair ab = rel_adv_losses(a, b), ba = rel_adv_losses(b, a);
  CHECK(ab.g.item() == ba.d.item());
  CHECK(ab.d.item() == ba.g.item());

  CHECK_THROWS_AS(rel_adv_losses(vec({1, 2}), vec({1, 2, 3})), ShapeError);
}

TEST_CASE("standard pair for the ablation") {
  const Tensor r = vec({0.4, -2.0}), f = vec({1.5, 0.1});
  const AdvPair p = standard_adv_losses(r, f);
  const double d = (softplus_d(-0.4) + softplus_d(2.0)) / 2 + (softplus_d(1.5) + softplus_d(0.1)) / 2;
  const double g = (softplus_d(-1.5) + softplus_d(-0.1)) / 2;
  CHECK(p.d.item() == doctest::Approx(d).epsilon(1e-12));
  CHECK(p.g.item() == doctest::Approx(g).epsilon(1e-12));

  LossWeights w;
  w.use_relativistic = false;
  CHECK(adv_losses(r, f, w).g.item() == p.g.item());
  w.use_relativistic = true;
  CHECK(adv_losses(r, f, w).g.item() == rel_adv_losses(r, f).g.item());
}

TEST_CASE("softplus pair sums to at least 2 log 2, with equality only at zero") {
  for (double delta : {-50.0, -3.0, -0.1, -1e-4, 0.0, 1e-4, 0.5, 7.0, 50.0}) {
    const AdvPair p = rel_adv_losses(vec({delta}), vec({0.0}));
    const double s = p.g.item() + p.d.item();
    if (delta == 0.0)
      CHECK(s == doctest::Approx(2 * kLog2).epsilon(1e-15));
    else
      CHECK(s > 2 * kLog2);
  }
}

TEST_CASE("generator gradient does not saturate") {
  for (double delta : {-50.0, -10.0, 0.0, 10.0, 50.0}) {
    Tensor fake = Tensor::parameter({1}, {0.0});
    const Tensor real = vec({delta});
    const GradMap g = backward(rel_adv_losses(real, fake).g);
    CHECK(g.at(fake).item() < 0.0);  // raising d_fake lowers l_g
    CHECK(std::fabs(g.at(fake).item()) > 0.0);
  }
}

TEST_CASE("gradient penalty of a linear critic is 2 |w|^2") {
  Tensor w = Tensor::parameter({1, 2}, {3, 4});
  Rng rng(3);
  for (int trial = 0; trial < 3; ++trial) {
    const Tensor real = Tensor::constant({5, 2}, rng.normal_vector(10));
    const Tensor fake = Tensor::constant({5, 2}, rng.normal_vector(10));
    const Tensor gp = gradient_penalty(linear_critic(w), real, fake);
    CHECK(gp.item() == doctest::Approx(50.0).epsilon(1e-12));
  }
}

TEST_CASE("gradient of the linear-critic penalty is 4 w") {
  Tensor w = Tensor::parameter({1, 2}, {3, 4});
  const Tensor real = Tensor::constant({2, 2}, {0.1, -0.4, 1.0, 0.3});
  const Tensor fake = Tensor::constant({2, 2}, {-0.2, 0.5, 0.8, -1.1});
  auto loss = [&] { return gradient_penalty(linear_critic(w), real, fake); };
  const GradMap g = backward(loss());
  CHECK(g.at(w).data()[0] == doctest::Approx(12.0).epsilon(1e-12));
  CHECK(g.at(w).data()[1] == doctest::Approx(16.0).epsilon(1e-12));
  const auto report = oracle::finite_diff_check(loss, {w});
  CHECK(report.passed());
  CHECK(report.max_rel_error < 1e-3);
}

TEST_CASE("gradient penalty is non-negative and needs grad mode") {
  Rng rng(5);
  Tensor w = Tensor::parameter({1, 3}, rng.normal_vector(3));
  auto critic = [w](const Tensor& x) { return reshape(sum_to(softplus(mul(x, w)), {x.extent(0), 1}), {x.extent(0)}); };
  for (int trial = 0; trial < 5; ++trial) {
    const Tensor real = Tensor::constant({4, 3}, rng.normal_vector(12));
    const Tensor fake = Tensor::constant({4, 3}, rng.normal_vector(12));
    CHECK(gradient_penalty(critic, real, fake).item() >= 0.0);
  }
  NoGradGuard off;
  CHECK_THROWS_AS(gradient_penalty(critic, Tensor::zeros({1, 3}), Tensor::zeros({1, 3})), CapabilityError);
}

TEST_CASE("critic evaluation shares one pass over real and fake") {
  int calls = 0;
  Tensor w = Tensor::parameter({1, 2}, {1, -1});
  Critic c = [&](const Tensor& x) {
    ++calls;
    CHECK(x.extent(0) == 4);
    return linear_critic(w)(x);
  };
  const Tensor real = Tensor::constant({2, 2}, {1, 0, 0, 1});
  const Tensor fake = Tensor::constant({2, 2}, {2, 0, 0, 2});
  const CriticEval e = evaluate_critic(c, real, fake, true);
  CHECK(calls == 1);
  CHECK(e.d_real.data()[0] == 1.0);
  CHECK(e.d_real.data()[1] == -1.0);
  CHECK(e.d_fake.data()[0] == 2.0);
  CHECK(e.penalty.item() == doctest::Approx(4.0).epsilon(1e-12));
  CHECK_FALSE(evaluate_critic(c, real, fake, false).penalty.defined());
}

TEST_CASE("combine examples") {
  LossWeights w;
  LossParts p;
  p.l_noise = Tensor::scalar(0.5);
  p.l_image = Tensor::scalar(0.1);
  p.l_rel_g = Tensor::scalar(0.0);
  p.l_rel_d = Tensor::scalar(0.0);
  p.l_gp = Tensor::scalar(0.0);
  CHECK(combine(p, w).report.total_g == doctest::Approx(0.6).epsilon(1e-15));

  p.l_rel_g = Tensor::scalar(0.7);
  CHECK(combine(p, w).report.total_g - 0.6 == doctest::Approx(0.07).epsilon(1e-12));

  p.l_rel_d = Tensor::scalar(0.4);
  p.l_gp = Tensor::scalar(3.0);
  CHECK(combine(p, w).report.total_d == doctest::Approx(0.1 * (0.4 + 3.0)).epsilon(1e-12));
  w.use_gp = false;
  const Objectives off = combine(p, w);
  CHECK(off.report.total_d == doctest::Approx(0.1 * 0.4).epsilon(1e-12));
  CHECK(off.report.l_gp == 0.0);
}
