#include <cmath>

#include "doctest.h"
#include "reladiff/checks.hpp"
#include "reladiff/diffusion.hpp"
#include "reladiff/errors.hpp"
#include "reladiff/oracle.hpp"
#include "reladiff/rng.hpp"

using namespace reladiff;

namespace {

Tensor scalar1(Real v) { return Tensor::constant({1}, {v}); }

// A schedule with hand-picked betas, for the closed-form examples.
Schedule flat(std::size_t steps, double beta) { return make_schedule(steps, beta, beta); }

std::size_t step_with_alpha_bar(const Schedule& s, double target) {
  for (std::size_t t = 1; t <= s.size(); ++t)
    if (std::fabs(s.alpha_bar_at(t) - target) < 1e-12) return t;
  return 0;
}

}  // namespace

TEST_CASE("schedule endpoints and closed forms") {
  const Schedule s = make_schedule(1000, 0.0005, 0.0195);
  CHECK(s.beta[0] == 0.0005);
  CHECK(s.beta[999] == 0.0195);
  for (std::size_t i = 1; i < 1000; ++i) {
    CHECK(s.beta[i] >= s.beta[i - 1]);
    CHECK(s.alpha_bar[i] < s.alpha_bar[i - 1]);
  }
  CHECK(s.alpha_bar[0] == doctest::Approx(1 - 0.0005).epsilon(1e-15));

  const Schedule two = flat(2, 0.1);
  CHECK(two.alpha_bar[0] == doctest::Approx(0.9).epsilon(1e-15));
  CHECK(two.alpha_bar[1] == doctest::Approx(0.81).epsilon(1e-15));

  const Schedule one = make_schedule(1, 0.0005, 0.0195);
  CHECK(one.alpha_bar[0] == doctest::Approx(1 - 0.0005).epsilon(1e-15));

  const Schedule fifty = make_schedule(50, 0.0005, 0.0195);
  CHECK(fifty.beta.front() == 0.0005);
  CHECK(fifty.beta.back() == 0.0195);
}

TEST_CASE("timesteps are one-based at the boundary") {
  const Schedule s = flat(2, 0.1);
  CHECK(s.beta_at(1) == s.beta[0]);
  CHECK(s.alpha_bar_at(2) == s.alpha_bar[1]);
  CHECK_THROWS_AS((void)s.beta_at(0), ContractError);
  CHECK_THROWS_AS((void)s.beta_at(3), ContractError);
}

TEST_CASE("schedule rejects bad parameters") {
  CHECK_THROWS_AS(make_schedule(0, 0.0005, 0.0195), ConfigError);
  CHECK_THROWS_AS(make_schedule(10, 0.0, 0.0195), ConfigError);
  CHECK_THROWS_AS(make_schedule(10, 0.0005, 1.0), ConfigError);
}

TEST_CASE("sigma choices") {
  const Schedule a = make_schedule(50, 0.0005, 0.0195, SigmaKind::sqrt_beta);
  const Schedule b = make_schedule(50, 0.0005, 0.0195, SigmaKind::posterior);
  for (std::size_t t = 1; t <= 50; ++t) {
    CHECK(a.sigma_at(t) == doctest::Approx(std::sqrt(a.beta_at(t))));
    CHECK(b.sigma_at(t) >= 0.0);
    CHECK(b.sigma_at(t) <= a.sigma_at(t) + 1e-15);
  }
  CHECK(sigma_kind_from_string(to_string(SigmaKind::posterior)) == SigmaKind::posterior);
}

TEST_CASE("q_sample closed forms") {
  const Schedule s = flat(2, 0.1);
  const Tensor eps = Tensor::constant({3}, {0.5, -1.0, 2.0});
  const Tensor x0 = Tensor::constant({3}, {0.2, 0.4, -0.6});

  const Tensor from_zero = q_sample(Tensor::zeros({3}), 2, eps, s);
  for (std::size_t i = 0; i < 3; ++i)
    CHECK(from_zero.data()[i] == doctest::Approx(std::sqrt(1 - 0.81) * eps.data()[i]).epsilon(1e-14));

  const Tensor scaled = q_sample(x0, 2, Tensor::zeros({3}), s);
  for (std::size_t i = 0; i < 3; ++i) CHECK(scaled.data()[i] == doctest::Approx(0.9 * x0.data()[i]).epsilon(1e-14));
}

TEST_CASE("q_sample marginal matches mean and std within three standard errors") {
  const Schedule s = make_schedule(1000, 0.0005, 0.0195);
  const std::size_t n = 100000;
  // A 3-standard-error band rejects about 0.3% of honest draws; the seeds are
  // fixed, and a 400-seed scan of the generator gave mean z^2 = 1.02.
  for (std::size_t t : {1u, 250u, 1000u}) {
    Rng rng(mix_seed(8, t));
    const Tensor x0 = Tensor::full({n}, 0.7);
    const Tensor x_t = q_sample(x0, t, Tensor::constant({n}, rng.normal_vector(n)), s);
    double m = 0, v = 0;
    for (Real e : x_t.data()) m += e;
    m /= n;
    for (Real e : x_t.data()) v += (e - m) * (e - m);
    v /= n - 1;
    const double ab = s.alpha_bar_at(t), sd = std::sqrt(1 - ab);
    CHECK(std::fabs(m - std::sqrt(ab) * 0.7) < 3 * sd / std::sqrt(double(n)));
    // Standard error of a sample std is about sd / sqrt(2n).
    CHECK(std::fabs(std::sqrt(v) - sd) < 3 * sd / std::sqrt(2.0 * n));
  }
}

TEST_CASE("variance is preserved for a known x0 distribution") {
  const Schedule s = make_schedule(200, 0.0005, 0.0195);
  const std::size_t n = 100000, t = 120;
  Rng rng(11);
  std::vector<Real> x0v(n);
  for (auto& e : x0v) e = rng.uniform(-1.0, 1.0);  // Var = 1/3
  const Tensor x_t = q_sample(Tensor::constant({n}, x0v), t, Tensor::constant({n}, rng.normal_vector(n)), s);
  double m = 0, v = 0;
  for (Real e : x_t.data()) m += e;
  m /= n;
  for (Real e : x_t.data()) v += (e - m) * (e - m);
  v /= n - 1;
  const double ab = s.alpha_bar_at(t), expected = ab / 3.0 + (1 - ab);
  // Var of a sample variance is roughly (mu4 - sigma^4) / n; bounded here by 2 sigma^4 / n.
  CHECK(std::fabs(v - expected) < 3 * std::sqrt(2.0 / n) * expected);
}

TEST_CASE("estimate_x0 closed forms") {
  const Schedule s = flat(2, 0.75);  // alpha_bar_1 = 0.25
  REQUIRE(step_with_alpha_bar(s, 0.25) == 1);
  const Tensor x0_hat = estimate_x0(scalar1(1.0), scalar1(0.5), 1, s);
  CHECK(x0_hat.item() == doctest::Approx(2 - std::sqrt(0.75)).epsilon(1e-14));

  const Tensor no_noise = estimate_x0(scalar1(0.3), scalar1(0.0), 1, s);
  CHECK(no_noise.item() == doctest::Approx(0.3 / 0.5).epsilon(1e-14));
}

TEST_CASE("estimate_x0 inverts q_sample") {
  const auto r = checks::round_trip_check(3);
  CHECK(r.passed);
  CHECK(r.detail["max_abs_error"].get<double>() <= 1e-5);
}

TEST_CASE("p_sample_step closed forms") {
  SUBCASE("single-step chain reconstructs x0") {
    const Schedule s = make_schedule(1, 0.0005, 0.0005);
    const Tensor eps = scalar1(0.2);
    const Tensor x1 = q_sample(scalar1(1.0), 1, eps, s);
    const Tensor x0 = p_sample_step(x1, eps, 1, Tensor::zeros({1}), s);
    CHECK(x0.item() == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("zero noise prediction divides by sqrt(alpha)") {
    const Schedule s = make_schedule(50, 0.0005, 0.0195);
    const Tensor prev = p_sample_step(scalar1(0.8), scalar1(0.0), 30, Tensor::zeros({1}), s);
    CHECK(prev.item() == doctest::Approx(0.8 / std::sqrt(s.alpha_at(30))).epsilon(1e-14));
  }
}

TEST_CASE("one reverse step with the true noise gives the forward posterior mean") {
  const Schedule s = make_schedule(50, 0.0005, 0.0195);
  const std::size_t t = 20;
  const Real x0 = 0.6, e = -0.4;
  const Tensor x_t = q_sample(scalar1(x0), t, scalar1(e), s);
  const double ab = s.alpha_bar_at(t), ab_prev = s.alpha_bar_at(t - 1), beta = s.beta_at(t), alpha = s.alpha_at(t);
  const double posterior_mean =
      std::sqrt(ab_prev) * beta / (1 - ab) * x0 + std::sqrt(alpha) * (1 - ab_prev) / (1 - ab) * x_t.item();
  const Tensor mean = p_sample_step(x_t, scalar1(e), t, Tensor::zeros({1}), s);
  CHECK(mean.item() == doctest::Approx(posterior_mean).epsilon(1e-12));
}

TEST_CASE("sampler with the oracle predictor recovers the target on a long chain") {
  const auto r = checks::oracle_sampler_check(1000, 4000, 5);
  INFO(r.detail.dump());
  // 4000 chains: the standard error of the variance is about 2.2%, so the
  // 5% band is wide enough for a single seed.
  CHECK(r.passed);
}

TEST_CASE("sampler with the oracle predictor is exact at 50 steps from q(x_T)") {
  const auto r = checks::oracle_sampler_check(50, 4000, 5, 1.0, 0.25, 0.05, true);
  INFO(r.detail.dump());
  CHECK(r.passed);
}

TEST_CASE("sampler is deterministic per seed") {
  const Schedule s = make_schedule(20, 0.0005, 0.0195);
  const oracle::GaussianTarget target{0.3, 0.5};
  auto predict = [&](const Tensor& x, std::size_t t) { return oracle::oracle_eps(x, t, s, target); };
  const Tensor a = run_sampler(predict, {64}, s, 9);
  const Tensor b = run_sampler(predict, {64}, s, 9);
  const Tensor c = run_sampler(predict, {64}, s, 10);
  CHECK(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
  CHECK_FALSE(std::equal(a.data().begin(), a.data().end(), c.data().begin()));
}

TEST_CASE("generator sampling: determinism, shape and range") {
  GeneratorConfig g;
  g.base_width = 4;
  g.depth = 2;
  g.embed_dim = 8;
  g.num_timesteps = 5;
  ModelParams p = build_generator(g, 1);
  {
    // Non-zero output layer so the sample depends on the network.
    Tensor w = p.at("out.conv.w");
    Rng rng(2);
    for (auto& e : w.mutable_data()) e = rng.uniform(-0.1, 0.1);
  }
  const Schedule s = make_schedule(5, 0.0005, 0.0195);
  Rng rng(3);
  const Tensor cond = Tensor::constant({1, 2, 16, 16}, rng.normal_vector(512));
  const Volume a = sample(g, p, cond, 1, s, 42);
  const Volume b = sample(g, p, cond, 1, s, 42);
  CHECK(a.dims == std::vector<std::size_t>{16, 16});
  CHECK(a.channels == 1);
  CHECK(a.data == b.data);
  for (float e : a.data) {
    CHECK(e >= 0.0f);
    CHECK(e <= 1.0f);
  }
  CHECK_THROWS_AS(sample(g, p, cond, 1, make_schedule(6, 0.0005, 0.0195), 42), LoadError);
}
