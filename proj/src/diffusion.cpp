#include "reladiff/diffusion.hpp"

#include <algorithm>
#include <cmath>

#include "reladiff/errors.hpp"
#include "reladiff/rng.hpp"

namespace reladiff {

std::string to_string(SigmaKind kind) { return kind == SigmaKind::sqrt_beta ? "sqrt_beta" : "posterior"; }

SigmaKind sigma_kind_from_string(const std::string& name) {
  if (name == "sqrt_beta") return SigmaKind::sqrt_beta;
  if (name == "posterior") return SigmaKind::posterior;
  throw ConfigError("sigma_kind: unknown value '" + name + "' (expected sqrt_beta or posterior)");
}

std::size_t Schedule::index(std::size_t t) const {
  if (t < 1 || t > steps)
    throw ContractError("timestep " + std::to_string(t) + " outside [1, " + std::to_string(steps) + "]");
  return t - 1;
}

Schedule make_schedule(std::size_t steps, double beta_1, double beta_T, SigmaKind sigma_kind) {
  if (steps < 1) throw ConfigError("T: must be >= 1");
  if (!(beta_1 > 0.0)) throw ConfigError("beta_1: must be > 0");
  if (!(beta_1 <= beta_T)) throw ConfigError("beta_T: must be >= beta_1");
  if (!(beta_T < 1.0)) throw ConfigError("beta_T: must be < 1");

  Schedule s;
  s.steps = steps;
  s.beta.resize(steps);
  s.alpha.resize(steps);
  s.alpha_bar.resize(steps);
  s.sigma.resize(steps);
  double running = 1.0;
  for (std::size_t i = 0; i < steps; ++i) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(steps - 1);
    s.beta[i] = i + 1 == steps && steps > 1 ? beta_T : beta_1 + (beta_T - beta_1) * frac;
    s.alpha[i] = 1.0 - s.beta[i];
    running *= s.alpha[i];
    s.alpha_bar[i] = running;
  }
  for (std::size_t i = 0; i < steps; ++i) {
    if (sigma_kind == SigmaKind::sqrt_beta) {
      s.sigma[i] = std::sqrt(s.beta[i]);
    } else {
      const double prev = i == 0 ? 1.0 : s.alpha_bar[i - 1];
      s.sigma[i] = std::sqrt(s.beta[i] * (1.0 - prev) / (1.0 - s.alpha_bar[i]));
    }
  }
  return s;
}

Tensor q_sample(const Tensor& x0, std::size_t t, const Tensor& eps, const Schedule& sched) {
  const double ab = sched.alpha_bar_at(t);
  if (x0.shape() != eps.shape())
    throw ShapeError("q_sample: x0 " + to_string(x0.shape()) + " vs eps " + to_string(eps.shape()));
  return mul_scalar(x0, static_cast<Real>(std::sqrt(ab))) + mul_scalar(eps, static_cast<Real>(std::sqrt(1.0 - ab)));
}

Tensor estimate_x0(const Tensor& x_t, const Tensor& eps_hat, std::size_t t, const Schedule& sched) {
  const double ab = sched.alpha_bar_at(t);
  if (x_t.shape() != eps_hat.shape())
    throw ShapeError("estimate_x0: x_t " + to_string(x_t.shape()) + " vs eps_hat " + to_string(eps_hat.shape()));
  Tensor residual = x_t - mul_scalar(eps_hat, static_cast<Real>(std::sqrt(1.0 - ab)));
  return mul_scalar(residual, static_cast<Real>(1.0 / std::sqrt(ab)));
}

Tensor p_sample_step(const Tensor& x_t, const Tensor& eps_hat, std::size_t t, const Tensor& z, const Schedule& sched) {
  const std::size_t i = sched.index(t);
  if (x_t.shape() != eps_hat.shape() || x_t.shape() != z.shape())
    throw ShapeError("p_sample_step: shapes " + to_string(x_t.shape()) + ", " + to_string(eps_hat.shape()) + ", " +
                     to_string(z.shape()));
  if (t == 1)
    for (Real v : z.data())
      if (v != 0.0) throw ContractError("p_sample_step: z must be zero at t = 1");
  const double coef = (1.0 - sched.alpha[i]) / std::sqrt(1.0 - sched.alpha_bar[i]);
  Tensor mean = mul_scalar(x_t - mul_scalar(eps_hat, static_cast<Real>(coef)),
                           static_cast<Real>(1.0 / std::sqrt(sched.alpha[i])));
  if (t == 1) return mean;
  return mean + mul_scalar(z, static_cast<Real>(sched.sigma[i]));
}

Tensor run_sampler(const NoisePredictor& predict, const Shape& shape, const Schedule& sched, std::uint64_t seed) {
  Rng rng(seed);
  Tensor x_T = Tensor::constant(shape, rng.normal_vector(numel(shape)));
  return run_sampler_from(predict, x_T, sched, rng);
}

Tensor run_sampler_from(const NoisePredictor& predict, const Tensor& x_T, const Schedule& sched, Rng& rng) {
  NoGradGuard no_grad;
  const Shape& shape = x_T.shape();
  const std::size_t n = numel(shape);
  Tensor x = x_T.detach();
  for (std::size_t t = sched.size(); t >= 1; --t) {
    Tensor eps_hat = predict(x, t);
    Tensor z = t > 1 ? Tensor::constant(shape, rng.normal_vector(n)) : Tensor::zeros(shape);
    x = p_sample_step(x, eps_hat, t, z, sched);
  }
  return x;
}

Tensor sample_batch(const GeneratorConfig& cfg, const ModelParams& params, const Tensor& cond,
                    const Shape& spatial, const std::vector<std::size_t>& tracers, const Schedule& sched,
                    std::uint64_t seed) {
  if (sched.size() != cfg.num_timesteps)
    throw LoadError("schedule has " + std::to_string(sched.size()) + " steps, generator was built for " +
                    std::to_string(cfg.num_timesteps));
  if (spatial.size() != cfg.spatial_rank) throw LoadError("spatial rank does not match the generator config");
  const std::size_t cond_ch = cond.defined() ? cond.extent(1) : 0;
  if (cond_ch + cfg.out_channels != cfg.in_channels)
    throw LoadError("condition has " + std::to_string(cond_ch) + " channels, generator expects " +
                    std::to_string(cfg.in_channels - cfg.out_channels));
  const std::size_t n = tracers.size();
  if (cond.defined() && cond.extent(0) != n) throw ShapeError("condition batch does not match tracer count");
  Shape shape{n, cfg.out_channels};
  shape.insert(shape.end(), spatial.begin(), spatial.end());
  auto predict = [&](const Tensor& x_t, std::size_t t) {
    std::vector<ConditionInfo> info(n);
    for (std::size_t i = 0; i < n; ++i) info[i] = {t, tracers[i]};
    return generator_forward(cfg, params, x_t, cond, info);
  };
  return run_sampler(predict, shape, sched, seed);
}

Volume to_unit_volume(const Tensor& x, std::size_t n) {
  Volume v = Volume::from_tensor(x, n);
  for (auto& e : v.data) e = std::clamp((e + 1.0f) * 0.5f, 0.0f, 1.0f);
  v.meta = {{"kind", "sample"}, {"value_range", "unit"}};
  return v;
}

Volume sample(const GeneratorConfig& cfg, const ModelParams& params, const Tensor& cond, std::size_t tracer,
              const Schedule& sched, std::uint64_t seed) {
  if (!cond.defined()) throw ContractError("sample takes its spatial shape from cond; use sample_batch without one");
  const Shape spatial(cond.shape().begin() + 2, cond.shape().end());
  Volume v = to_unit_volume(sample_batch(cfg, params, cond, spatial, {tracer}, sched, seed), 0);
  v.meta["seed"] = seed;
  v.meta["tracer"] = tracer;
  return v;
}

}  // namespace reladiff
