#pragma once

// Linear-beta DDPM schedule, forward noising, clean-image estimate and the
// ancestral sampler.
//
// Timesteps are 1-based at every public entry point (t in 1..T). The arrays in
// Schedule are 0-based: beta[t - 1] is the value for timestep t.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "reladiff/nn.hpp"
#include "reladiff/rng.hpp"
#include "reladiff/tensor.hpp"
#include "reladiff/volume.hpp"

namespace reladiff {

enum class SigmaKind {
  sqrt_beta,  ///< sigma_t = sqrt(beta_t)
  posterior,  ///< sigma_t = sqrt(beta_t * (1 - abar_{t-1}) / (1 - abar_t))
};

std::string to_string(SigmaKind kind);
SigmaKind sigma_kind_from_string(const std::string& name);

struct Schedule {
  std::size_t steps = 0;
  std::vector<double> beta;
  std::vector<double> alpha;
  std::vector<double> alpha_bar;
  std::vector<double> sigma;

  std::size_t size() const { return steps; }
  double beta_at(std::size_t t) const { return beta[index(t)]; }
  double alpha_at(std::size_t t) const { return alpha[index(t)]; }
  double alpha_bar_at(std::size_t t) const { return alpha_bar[index(t)]; }
  double sigma_at(std::size_t t) const { return sigma[index(t)]; }
  /// Converts a 1-based timestep to an array index; throws ContractError out of range.
  std::size_t index(std::size_t t) const;
};

Schedule make_schedule(std::size_t steps, double beta_1, double beta_T, SigmaKind sigma_kind = SigmaKind::sqrt_beta);

/// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.
Tensor q_sample(const Tensor& x0, std::size_t t, const Tensor& eps, const Schedule& sched);

/// (x_t - sqrt(1 - abar_t) eps_hat) / sqrt(abar_t). Differentiable in both inputs.
Tensor estimate_x0(const Tensor& x_t, const Tensor& eps_hat, std::size_t t, const Schedule& sched);

/// One ancestral step. `z` must be all zeros at t = 1.
Tensor p_sample_step(const Tensor& x_t, const Tensor& eps_hat, std::size_t t, const Tensor& z, const Schedule& sched);

using NoisePredictor = std::function<Tensor(const Tensor& x_t, std::size_t t)>;

/// Runs x_T ~ N(0, I) through T reverse steps. Every random draw comes from a
/// generator seeded with `seed`, so equal seeds give bit-identical output.
Tensor run_sampler(const NoisePredictor& predict, const Shape& shape, const Schedule& sched, std::uint64_t seed);
/// Same reverse chain from a caller-supplied x_T; the z draws come from `rng`.
Tensor run_sampler_from(const NoisePredictor& predict, const Tensor& x_T, const Schedule& sched, Rng& rng);

/// Generator-driven sampler for a batch: cond is [N, Cc, *S] (undefined when
/// the config uses no condition channels) and `tracers` has N labels.
/// Returns x_0 in the model's [-1, 1] range, shape [N, out_channels, *S].
Tensor sample_batch(const GeneratorConfig& cfg, const ModelParams& params, const Tensor& cond,
                    const Shape& spatial, const std::vector<std::size_t>& tracers, const Schedule& sched,
                    std::uint64_t seed);

/// Single volume: runs the sampler and maps x_0 back to [0, 1] (clamped).
/// Throws LoadError when the schedule or condition disagrees with `cfg`.
Volume sample(const GeneratorConfig& cfg, const ModelParams& params, const Tensor& cond, std::size_t tracer,
              const Schedule& sched, std::uint64_t seed);

/// [-1, 1] model range to [0, 1] storage range, clamped; one volume per batch element.
Volume to_unit_volume(const Tensor& x, std::size_t n);

}  // namespace reladiff
