#pragma once

// Closed-form references used to verify the rest of the library:
// the Bayes-optimal noise predictor for Gaussian data, and a central
// finite-difference gradient checker.

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "reladiff/diffusion.hpp"
#include "reladiff/tensor.hpp"

namespace reladiff::oracle {

/// x0 ~ N(mu, sigma2 I).
struct GaussianTarget {
  Real mu = 0.0;
  double sigma2 = 1.0;
};

/// E[x0 | x_t] under the Gaussian prior.
Tensor posterior_mean(const Tensor& x_t, std::size_t t, const Schedule& sched, const GaussianTarget& target);

/// Noise implied by the posterior mean: (x_t - sqrt(abar_t) E[x0|x_t]) / sqrt(1 - abar_t).
Tensor oracle_eps(const Tensor& x_t, std::size_t t, const Schedule& sched, const GaussianTarget& target);

struct NonFiniteLossError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct FdOptions {
  Real step = 1e-3;
  double rtol = 1e-3;
  double atol = 1e-5;
  /// Coordinates checked per parameter tensor; larger tensors are subsampled.
  std::size_t max_coords = 64;
  std::uint64_t seed = 0;
};

struct FdReport {
  /// max over checked coordinates of |a - n| / max(|a|, |n|, atol / rtol).
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t failures = 0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  bool passed() const { return failures == 0; }
};

/// Compares tape gradients of `loss` against central differences. `loss` is
/// re-evaluated with each parameter coordinate perturbed in place.
FdReport finite_diff_check(const std::function<Tensor()>& loss, std::vector<Tensor> params,
                           const FdOptions& opts = {});

}  // namespace reladiff::oracle
