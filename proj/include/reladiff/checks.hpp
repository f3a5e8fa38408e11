#pragma once

// Self-verification suites shared by `reladiff check`, the unit tests and
// the acceptance binary. Every suite returns named results instead of
// throwing, so a failure in one does not hide the others.

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "reladiff/oracle.hpp"

namespace reladiff::checks {

struct CheckResult {
  std::string name;
  bool passed = false;
  nlohmann::json detail = nlohmann::json::object();
  double seconds = 0.0;
};

nlohmann::json to_json(const CheckResult& r);

/// Finite differences for every differentiable primitive (rtol 1e-3, atol 1e-5).
std::vector<CheckResult> primitive_fd_suite(std::uint64_t seed = 0);

/// Full generator loss (noise MSE + L1 on x0_hat + adversarial term through a
/// frozen critic) on a 16x16 instance; rtol 1e-2.
CheckResult generator_fd_check(std::uint64_t seed = 0);

/// Second-order path: gradient penalty on a two-layer critic, differentiated
/// with respect to the critic parameters; rtol 1e-2.
CheckResult gradient_penalty_fd_check(std::uint64_t seed = 0);

/// Ancestral sampler driven by the analytic Gaussian predictor. The chain
/// starts from N(0, I), or from the exact marginal q(x_T) when `exact_start`
/// is set. With the fixed beta endpoints, short chains end far from
/// abar_T = 0 (about 0.61 at 50 steps), so only the exact start or a long
/// chain recovers the target.
CheckResult oracle_sampler_check(std::size_t steps = 50, std::size_t chains = 2000, std::uint64_t seed = 0,
                                 double mu = 1.0, double sigma2 = 0.25, double rtol = 0.05,
                                 bool exact_start = false);

/// estimate_x0(q_sample(x0, t, eps), eps, t) == x0 within 1e-5 for
/// t in {1, T/4, T/2, T} and T in {2, 50, 1000}.
CheckResult round_trip_check(std::uint64_t seed = 0);

/// RDVF and parameter-table encode/decode are bit-exact.
CheckResult persistence_round_trip_check(std::uint64_t seed = 0);

/// Everything above; `reladiff check` prints this.
std::vector<CheckResult> run_all(std::uint64_t seed = 0);

}  // namespace reladiff::checks
