#pragma once

// Run configuration: JSON file plus RELADIFF_* environment overrides.
//
// Every top-level scalar key can be overridden by an environment variable
// named RELADIFF_ followed by the key in upper case, for example
// RELADIFF_EPOCHS=5 or RELADIFF_USE_GP=false. Values are parsed as JSON
// first and fall back to a plain string; RELADIFF_T and RELADIFF_BETA_T map
// onto the upper-case keys.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "reladiff/diffusion.hpp"
#include "reladiff/losses.hpp"
#include "reladiff/nn.hpp"

namespace reladiff {

constexpr const char* kEnvPrefix = "RELADIFF_";

struct RunConfig {
  std::vector<std::size_t> dims = {32, 32};
  std::size_t T = 200;
  double beta_1 = 0.0005;
  double beta_T = 0.0195;
  SigmaKind sigma_kind = SigmaKind::sqrt_beta;
  std::size_t batch_size = 3;
  std::size_t epochs = 30;
  double lr_g = 5e-5;
  double lr_d = 5e-6;
  double lambda_adv = 0.1;
  double gp_weight = 1.0;
  bool use_relativistic = true;
  bool use_gp = true;
  bool use_t1 = true;
  bool use_t2f = true;
  std::uint64_t seed = 0;
  std::string manifest;
  std::string output_dir = "runs/default";
  /// Stops after this many optimizer steps in total (0 = no limit).
  std::size_t max_steps = 0;

  // Architecture
  std::size_t base_width = 16;
  std::size_t depth = 3;
  std::size_t embed_dim = 32;
  bool use_bottleneck_attention = false;
  std::vector<std::size_t> disc_widths = {16, 32, 1};
  std::string disc_norm = "batch";

  // Dataset generation (phantom-gen)
  std::size_t n_train = 300;
  std::size_t n_test = 20;
  std::size_t num_regions = 5;

  std::size_t condition_channels() const { return (use_t1 ? 1 : 0) + (use_t2f ? 1 : 0); }
  GeneratorConfig generator() const;
  DiscriminatorConfig discriminator() const;
  LossWeights loss_weights() const;
  Schedule schedule() const;
  /// Throws ConfigError naming the first invalid field.
  void validate() const;
};

nlohmann::json to_json(const RunConfig& c);
/// Unknown keys are rejected so that typos do not silently fall back to defaults.
RunConfig run_config_from_json(const nlohmann::json& j);
/// Applies RELADIFF_* variables from `environ` onto a JSON config object.
void apply_env_overrides(nlohmann::json& j);
/// Defaults, then the file (if non-empty path), then the environment.
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace reladiff
