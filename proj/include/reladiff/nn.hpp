#pragma once

// Parameter tables, layer helpers, and the two networks: a conditional U-Net
// noise predictor and a PatchGAN discriminator.
//
// Spatial rank is taken from the input: [N, C, H, W] runs the 2D model and
// [N, C, D, H, W] the 3D one. Parameter shapes differ between the two, so the
// rank is part of the config.

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "reladiff/tensor.hpp"

namespace reladiff {

/// Named, ordered table of learnable tensors.
class ModelParams {
 public:
  using Entry = std::pair<std::string, Tensor>;

  void add(std::string name, Tensor value);
  bool contains(const std::string& name) const;
  const Tensor& at(const std::string& name) const;
  const std::vector<Entry>& entries() const { return entries_; }
  TensorList tensors() const;
  std::size_t size() const { return entries_.size(); }
  /// Total number of scalars.
  std::size_t count() const;
  /// Same storage, no tape nodes: forward passes through a frozen view never
  /// produce gradients for these parameters.
  ModelParams frozen() const;
  /// Deep copy with fresh leaves.
  ModelParams clone() const;

 private:
  std::vector<Entry> entries_;
};

/// Versioned binary parameter table. Values are stored as little-endian
/// float32; load returns parameters that require gradients.
std::string encode_params(const ModelParams& params);
ModelParams decode_params(const std::string& bytes);
void save_params(const std::filesystem::path& path, const ModelParams& params);
ModelParams load_params(const std::filesystem::path& path);

/// Rounds every value to the nearest float32 in place, so the in-memory
/// state equals what a checkpoint would reload.
void round_to_float32(std::span<Real> values);

struct GeneratorConfig {
  /// Noisy target channels plus condition channels.
  std::size_t in_channels = 3;
  std::size_t out_channels = 1;
  std::size_t base_width = 8;
  std::size_t depth = 3;
  std::size_t num_tracers = 3;
  std::size_t embed_dim = 32;
  bool use_bottleneck_attention = false;
  /// Valid timestep range is 1..num_timesteps.
  std::size_t num_timesteps = 200;
  std::size_t spatial_rank = 2;
};

struct DiscriminatorConfig {
  enum class Norm { batch, instance };
  std::size_t in_channels = 1;
  std::vector<std::size_t> widths = {16, 32, 1};
  double leaky_slope = 0.2;
  Norm norm_kind = Norm::batch;
  std::size_t spatial_rank = 2;
};

std::string to_string(DiscriminatorConfig::Norm norm);
DiscriminatorConfig::Norm norm_from_string(const std::string& name);

/// Timestep t (1..T) and tracer label c (0..num_tracers-1) for one batch element.
struct ConditionInfo {
  std::size_t t = 1;
  std::size_t c = 0;
};

void validate(const GeneratorConfig& cfg);
void validate(const DiscriminatorConfig& cfg);

ModelParams build_generator(const GeneratorConfig& cfg, std::uint64_t seed);
ModelParams build_discriminator(const DiscriminatorConfig& cfg, std::uint64_t seed);

/// Interleaved sinusoidal embedding: [sin(t w_0), cos(t w_0), sin(t w_1), ...]
/// with w_i = 10000^(-2i/dim). Returns shape {dim}.
std::vector<Real> timestep_embedding(double t, std::size_t dim);

/// Sinusoidal timestep embedding plus the learned tracer row, shape [N, embed_dim].
/// This is the vector that the per-block projections consume.
Tensor embed_condition(const GeneratorConfig& cfg, const ModelParams& params,
                       const std::vector<ConditionInfo>& info);

struct GeneratorHooks {
  /// Test-only ablation: replaces every skip connection with zeros.
  bool disable_skips = false;
};

/// Predicts the noise in x_t. `cond` holds the condition channels (possibly
/// none); `info` has one entry per batch element, or a single entry shared by
/// all of them. Returns a tensor shaped like x_t.
Tensor generator_forward(const GeneratorConfig& cfg, const ModelParams& params, const Tensor& x_t,
                         const Tensor& cond, const std::vector<ConditionInfo>& info,
                         const GeneratorHooks& hooks = {});

/// One realism logit per batch element, shape {N}.
Tensor discriminator_forward(const DiscriminatorConfig& cfg, const ModelParams& params, const Tensor& x);

namespace layers {

/// conv + bias broadcast over the spatial axes.
Tensor conv_bias(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride, std::size_t padding);
Tensor group_norm(const Tensor& x, std::size_t groups, const Tensor& gamma, const Tensor& beta, Real eps = 1e-5);
/// Normalizes each channel over the batch and spatial axes (batch statistics only).
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Real eps = 1e-5);
Tensor instance_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Real eps = 1e-5);
/// x [N, in] times w [in, out] plus b [out].
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);
/// Shape [1, C, 1, ...] that broadcasts a per-channel vector over rank `rank` tensors.
Shape channel_shape(std::size_t channels, std::size_t rank);

}  // namespace layers

}  // namespace reladiff
