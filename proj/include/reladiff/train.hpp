#pragma once

// Adam, the per-batch training step, the epoch loop and checkpoints.
//
// Each batch runs one generator update and then one discriminator update.
// The generator objective sees the discriminator through a frozen view of its
// parameters; the discriminator objective sees a detached x0_hat. Parameters
// and Adam moments are rounded to float32 after every update, so the state in
// memory is exactly what a checkpoint stores.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "reladiff/config.hpp"
#include "reladiff/phantom.hpp"
#include "reladiff/rng.hpp"

namespace reladiff {

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::size_t step = 0;
  ModelParams m;  ///< first moments, same names and shapes as the parameters
  ModelParams v;  ///< second moments
};

AdamState make_adam_state(const ModelParams& params);
/// One bias-corrected Adam update. Parameters missing from `grads` get a zero
/// gradient.
void adam_step(ModelParams& params, const GradMap& grads, AdamState& state, double lr, const AdamOptions& opts = {});

/// Loss went non-finite; the message names the batch and the dump file.
struct TrainingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainState {
  RunConfig config;
  ModelParams generator;
  ModelParams discriminator;
  AdamState adam_g;
  AdamState adam_d;
  std::size_t epoch = 0;  ///< completed epochs
  std::size_t step = 0;   ///< completed optimizer steps
  Rng rng;
};

TrainState init_training(const RunConfig& cfg);

/// Condition and target tensors in the model's [-1, 1] range for a list of
/// (subject, tracer) pairs.
struct Batch {
  Tensor x0;    ///< [B, 1, *S]
  Tensor cond;  ///< [B, Cc, *S], undefined when both conditions are disabled
  std::vector<std::size_t> tracers;
};

/// [0, 1] storage to [-1, 1] model range: x * 2 - 1.
inline float to_model_range(float x) { return x * 2.0f - 1.0f; }

Batch make_batch(const RunConfig& cfg, const std::vector<PhantomSample>& samples,
                 const std::vector<std::pair<std::size_t, std::size_t>>& pairs);
/// Condition tensor for one sample repeated `copies` times.
Tensor condition_tensor(const RunConfig& cfg, const PhantomSample& s, std::size_t copies = 1);

struct StepResult {
  LossReport report;
  std::size_t t = 0;
  std::vector<const void*> generator_grad_handles;
  std::vector<const void*> discriminator_grad_handles;
};

/// One generator update followed by one discriminator update on `batch`, with
/// timestep t and noise eps supplied by the caller.
StepResult train_step(TrainState& state, const Batch& batch, std::size_t t, const Tensor& eps);

struct TrainOptions {
  /// Called with every log row as it is written.
  std::function<void(const nlohmann::json&)> on_log;
  /// Progress lines on stderr.
  bool verbose = false;
};

/// Runs epochs state.epoch+1 .. state.config.epochs (or until max_steps),
/// appending JSONL rows to <output_dir>/train_log.jsonl and writing
/// <output_dir>/checkpoints/epoch_NNNN after each epoch.
void train(TrainState& state, const Dataset& data, const TrainOptions& opts = {});

nlohmann::json log_row(const TrainState& state, const StepResult& r);

std::filesystem::path checkpoint_dir(const std::filesystem::path& output_dir, std::size_t epoch);
void save_checkpoint(const std::filesystem::path& dir, const TrainState& state);
/// Throws LoadError on missing or malformed files.
TrainState load_checkpoint(const std::filesystem::path& dir);

}  // namespace reladiff
