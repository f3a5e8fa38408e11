#pragma once

// Sampling and evaluation over a dataset split, as run by `reladiff sample`
// and `reladiff eval`.
//
// Predictions are written as <pred_dir>/<id>_<tracer>.rdvf plus index.json.
// The evaluator looks volumes up by that naming scheme, so any directory that
// follows it can be scored, including one holding copies of the truth.

#include <cstdint>
#include <filesystem>
#include <string>

#include "json.hpp"
#include "reladiff/train.hpp"

namespace reladiff {

std::string prediction_name(const std::string& id, std::size_t tracer);

struct SampleOptions {
  std::string split = "test";  ///< "test" or "train"
  std::uint64_t seed = 0;
  /// Stop after this many subjects (0 = all).
  std::size_t limit = 0;
  bool verbose = false;
};

/// Runs the sampler for every subject of the split and every tracer label.
/// Subject i uses seed mix_seed(seed, i) for a batch holding its three
/// tracers. Returns the index JSON, which is also written to the directory.
/// Throws LoadError when the dataset dims disagree with the config.
nlohmann::json sample_split(const RunConfig& cfg, const ModelParams& generator, const Dataset& data,
                            const std::filesystem::path& out_dir, const SampleOptions& opts = {});

struct EvalOptions {
  std::string split = "test";
  /// Where report.json and diff/ go; empty means no files are written.
  std::filesystem::path out_dir;
};

/// Per-tracer per-volume metrics and mean/std summaries, plus the region-mean
/// baseline fitted on the training split for comparison. Missing predictions
/// are listed under "missing" and a "warnings" entry is added; the rest is
/// still scored.
nlohmann::json evaluate_predictions(const std::filesystem::path& pred_dir, const Dataset& data,
                                    const EvalOptions& opts = {});

}  // namespace reladiff
