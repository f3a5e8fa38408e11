#pragma once

// Procedural paired phantoms: two structural condition channels, one target
// per tracer, and the region label mask they are all derived from.
//
// Recipe, all draws from one generator seeded by `seed`:
//   1. centered elliptical brain mask, semi-axes U(0.35, 0.45) x extent;
//   2. K regions by quantile-thresholding a smoothed random field in the mask;
//   3. T1 = LUT A[region], T2F = LUT B[region] plus faint lesions at every
//      hotspot site, both + 2% Gaussian noise;
//   4. target for tracer k = LUT C_k[region] + 1..3 Gaussian hotspots placed in
//      region (k mod K) + 1, blurred with sigma 1 voxel inside the mask
//      (normalized convolution, so the brain outline stays sharp), + 1% noise;
//   5. every channel clamped to [0, 1].

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "reladiff/volume.hpp"

namespace reladiff {

constexpr std::size_t kNumTracers = 3;
extern const std::array<std::string, kNumTracers> kTracerNames;
constexpr std::size_t kMaxRegions = 8;

struct PhantomSample {
  Volume cond_t1;
  Volume cond_t2f;
  std::vector<Volume> targets;  ///< one per tracer
  Volume labels;                ///< 0 background, 1..K regions
  std::size_t tracer_count = kNumTracers;
  /// Fraction of voxels inside the brain mask.
  double mask_fraction = 0.0;
};

PhantomSample gen_phantom(std::uint64_t seed, const std::vector<std::size_t>& dims, std::size_t num_regions);

/// Separable Gaussian blur with edge replication over a 2D or 3D grid.
std::vector<double> gaussian_blur(const std::vector<double>& grid, const std::vector<std::size_t>& dims,
                                  double sigma);

struct DatasetSpec {
  std::uint64_t seed = 0;
  std::size_t n_train = 300;
  std::size_t n_test = 20;
  std::vector<std::size_t> dims = {32, 32};
  std::size_t num_regions = 5;
};

/// Writes every sample under `out_dir` plus `manifest.json`, and returns the
/// manifest. Refuses a non-empty `out_dir` unless `force`.
nlohmann::json make_dataset(const DatasetSpec& spec, const std::filesystem::path& out_dir, bool force = false);

struct Dataset {
  nlohmann::json manifest;
  std::vector<PhantomSample> train;
  std::vector<PhantomSample> test;
  std::vector<std::string> test_ids;
};

/// Loads a manifest and every volume it references; throws LoadError on
/// missing files or inconsistent shapes.
Dataset load_dataset(const std::filesystem::path& manifest_path);

/// Per-tracer, per-region mean target intensity fitted on training samples.
/// This is the reference baseline for held-out MAE.
struct RegionBaseline {
  std::array<std::array<double, kMaxRegions + 1>, kNumTracers> table{};
  static RegionBaseline fit(const std::vector<PhantomSample>& train);
  Volume predict(const Volume& labels, std::size_t tracer) const;
};

}  // namespace reladiff
