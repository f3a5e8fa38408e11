#pragma once

// Image-quality metrics on single-channel volumes in the [0, 1] range.
//
// SSIM uses a separable Gaussian window over every spatial axis and keeps
// only windows that fit entirely inside the volume (no padding). Masked SSIM
// averages that same map over windows whose center voxel carries the label.

#include <map>
#include <optional>
#include <vector>

#include "json.hpp"
#include "reladiff/volume.hpp"

namespace reladiff {

/// 10 log10(range^2 / MSE); +infinity when the inputs are identical.
double psnr(const Volume& a, const Volume& b, double data_range = 1.0);
double mae(const Volume& a, const Volume& b);

struct SsimOptions {
  std::size_t window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double data_range = 1.0;
};

double ssim(const Volume& a, const Volume& b, const SsimOptions& opts = {});

/// Per-window SSIM values plus the flat voxel index of each window's center.
struct SsimMap {
  std::vector<double> values;
  std::vector<std::size_t> centers;
};
SsimMap ssim_map(const Volume& a, const Volume& b, const SsimOptions& opts = {});

struct RegionStats {
  std::optional<double> mean_pred;
  std::optional<double> mean_true;
  std::optional<double> abs_err;
  std::optional<double> masked_ssim;
  std::size_t voxels = 0;
};

/// Keyed by region id. `region_ids` lists regions to report even when empty;
/// every id present in `labels` is reported as well. Masked SSIM is skipped
/// when the volume is smaller than the SSIM window.
std::map<int, RegionStats> region_eval(const Volume& pred, const Volume& truth, const Volume& labels,
                                       const std::vector<int>& region_ids = {}, const SsimOptions& opts = {});

struct MetricsReport {
  double psnr = 0.0;
  double ssim = 0.0;
  double mae = 0.0;
  std::map<int, RegionStats> per_region;
};

MetricsReport evaluate(const Volume& pred, const Volume& truth, const Volume& labels,
                       const std::vector<int>& region_ids = {});

/// JSON encoding: a non-finite PSNR becomes the string "inf"; absent region
/// values become null.
nlohmann::json to_json(const MetricsReport& r);
nlohmann::json to_json(const std::map<int, RegionStats>& regions);
nlohmann::json metric_number(double v);

}  // namespace reladiff
