#include "reladiff/metrics.hpp"

#include <cmath>
#include <limits>

#include "reladiff/errors.hpp"

namespace reladiff {

namespace {

void require_match(const Volume& a, const Volume& b, const char* what) {
  if (a.dims != b.dims || a.channels != b.channels || a.data.size() != b.data.size())
    throw ShapeError(std::string(what) + ": volume shapes " + to_string(a.dims) + "x" + std::to_string(a.channels) +
                     " and " + to_string(b.dims) + "x" + std::to_string(b.channels) + " differ");
}

/// Valid-mode correlation with a 1-D kernel along one axis of a grid.
std::vector<double> filter_axis(const std::vector<double>& in, std::vector<std::size_t>& dims, std::size_t axis,
                                const std::vector<double>& kernel) {
  const std::size_t k = kernel.size();
  std::size_t inner = 1;
  for (std::size_t a = axis + 1; a < dims.size(); ++a) inner *= dims[a];
  const std::size_t n = dims[axis], m = n - k + 1;
  const std::size_t outer = in.size() / (n * inner);
  std::vector<double> out(outer * m * inner, 0.0);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < m; ++i) {
      double* dst = &out[(o * m + i) * inner];
      for (std::size_t j = 0; j < k; ++j) {
        const double* src = &in[(o * n + i + j) * inner];
        const double w = kernel[j];
        for (std::size_t s = 0; s < inner; ++s) dst[s] += w * src[s];
      }
    }
  dims[axis] = m;
  return out;
}

std::vector<double> gaussian_filter(const std::vector<double>& in, const std::vector<std::size_t>& dims,
                                    const std::vector<double>& kernel) {
  auto d = dims;
  auto out = in;
  for (std::size_t a = 0; a < dims.size(); ++a) out = filter_axis(out, d, a, kernel);
  return out;
}

}  // namespace

double psnr(const Volume& a, const Volume& b, double data_range) {
  require_match(a, b, "psnr");
  double se = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = static_cast<double>(a.data[i]) - static_cast<double>(b.data[i]);
    se += d * d;
  }
  const double mse = se / static_cast<double>(a.data.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(data_range * data_range / mse);
}

double mae(const Volume& a, const Volume& b) {
  require_match(a, b, "mae");
  double s = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i)
    s += std::fabs(static_cast<double>(a.data[i]) - static_cast<double>(b.data[i]));
  return s / static_cast<double>(a.data.size());
}

SsimMap ssim_map(const Volume& a, const Volume& b, const SsimOptions& opts) {
  require_match(a, b, "ssim");
  if (a.channels != 1) throw ShapeError("ssim expects single-channel volumes");
  for (auto e : a.dims)
    if (e < opts.window)
      throw ContractError("ssim window " + std::to_string(opts.window) + " exceeds volume dims " + to_string(a.dims));

  std::vector<double> kernel(opts.window);
  const double c = 0.5 * static_cast<double>(opts.window - 1);
  double total = 0.0;
  for (std::size_t i = 0; i < opts.window; ++i) {
    const double d = static_cast<double>(i) - c;
    total += kernel[i] = std::exp(-0.5 * d * d / (opts.sigma * opts.sigma));
  }
  for (auto& k : kernel) k /= total;

  const std::size_t n = a.data.size();
  std::vector<double> x(a.data.begin(), a.data.end()), y(b.data.begin(), b.data.end()), xx(n), yy(n), xy(n);
  for (std::size_t i = 0; i < n; ++i) {
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const auto mx = gaussian_filter(x, a.dims, kernel), my = gaussian_filter(y, a.dims, kernel);
  const auto sxx = gaussian_filter(xx, a.dims, kernel), syy = gaussian_filter(yy, a.dims, kernel);
  const auto sxy = gaussian_filter(xy, a.dims, kernel);

  const double c1 = std::pow(opts.k1 * opts.data_range, 2), c2 = std::pow(opts.k2 * opts.data_range, 2);
  SsimMap out;
  out.values.resize(mx.size());
  out.centers.resize(mx.size());
  std::vector<std::size_t> valid(a.dims.size());
  for (std::size_t ax = 0; ax < a.dims.size(); ++ax) valid[ax] = a.dims[ax] - opts.window + 1;
  const std::size_t half = opts.window / 2;
  for (std::size_t i = 0; i < mx.size(); ++i) {
    const double vx = sxx[i] - mx[i] * mx[i], vy = syy[i] - my[i] * my[i], cov = sxy[i] - mx[i] * my[i];
    out.values[i] = ((2 * mx[i] * my[i] + c1) * (2 * cov + c2)) /
                    ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
    // Map the window index back to its center voxel.
    std::size_t rem = i, flat = 0, stride = 1;
    for (std::size_t ax = a.dims.size(); ax-- > 0;) {
      flat += (rem % valid[ax] + half) * stride;
      rem /= valid[ax];
      stride *= a.dims[ax];
    }
    out.centers[i] = flat;
  }
  return out;
}

double ssim(const Volume& a, const Volume& b, const SsimOptions& opts) {
  const auto m = ssim_map(a, b, opts);
  double s = 0.0;
  for (double v : m.values) s += v;
  return s / static_cast<double>(m.values.size());
}

std::map<int, RegionStats> region_eval(const Volume& pred, const Volume& truth, const Volume& labels,
                                       const std::vector<int>& region_ids, const SsimOptions& opts) {
  require_match(pred, truth, "region_eval");
  if (labels.dims != pred.dims || labels.data.size() != pred.voxels())
    throw ShapeError("region_eval: labels " + to_string(labels.dims) + " not aligned with images " +
                     to_string(pred.dims));
  struct Acc {
    double pred = 0, truth = 0, ssim = 0;
    std::size_t n = 0, windows = 0;
  };
  std::map<int, Acc> acc;
  for (int id : region_ids) acc[id];
  for (std::size_t i = 0; i < labels.data.size(); ++i) {
    auto& a = acc[static_cast<int>(std::lround(labels.data[i]))];
    a.pred += pred.data[i];
    a.truth += truth.data[i];
    ++a.n;
  }
  bool fits = pred.channels == 1;
  for (auto e : pred.dims) fits = fits && e >= opts.window;
  if (fits) {
    const auto m = ssim_map(pred, truth, opts);
    for (std::size_t w = 0; w < m.values.size(); ++w) {
      auto it = acc.find(static_cast<int>(std::lround(labels.data[m.centers[w]])));
      it->second.ssim += m.values[w];
      ++it->second.windows;
    }
  }
  std::map<int, RegionStats> out;
  for (const auto& [id, a] : acc) {
    RegionStats r;
    r.voxels = a.n;
    if (a.n > 0) {
      r.mean_pred = a.pred / static_cast<double>(a.n);
      r.mean_true = a.truth / static_cast<double>(a.n);
      r.abs_err = std::fabs(*r.mean_pred - *r.mean_true);
    }
    if (a.windows > 0) r.masked_ssim = a.ssim / static_cast<double>(a.windows);
    out[id] = r;
  }
  return out;
}

MetricsReport evaluate(const Volume& pred, const Volume& truth, const Volume& labels,
                       const std::vector<int>& region_ids) {
  MetricsReport r;
  r.psnr = psnr(pred, truth);
  r.ssim = ssim(pred, truth);
  r.mae = mae(pred, truth);
  r.per_region = region_eval(pred, truth, labels, region_ids);
  return r;
}

nlohmann::json metric_number(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return nullptr;
  return v;
}

nlohmann::json to_json(const std::map<int, RegionStats>& regions) {
  auto opt = [](const std::optional<double>& v) { return v ? metric_number(*v) : nlohmann::json(nullptr); };
  nlohmann::json out = nlohmann::json::object();
  for (const auto& [id, r] : regions)
    out[std::to_string(id)] = {{"mean_pred", opt(r.mean_pred)},
                               {"mean_true", opt(r.mean_true)},
                               {"abs_err", opt(r.abs_err)},
                               {"masked_ssim", opt(r.masked_ssim)},
                               {"voxels", r.voxels}};
  return out;
}

nlohmann::json to_json(const MetricsReport& r) {
  return {{"psnr", metric_number(r.psnr)},
          {"ssim", metric_number(r.ssim)},
          {"mae", metric_number(r.mae)},
          {"per_region", to_json(r.per_region)}};
}

}  // namespace reladiff
