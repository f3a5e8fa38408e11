#include "reladiff/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "reladiff/errors.hpp"
#include "reladiff/io.hpp"
#include "reladiff/rng.hpp"

namespace reladiff {

const std::array<std::string, kNumTracers> kTracerNames = {"tau", "pbr", "pib"};

namespace {

// Region intensity tables; index 0 is background.
constexpr std::array<double, kMaxRegions + 1> kLutT1 = {0.0, 0.35, 0.80, 0.55, 0.95, 0.45, 0.70, 0.25, 0.60};
constexpr std::array<double, kMaxRegions + 1> kLutT2f = {0.0, 0.80, 0.30, 0.60, 0.20, 0.95, 0.45, 0.70, 0.55};
constexpr std::array<std::array<double, kMaxRegions + 1>, kNumTracers> kLutTracer = {{
    {0.0, 0.30, 0.55, 0.40, 0.70, 0.50, 0.35, 0.60, 0.45},
    {0.0, 0.60, 0.35, 0.65, 0.40, 0.30, 0.55, 0.45, 0.70},
    {0.0, 0.45, 0.70, 0.30, 0.55, 0.65, 0.40, 0.35, 0.50},
}};

constexpr double kCondNoise = 0.02;
constexpr double kTargetNoise = 0.01;
constexpr double kTargetBlur = 1.0;
constexpr double kHotspotAmplitude = 0.25;
constexpr double kLesionAmplitude = 0.15;
constexpr double kHotspotSigma = 1.5;
constexpr double kFieldSigmaFraction = 0.12;

struct Grid {
  std::vector<std::size_t> dims;
  std::size_t size() const { return numel(dims); }
  /// Coordinates of flat index i, padded to 3 axes (leading axis 0 in 2D).
  std::array<std::size_t, 3> coords(std::size_t i) const {
    std::array<std::size_t, 3> c{0, 0, 0};
    for (std::size_t a = dims.size(); a-- > 0;) {
      c[3 - dims.size() + a] = i % dims[a];
      i /= dims[a];
    }
    return c;
  }
  std::array<double, 3> extents() const {
    std::array<double, 3> e{1, 1, 1};
    for (std::size_t a = 0; a < dims.size(); ++a) e[3 - dims.size() + a] = static_cast<double>(dims[a]);
    return e;
  }
};

Volume make_volume(const Grid& g, const std::vector<double>& values, const std::string& kind, std::uint64_t seed,
                   bool clamp = true) {
  Volume v;
  v.dims = g.dims;
  v.channels = 1;
  v.data.resize(values.size());
  for (std::size_t i = 0; i < values.size(); ++i)
    v.data[i] = static_cast<float>(clamp ? std::clamp(values[i], 0.0, 1.0) : values[i]);
  v.meta = {{"kind", kind}, {"seed", seed}, {"value_range", clamp ? "unit" : "labels"}};
  return v;
}

void add_gaussian(std::vector<double>& field, const Grid& g, const std::array<std::size_t, 3>& centre,
                  double amplitude, double sigma) {
  for (std::size_t i = 0; i < field.size(); ++i) {
    const auto c = g.coords(i);
    double r2 = 0.0;
    for (int a = 0; a < 3; ++a) {
      const double d = static_cast<double>(c[a]) - static_cast<double>(centre[a]);
      r2 += d * d;
    }
    field[i] += amplitude * std::exp(-0.5 * r2 / (sigma * sigma));
  }
}

}  // namespace

std::vector<double> gaussian_blur(const std::vector<double>& grid, const std::vector<std::size_t>& dims,
                                  double sigma) {
  if (sigma <= 0.0) return grid;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(2 * radius + 1);
  double total = 0.0;
  for (int k = -radius; k <= radius; ++k) total += kernel[k + radius] = std::exp(-0.5 * k * k / (sigma * sigma));
  for (auto& k : kernel) k /= total;

  std::vector<double> cur = grid, next(grid.size());
  std::size_t stride = 1;
  for (std::size_t a = dims.size(); a-- > 0;) {
    const std::size_t n = dims[a];
    const std::size_t outer = grid.size() / (n * stride);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t s = 0; s < stride; ++s) {
        const std::size_t base = o * n * stride + s;
        for (std::size_t i = 0; i < n; ++i) {
          double acc = 0.0;
          for (int k = -radius; k <= radius; ++k) {
            const auto j = std::clamp<long>(static_cast<long>(i) + k, 0, static_cast<long>(n) - 1);
            acc += kernel[k + radius] * cur[base + static_cast<std::size_t>(j) * stride];
          }
          next[base + i * stride] = acc;
        }
      }
    std::swap(cur, next);
    stride *= n;
  }
  return cur;
}

PhantomSample gen_phantom(std::uint64_t seed, const std::vector<std::size_t>& dims, std::size_t num_regions) {
  if (dims.size() != 2 && dims.size() != 3) throw ConfigError("phantom dims must have 2 or 3 extents");
  for (auto d : dims)
    if (d < 16) throw ConfigError("phantom dims must each be >= 16, got " + to_string(dims));
  if (num_regions < 2 || num_regions > kMaxRegions) throw ConfigError("num_regions must be in [2, 8]");

  Rng rng(seed);
  const Grid g{dims};
  const auto ext = g.extents();
  const std::size_t n = g.size();

  // 1. elliptical mask
  std::array<double, 3> axes{};
  for (std::size_t a = 0; a < 3; ++a) axes[a] = rng.uniform(0.35, 0.45) * ext[a];
  std::vector<char> mask(n, 0);
  std::size_t inside = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = g.coords(i);
    double r = 0.0;
    for (std::size_t a = 3 - dims.size(); a < 3; ++a) {
      const double u = (static_cast<double>(c[a]) + 0.5 - 0.5 * ext[a]) / axes[a];
      r += u * u;
    }
    mask[i] = r <= 1.0;
    inside += static_cast<std::size_t>(mask[i]);
  }
  if (inside < num_regions) throw ConfigError("phantom mask too small for the requested regions");

  // 2. regions from quantiles of a smoothed random field
  std::vector<double> field(n);
  for (auto& f : field) f = rng.normal();
  const double min_extent = static_cast<double>(*std::min_element(dims.begin(), dims.end()));
  field = gaussian_blur(field, dims, kFieldSigmaFraction * min_extent);
  std::vector<double> in_values;
  for (std::size_t i = 0; i < n; ++i)
    if (mask[i]) in_values.push_back(field[i]);
  std::sort(in_values.begin(), in_values.end());
  std::vector<double> cuts;
  for (std::size_t k = 1; k < num_regions; ++k) cuts.push_back(in_values[k * in_values.size() / num_regions]);
  std::vector<std::size_t> label(n, 0);
  std::vector<std::vector<std::size_t>> members(num_regions + 1);
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    label[i] = 1 + static_cast<std::size_t>(std::upper_bound(cuts.begin(), cuts.end(), field[i]) - cuts.begin());
    members[label[i]].push_back(i);
  }

  // Hotspot sites, drawn before any noise so they do not depend on it.
  std::array<std::vector<std::array<std::size_t, 3>>, kNumTracers> sites;
  for (std::size_t k = 0; k < kNumTracers; ++k) {
    const auto& region = members[(k % num_regions) + 1];
    const std::size_t count = rng.uniform_int(1, 3);
    for (std::size_t h = 0; h < count && !region.empty(); ++h)
      sites[k].push_back(g.coords(region[rng.uniform_int(0, region.size() - 1)]));
  }

  auto noisy = [&](std::vector<double> v, double sd) {
    for (auto& x : v) x += sd * rng.normal();
    return v;
  };
  auto masked = [&](std::vector<double> v) {
    for (std::size_t i = 0; i < n; ++i)
      if (!mask[i]) v[i] = 0.0;
    return v;
  };

  // Normalized convolution: smooths across region borders but not across
  // the brain outline, so the outline stays as sharp as in the conditions.
  const std::vector<double> mask_d(mask.begin(), mask.end());
  const std::vector<double> mask_weight = gaussian_blur(mask_d, dims, kTargetBlur);
  auto blur_inside = [&](const std::vector<double>& v) {
    std::vector<double> out = gaussian_blur(masked(v), dims, kTargetBlur);
    for (std::size_t i = 0; i < n; ++i) out[i] = mask[i] ? out[i] / mask_weight[i] : 0.0;
    return out;
  };

  // 3. condition channels
  std::vector<double> t1(n), t2f(n), lesions(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    t1[i] = kLutT1[label[i]];
    t2f[i] = kLutT2f[label[i]];
  }
  for (const auto& s : sites)
    for (const auto& c : s) add_gaussian(lesions, g, c, kLesionAmplitude, kHotspotSigma);
  lesions = masked(lesions);
  for (std::size_t i = 0; i < n; ++i) t2f[i] += lesions[i];

  PhantomSample out;
  out.cond_t1 = make_volume(g, noisy(t1, kCondNoise), "t1", seed);
  out.cond_t2f = make_volume(g, noisy(t2f, kCondNoise), "t2f", seed);

  // 4. tracer targets
  for (std::size_t k = 0; k < kNumTracers; ++k) {
    std::vector<double> tgt(n), hot(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) tgt[i] = kLutTracer[k][label[i]];
    for (const auto& c : sites[k]) add_gaussian(hot, g, c, kHotspotAmplitude, kHotspotSigma);
    hot = masked(hot);
    for (std::size_t i = 0; i < n; ++i) tgt[i] += hot[i];
    tgt = noisy(blur_inside(tgt), kTargetNoise);
    out.targets.push_back(make_volume(g, tgt, "target_" + kTracerNames[k], seed));
  }

  std::vector<double> lab(label.begin(), label.end());
  out.labels = make_volume(g, lab, "labels", seed, /*clamp=*/false);
  out.labels.meta["num_regions"] = num_regions;
  out.mask_fraction = static_cast<double>(inside) / static_cast<double>(n);
  return out;
}

// ---- dataset ---------------------------------------------------------------

namespace {

const char* kFileT1 = "t1.rdvf";
const char* kFileT2f = "t2f.rdvf";
const char* kFileLabels = "labels.rdvf";

std::string target_file(std::size_t k) { return "target_" + kTracerNames[k] + ".rdvf"; }

std::string subject_id(const std::string& split, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%04zu", split.c_str(), i);
  return buf;
}

}  // namespace

nlohmann::json make_dataset(const DatasetSpec& spec, const std::filesystem::path& out_dir, bool force) {
  namespace fs = std::filesystem;
  if (spec.n_train < 1 || spec.n_test < 1) throw ConfigError("n_train and n_test must be >= 1");
  if (fs::exists(out_dir) && !fs::is_empty(out_dir)) {
    if (!force) throw ConfigError("output directory " + out_dir.string() + " is not empty (use --force)");
    fs::remove_all(out_dir);
  }
  fs::create_directories(out_dir);

  nlohmann::json manifest = {{"version", 1},
                             {"top_seed", spec.seed},
                             {"dims", spec.dims},
                             {"num_regions", spec.num_regions},
                             {"tracers", kTracerNames},
                             {"train", nlohmann::json::array()},
                             {"test", nlohmann::json::array()}};
  std::set<std::uint64_t> used;
  std::size_t index = 0;
  for (const std::string split : {"train", "test"}) {
    const std::size_t count = split == "train" ? spec.n_train : spec.n_test;
    for (std::size_t i = 0; i < count; ++i, ++index) {
      const std::uint64_t seed = mix_seed(spec.seed, index);
      if (!used.insert(seed).second) throw ConfigError("sample seed collision");
      const std::string id = subject_id(split, i);
      const fs::path dir = out_dir / split / id;
      const PhantomSample s = gen_phantom(seed, spec.dims, spec.num_regions);
      write_volume(dir / kFileT1, s.cond_t1);
      write_volume(dir / kFileT2f, s.cond_t2f);
      write_volume(dir / kFileLabels, s.labels);
      for (std::size_t k = 0; k < kNumTracers; ++k) write_volume(dir / target_file(k), s.targets[k]);
      manifest[split].push_back({{"id", id}, {"path", (fs::path(split) / id).generic_string()}, {"seed", seed}});
    }
  }
  io::write_file_atomic(out_dir / "manifest.json", manifest.dump(2) + "\n");
  return manifest;
}

Dataset load_dataset(const std::filesystem::path& manifest_path) {
  Dataset ds;
  try {
    ds.manifest = nlohmann::json::parse(io::read_file(manifest_path));
  } catch (const nlohmann::json::exception& e) {
    throw LoadError("manifest " + manifest_path.string() + " is not valid JSON: " + e.what());
  }
  const auto root = manifest_path.parent_path();
  auto load_split = [&](const char* split, std::vector<PhantomSample>& out, std::vector<std::string>* ids) {
    if (!ds.manifest.contains(split)) throw LoadError(std::string("manifest lacks '") + split + "'");
    for (const auto& entry : ds.manifest[split]) {
      const auto dir = root / entry.at("path").get<std::string>();
      PhantomSample s;
      try {
        s.cond_t1 = read_volume(dir / kFileT1);
        s.cond_t2f = read_volume(dir / kFileT2f);
        s.labels = read_volume(dir / kFileLabels);
        for (std::size_t k = 0; k < kNumTracers; ++k) s.targets.push_back(read_volume(dir / target_file(k)));
      } catch (const FormatError& e) {
        throw LoadError("bad volume under " + dir.string() + ": " + e.what());
      }
      for (const Volume* v : {&s.cond_t2f, &s.labels, &s.targets[0], &s.targets[1], &s.targets[2]})
        if (v->dims != s.cond_t1.dims) throw LoadError("volume dims disagree under " + dir.string());
      if (ids) ids->push_back(entry.value("id", entry.at("path").get<std::string>()));
      out.push_back(std::move(s));
    }
  };
  load_split("train", ds.train, nullptr);
  load_split("test", ds.test, &ds.test_ids);
  return ds;
}

RegionBaseline RegionBaseline::fit(const std::vector<PhantomSample>& train) {
  RegionBaseline b;
  for (std::size_t k = 0; k < kNumTracers; ++k) {
    std::array<double, kMaxRegions + 1> sum{}, count{};
    for (const auto& s : train) {
      for (std::size_t i = 0; i < s.labels.data.size(); ++i) {
        const auto r = static_cast<std::size_t>(s.labels.data[i]);
        if (r > kMaxRegions) continue;
        sum[r] += s.targets[k].data[i];
        count[r] += 1.0;
      }
    }
    for (std::size_t r = 0; r <= kMaxRegions; ++r) b.table[k][r] = count[r] > 0 ? sum[r] / count[r] : 0.0;
  }
  return b;
}

Volume RegionBaseline::predict(const Volume& labels, std::size_t tracer) const {
  if (tracer >= kNumTracers) throw ContractError("tracer index out of range");
  Volume v;
  v.dims = labels.dims;
  v.channels = 1;
  v.data.resize(labels.data.size());
  for (std::size_t i = 0; i < v.data.size(); ++i)
    v.data[i] = static_cast<float>(table[tracer][std::min<std::size_t>(static_cast<std::size_t>(labels.data[i]), kMaxRegions)]);
  v.meta = {{"kind", "baseline_" + kTracerNames[tracer]}, {"value_range", "unit"}};
  return v;
}

}  // namespace reladiff
