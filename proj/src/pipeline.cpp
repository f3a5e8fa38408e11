#include "reladiff/pipeline.hpp"

#include <cmath>
#include <cstdio>
#include <limits>

#include "reladiff/errors.hpp"
#include "reladiff/io.hpp"
#include "reladiff/metrics.hpp"

namespace reladiff {

std::string prediction_name(const std::string& id, std::size_t tracer) {
  return id + "_" + kTracerNames.at(tracer) + ".rdvf";
}

namespace {

const std::vector<PhantomSample>& split_samples(const Dataset& data, const std::string& split) {
  if (split == "test") return data.test;
  if (split == "train") return data.train;
  throw ConfigError("split must be 'train' or 'test', got '" + split + "'");
}

std::string sample_id(const Dataset& data, const std::string& split, std::size_t i) {
  return data.manifest.at(split).at(i).at("id").get<std::string>();
}

nlohmann::json mean_std(const std::vector<double>& v) {
  if (v.empty()) return {{"mean", nullptr}, {"std", nullptr}, {"n", 0}};
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  if (std::isfinite(mean))
    for (double x : v) var += (x - mean) * (x - mean);
  // Sample standard deviation; a single volume reports 0.
  const double sd = v.size() > 1 ? std::sqrt(var / static_cast<double>(v.size() - 1)) : 0.0;
  return {{"mean", metric_number(mean)}, {"std", std::isfinite(mean) ? metric_number(sd) : nullptr}, {"n", v.size()}};
}

}  // namespace

nlohmann::json sample_split(const RunConfig& cfg, const ModelParams& generator, const Dataset& data,
                            const std::filesystem::path& out_dir, const SampleOptions& opts) {
  const auto& samples = split_samples(data, opts.split);
  if (!samples.empty() && samples.front().cond_t1.dims != cfg.dims)
    throw LoadError("dataset dims " + to_string(samples.front().cond_t1.dims) + " do not match checkpoint dims " +
                    to_string(cfg.dims));
  std::filesystem::create_directories(out_dir);
  const GeneratorConfig gcfg = cfg.generator();
  const Schedule sched = cfg.schedule();
  const std::vector<std::size_t> tracers = {0, 1, 2};

  nlohmann::json entries = nlohmann::json::array();
  const std::size_t n = opts.limit ? std::min(opts.limit, samples.size()) : samples.size();
  for (std::size_t i = 0; i < n; ++i) {
    const std::string id = sample_id(data, opts.split, i);
    const Tensor cond = condition_tensor(cfg, samples[i], tracers.size());
    const Tensor x0 = sample_batch(gcfg, generator, cond, cfg.dims, tracers, sched, mix_seed(opts.seed, i));
    for (std::size_t k : tracers) {
      Volume v = to_unit_volume(x0, k);
      v.meta = {{"id", id}, {"tracer", kTracerNames[k]}, {"seed", opts.seed}, {"split", opts.split}};
      write_volume(out_dir / prediction_name(id, k), v);
      entries.push_back({{"id", id}, {"tracer", kTracerNames[k]}, {"path", prediction_name(id, k)}});
    }
    if (opts.verbose) std::fprintf(stderr, "sampled %s (%zu/%zu)\n", id.c_str(), i + 1, n);
  }
  nlohmann::json index = {{"version", 1},   {"split", opts.split},       {"seed", opts.seed},
                          {"T", cfg.T},     {"dims", cfg.dims},          {"entries", entries}};
  io::write_file_atomic(out_dir / "index.json", index.dump(2) + "\n");
  return index;
}

nlohmann::json evaluate_predictions(const std::filesystem::path& pred_dir, const Dataset& data,
                                    const EvalOptions& opts) {
  const auto& truth = split_samples(data, opts.split);
  const RegionBaseline baseline = RegionBaseline::fit(data.train);
  std::vector<int> region_ids;
  for (int r = 1; r <= static_cast<int>(data.manifest.value("num_regions", 0)); ++r) region_ids.push_back(r);

  nlohmann::json report = {{"version", 1}, {"split", opts.split}, {"missing", nlohmann::json::array()},
                           {"warnings", nlohmann::json::array()}};
  nlohmann::json tracers = nlohmann::json::object();
  for (std::size_t k = 0; k < kNumTracers; ++k) {
    nlohmann::json per_volume = nlohmann::json::array();
    std::vector<double> psnrs, ssims, maes, base_maes;
    std::map<int, std::vector<double>> region_err;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      const std::string id = sample_id(data, opts.split, i);
      const auto path = pred_dir / prediction_name(id, k);
      if (!std::filesystem::exists(path)) {
        report["missing"].push_back(path.filename().string());
        continue;
      }
      const Volume pred = read_volume(path);
      const Volume& target = truth[i].targets.at(k);
      if (pred.dims != target.dims || pred.channels != 1)
        throw LoadError(path.string() + " has dims " + to_string(pred.dims) + ", expected " + to_string(target.dims));
      const MetricsReport m = evaluate(pred, target, truth[i].labels, region_ids);
      const double base_mae = mae(baseline.predict(truth[i].labels, k), target);
      psnrs.push_back(m.psnr);
      ssims.push_back(m.ssim);
      maes.push_back(m.mae);
      base_maes.push_back(base_mae);
      for (const auto& [r, s] : m.per_region)
        if (s.abs_err) region_err[r].push_back(*s.abs_err);
      nlohmann::json row = to_json(m);
      row["id"] = id;
      row["baseline_mae"] = base_mae;
      per_volume.push_back(row);

      if (!opts.out_dir.empty()) {
        Volume diff = pred;
        for (std::size_t j = 0; j < diff.data.size(); ++j) diff.data[j] = std::fabs(pred.data[j] - target.data[j]);
        diff.meta = {{"id", id}, {"tracer", kTracerNames[k]}, {"kind", "abs_diff"}};
        write_volume(opts.out_dir / "diff" / prediction_name(id, k), diff);
      }
    }
    nlohmann::json regions = nlohmann::json::object();
    for (const auto& [r, errs] : region_err) regions[std::to_string(r)] = mean_std(errs);
    tracers[kTracerNames[k]] = {
        {"per_volume", per_volume},
        {"summary", {{"psnr", mean_std(psnrs)}, {"ssim", mean_std(ssims)}, {"mae", mean_std(maes)}}},
        {"region_abs_err", regions},
        {"baseline", {{"mae", mean_std(base_maes)}}}};
  }
  report["tracers"] = tracers;
  if (!report["missing"].empty())
    report["warnings"].push_back(std::to_string(report["missing"].size()) +
                                 " predicted volumes are missing; the report covers the rest");
  if (!opts.out_dir.empty()) io::write_file_atomic(opts.out_dir / "report.json", report.dump(2) + "\n");
  return report;
}

}  // namespace reladiff
