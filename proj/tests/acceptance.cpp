// Acceptance run: one PASS/FAIL line per criterion.
//
//   acceptance [--only N ...] [--work DIR] [--fresh]
//
// Criteria 7 to 9 train models and write under --work. Criterion 7 resumes
// from the newest checkpoint it finds there, and skips training when the
// final checkpoint already exists for the same configuration; --fresh wipes
// the directory first. Exit status is 0 only when every selected criterion
// passes; with --xfail, only when each fails in its documented way.

#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <string>

#include "CLI11.hpp"
#include "reladiff/checks.hpp"
#include "reladiff/errors.hpp"
#include "reladiff/io.hpp"
#include "reladiff/losses.hpp"
#include "reladiff/metrics.hpp"
#include "reladiff/pipeline.hpp"
#include "reladiff/train.hpp"

using namespace reladiff;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Verdict {
  Verdict() = default;
  Verdict(bool p, std::string d) : passed(p), detail(std::move(d)) {}
  bool passed = false;
  /// Failed, but only in the way the README documents.
  bool known_failure = false;
  std::string detail;
  std::vector<std::string> notes;  ///< extra diagnostic lines
};

// Collects named sub-checks; the verdict passes when all of them do.
struct Tally {
  bool ok = true;
  std::vector<std::string> failed;
  void expect(bool cond, const std::string& what) {
    if (!cond) {
      ok = false;
      failed.push_back(what);
    }
  }
  std::string failures() const {
    std::string s;
    for (const auto& f : failed) s += (s.empty() ? "" : "; ") + f;
    return s;
  }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double elapsed(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::vector<json> read_log(const fs::path& p) {
  std::vector<json> rows;
  std::ifstream in(p);
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) rows.push_back(json::parse(line));
  return rows;
}

std::string slurp(const fs::path& p) { return io::read_file(p); }

Dataset make_data(const RunConfig& cfg, const fs::path& dir) {
  if (!fs::exists(dir / "manifest.json")) {
    DatasetSpec spec;
    spec.seed = cfg.seed;
    spec.n_train = cfg.n_train;
    spec.n_test = cfg.n_test;
    spec.dims = cfg.dims;
    spec.num_regions = cfg.num_regions;
    make_dataset(spec, dir, true);
  }
  return load_dataset(dir / "manifest.json");
}

// ---- 1 ---------------------------------------------------------------------

Verdict algebraic_round_trip() {
  const auto start = std::chrono::steady_clock::now();
  const auto r = checks::round_trip_check(0);
  const double secs = elapsed(start);
  return {r.passed && secs < 1.0, "max abs error " + r.detail.value("max_abs_error", json()).dump() +
                                      " (tol 1e-5), " + fmt("%.3f s", secs) + " (limit 1 s)"};
}

// ---- 2 ---------------------------------------------------------------------

Verdict schedule_fidelity() {
  const auto start = std::chrono::steady_clock::now();
  Tally tally;
  const Schedule s = make_schedule(1000, 0.0005, 0.0195);
  tally.expect(s.beta_at(1) == 0.0005, "beta_1");
  tally.expect(s.beta_at(1000) == 0.0195, "beta_T");
  for (std::size_t t = 2; t <= 1000; ++t)
    if (!(s.alpha_bar_at(t) < s.alpha_bar_at(t - 1))) {
      tally.expect(false, "alpha_bar not strictly decreasing at t=" + std::to_string(t));
      break;
    }

  // Marginal of q_sample at a fixed x0 against its closed form.
  const std::size_t n = 100000;
  const double x0 = 0.7;
  double worst_z = 0;
  for (std::size_t t : {1u, 250u, 500u, 1000u}) {
    Rng rng(mix_seed(2, t));
    const Tensor x_t = q_sample(Tensor::full({n}, x0), t, Tensor::constant({n}, rng.normal_vector(n)), s);
    double m = 0, m2 = 0;
    for (Real v : x_t.data()) m += v;
    m /= n;
    for (Real v : x_t.data()) m2 += (v - m) * (v - m);
    const double sd = std::sqrt(m2 / (n - 1));
    const double want_m = std::sqrt(s.alpha_bar_at(t)) * x0, want_sd = std::sqrt(1 - s.alpha_bar_at(t));
    const double z_mean = std::fabs(m - want_m) / (want_sd / std::sqrt(double(n)));
    const double z_sd = std::fabs(sd - want_sd) / (want_sd / std::sqrt(2.0 * n));
    worst_z = std::max({worst_z, z_mean, z_sd});
    tally.expect(z_mean <= 3 && z_sd <= 3, "Monte Carlo marginal at t=" + std::to_string(t));
  }
  const double secs = elapsed(start);
  tally.expect(secs < 10, "runtime");
  return {tally.ok, "worst deviation " + fmt("%.2f", worst_z) + " SE (limit 3), " + fmt("%.2f s", secs) +
                        (tally.ok ? "" : "; failed: " + tally.failures())};
}

// ---- 3 ---------------------------------------------------------------------

std::string sampler_summary(const checks::CheckResult& r) {
  const auto& d = r.detail;
  return "mean rel err " + fmt("%.4f", d.value("mean_rel_error", 0.0)) + ", var rel err " +
         fmt("%.4f", d.value("var_rel_error", 0.0)) + ", alpha_bar_T " + fmt("%.4f", d.value("alpha_bar_T", 0.0));
}

Verdict oracle_sampler() {
  const auto start = std::chrono::steady_clock::now();
  const auto r = checks::oracle_sampler_check(50, 2000, 0);
  const double secs = elapsed(start);
  Verdict v{r.passed && secs < 60, "T=50, 2000 chains from N(0, I): " + sampler_summary(r) + " (tol 0.05), " +
                                       fmt("%.2f s", secs)};
  if (!v.passed) {
    // The shortfall is the schedule, not the sampler: with the fixed beta
    // endpoints a 50-step chain never reaches abar_T near 0.
    const auto long_chain = checks::oracle_sampler_check(1000, 2000, 0);
    const auto exact = checks::oracle_sampler_check(50, 2000, 0, 1.0, 0.25, 0.05, true);
    v.known_failure = long_chain.passed && exact.passed;
    v.notes.push_back(std::string("diagnostic: same sampler at T=1000: ") + (long_chain.passed ? "pass, " : "FAIL, ") +
                      sampler_summary(long_chain));
    v.notes.push_back(std::string("diagnostic: T=50 started from the exact q(x_T): ") +
                      (exact.passed ? "pass, " : "FAIL, ") + sampler_summary(exact));
    v.notes.push_back("diagnostic: unattainable with the fixed schedule and start; see README, 'Oracle sampler at T=50'");
  }
  return v;
}

// ---- 4 ---------------------------------------------------------------------

Verdict gradient_correctness() {
  const auto start = std::chrono::steady_clock::now();
  Tally tally;
  double worst = 0;
  std::size_t n = 0;
  for (const auto& r : checks::primitive_fd_suite(0)) {
    ++n;
    tally.expect(r.passed, r.name);
    worst = std::max(worst, r.detail.value("max_rel_error", 0.0));
  }
  const auto g = checks::generator_fd_check(0);
  tally.expect(g.passed, g.name);
  const auto gp = checks::gradient_penalty_fd_check(0);
  tally.expect(gp.passed, gp.name);
  const double secs = elapsed(start);
  tally.expect(secs < 300, "runtime");
  return {tally.ok, std::to_string(n) + " primitives (worst rel " + fmt("%.2e", worst) + ", tol 1e-3), generator " +
                        fmt("%.2e", g.detail.value("max_rel_error", 0.0)) + ", penalty " +
                        fmt("%.2e", gp.detail.value("max_rel_error", 0.0)) + " (tol 1e-2), " +
                        fmt("%.1f s", secs) + (tally.ok ? "" : "; failed: " + tally.failures())};
}

// ---- 5 ---------------------------------------------------------------------

Verdict loss_identities() {
  const auto start = std::chrono::steady_clock::now();
  Tally tally;
  const double log2 = std::log(2.0);
  const Tensor logits = Tensor::constant({3}, {0.7, -1.2, 4.0});
  const AdvPair eq = rel_adv_losses(logits, logits);
  tally.expect(std::fabs(eq.g.item() - log2) < 1e-12 && std::fabs(eq.d.item() - log2) < 1e-12,
               "equal logits give log 2");

  for (double delta : {-20.0, -1.0, -1e-3, 0.0, 1e-3, 1.0, 20.0}) {
    const AdvPair p = rel_adv_losses(Tensor::constant({1}, {delta}), Tensor::constant({1}, {0.0}));
    const double s = p.g.item() + p.d.item();
    if (delta == 0.0)
      tally.expect(std::fabs(s - 2 * log2) < 1e-15, "softplus pair at 0");
    else
      tally.expect(s > 2 * log2, "softplus pair at " + fmt("%g", delta));
  }

  Tensor w = Tensor::parameter({1, 2}, {3, 4});
  Critic linear = [w](const Tensor& x) {
    const std::size_t n = x.extent(0);
    return reshape(sum_to(mul(x, w), {n, 1}), {n});
  };
  Rng rng(5);
  const Tensor real = Tensor::constant({4, 2}, rng.normal_vector(8));
  const Tensor fake = Tensor::constant({4, 2}, rng.normal_vector(8));
  const double gp = gradient_penalty(linear, real, fake).item();
  tally.expect(gp == 50.0, "linear critic penalty " + fmt("%.17g", gp) + " != 50");
  const double secs = elapsed(start);
  tally.expect(secs < 1, "runtime");
  return {tally.ok, "log 2 pair, softplus bound, linear penalty " + fmt("%.17g", gp) + " (2|w|^2 = 50), " +
                        fmt("%.3f s", secs) + (tally.ok ? "" : "; failed: " + tally.failures())};
}

// ---- 6 ---------------------------------------------------------------------

Verdict metric_oracles() {
  const auto start = std::chrono::steady_clock::now();
  Tally tally;
  Volume a;
  a.dims = {64, 64};
  a.data.resize(a.voxels());
  Rng rng(6);
  // Volumes hold float32, so a + 0.01 is rounded per voxel. Keeping a in
  // [0, 0.005] puts a + 0.01 where half an ulp is under 5e-10, which bounds
  // the PSNR error by 8e-7 dB even if every rounding goes the same way.
  for (auto& x : a.data) x = static_cast<float>(rng.uniform(0.0, 0.005));
  Volume b = a;
  for (auto& x : b.data) x = static_cast<float>(double(x) + 0.01);
  const double p = psnr(a, b);
  tally.expect(std::fabs(p - 40.0) <= 1e-6, "psnr " + fmt("%.9f", p));
  tally.expect(std::fabs(ssim(a, a) - 1.0) < 1e-12, "ssim(a, a)");
  Volume c = a;
  for (auto& x : c.data) x = static_cast<float>(double(x) + 0.05);
  const double m = mae(a, c);
  tally.expect(std::fabs(m - 0.05) < 1e-7, "mae " + fmt("%.9f", m));

  Volume truth = a, labels = a;
  for (auto& x : truth.data) x = static_cast<float>(rng.uniform(0.0, 1.0));
  std::fill(labels.data.begin(), labels.data.end(), 1.0f);
  const auto regions = region_eval(a, truth, labels);
  double mp = 0, mt = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    mp += a.data[i];
    mt += truth.data[i];
  }
  mp /= a.data.size();
  mt /= a.data.size();
  tally.expect(regions.size() == 1 && *regions.at(1).mean_pred == mp && *regions.at(1).mean_true == mt,
               "whole-image region means");
  const double secs = elapsed(start);
  tally.expect(secs < 10, "runtime");
  return {tally.ok, "psnr " + fmt("%.9f", p) + " dB (40 +- 1e-6), mae " + fmt("%.9f", m) +
                        " (0.05), region means exact, " + fmt("%.2f s", secs) +
                        (tally.ok ? "" : "; failed: " + tally.failures())};
}

// ---- 7 ---------------------------------------------------------------------

// Config equality ignoring where things are written.
json comparable(RunConfig c) {
  c.output_dir.clear();
  c.manifest.clear();
  c.max_steps = 0;
  return to_json(c);
}

// Held-out MAE per tracer when every chain starts from the exact q(x_T | x0)
// instead of N(0, I). Separates the start-distribution error from the rest.
std::array<double, kNumTracers> exact_start_mae(const TrainState& st, const Dataset& data) {
  const RunConfig& cfg = st.config;
  const GeneratorConfig g = cfg.generator();
  const Schedule sched = cfg.schedule();
  std::array<double, kNumTracers> total{};
  for (std::size_t i = 0; i < data.test.size(); ++i) {
    const Batch b = make_batch(cfg, data.test, {{i, 0}, {i, 1}, {i, 2}});
    Rng rng(mix_seed(cfg.seed, i));
    const Tensor x_T = q_sample(b.x0, cfg.T, Tensor::constant(b.x0.shape(), rng.normal_vector(b.x0.numel())), sched);
    auto predict = [&](const Tensor& x_t, std::size_t t) {
      return generator_forward(g, st.generator, x_t, b.cond, {{t, 0}, {t, 1}, {t, 2}});
    };
    const Tensor x0 = run_sampler_from(predict, x_T, sched, rng);
    for (std::size_t k = 0; k < kNumTracers; ++k) total[k] += mae(to_unit_volume(x0, k), data.test[i].targets[k]);
  }
  for (auto& t : total) t /= double(data.test.size());
  return total;
}

fs::path latest_checkpoint(const fs::path& out, std::size_t epochs) {
  for (std::size_t e = epochs; e >= 1; --e)
    if (fs::exists(checkpoint_dir(out, e) / "state.json")) return checkpoint_dir(out, e);
  return {};
}

Verdict training_study(const fs::path& work) {
  const auto start = std::chrono::steady_clock::now();
  RunConfig cfg;  // the desk-scale defaults
  const fs::path root = work / "study";
  const Dataset data = make_data(cfg, root / "data");
  cfg.manifest = (root / "data" / "manifest.json").string();
  cfg.output_dir = (root / "run").string();
  const fs::path out = cfg.output_dir;
  const std::size_t steps_per_epoch = (data.train.size() * kNumTracers + cfg.batch_size - 1) / cfg.batch_size;

  Verdict v;
  TrainState state;
  const fs::path resume = latest_checkpoint(out, cfg.epochs);
  if (!resume.empty()) {
    state = load_checkpoint(resume);
    if (comparable(state.config) != comparable(cfg))
      throw ConfigError("checkpoint under " + out.string() + " has a different config; rerun with --fresh");
    state.config.output_dir = cfg.output_dir;
    state.config.manifest = cfg.manifest;
    // Rows past the checkpoint belong to an interrupted epoch; drop them.
    std::vector<json> rows = read_log(out / "train_log.jsonl");
    if (rows.size() > state.step) {
      rows.resize(state.step);
      std::string text;
      for (const auto& r : rows) text += r.dump() + "\n";
      io::write_file_atomic(out / "train_log.jsonl", text);
    }
    v.notes.push_back("note: continued from " + resume.string());
  } else {
    fs::remove_all(out);
    state = init_training(cfg);
  }
  bool nan_abort = false;
  std::string abort_msg;
  try {
    TrainOptions opts;
    opts.verbose = true;
    train(state, data, opts);
  } catch (const TrainingError& e) {
    nan_abort = true;
    abort_msg = e.what();
  }
  const double train_secs = elapsed(start);

  Tally tally;
  const std::vector<json> rows = read_log(out / "train_log.jsonl");
  bool finite = !nan_abort;
  for (const auto& r : rows)
    for (const char* k : {"l_noise", "l_image", "l_rel_g", "l_rel_d", "l_gp", "total_g", "total_d"})
      finite = finite && r[k].is_number() && std::isfinite(r[k].get<double>());
  const bool a_ok = finite && rows.size() == cfg.epochs * steps_per_epoch;
  tally.expect(a_ok, "(a) " + (nan_abort ? abort_msg : std::to_string(rows.size()) + " finite rows"));

  // (b) running mean over 10 steps, at the start and at step 200.
  double first = 0, last = 0, drop = 0;
  if (rows.size() >= 200) {
    for (std::size_t i = 0; i < 10; ++i) first += rows[i]["l_noise"].get<double>() / 10;
    for (std::size_t i = 190; i < 200; ++i) last += rows[i]["l_noise"].get<double>() / 10;
    drop = 1 - last / first;
  }
  const bool b_ok = drop >= 0.20;
  tally.expect(b_ok, "(b) noise loss drop " + fmt("%.3f", drop));

  // (c) held-out MAE against the region-mean baseline.
  std::string c_detail;
  bool c_ok = false;
  if (!nan_abort) {
    c_ok = true;
    const fs::path ckpt = checkpoint_dir(out, cfg.epochs);
    const TrainState final_state = load_checkpoint(ckpt);
    const fs::path pred = root / "pred";
    fs::remove_all(pred);
    SampleOptions so;
    so.seed = cfg.seed;
    sample_split(final_state.config, final_state.generator, data, pred, so);
    EvalOptions eo;
    eo.out_dir = root / "eval";
    const json report = evaluate_predictions(pred, data, eo);
    for (const std::string& name : kTracerNames) {
      const auto& tr = report["tracers"][name];
      const double model = tr["summary"]["mae"]["mean"].get<double>();
      const double base = tr["baseline"]["mae"]["mean"].get<double>();
      const double gain = 1 - model / base;
      c_detail += (c_detail.empty() ? "" : ", ") + name + " " + fmt("%.4f", model) + " vs " +
                  fmt("%.4f", base) + " (" + fmt("%+.1f%%", 100 * gain) + ")";
      c_ok = c_ok && gain >= 0.10;
      tally.expect(gain >= 0.10, "(c) " + name);
    }
    if (!c_ok) {
      const auto exact = exact_start_mae(final_state, data);
      std::string line = "diagnostic: MAE with chains started from the exact q(x_T):";
      for (std::size_t k = 0; k < kNumTracers; ++k) line += " " + kTracerNames[k] + " " + fmt("%.4f", exact[k]);
      v.notes.push_back(line);
      v.notes.push_back("diagnostic: see README, 'Desk-scale study'");
    }
  }
  v.known_failure = a_ok && b_ok && !c_ok;
  const double secs = elapsed(start);
  v.passed = tally.ok;
  v.detail = "(a) " + std::to_string(rows.size()) + " rows, " + (finite ? "all finite" : "non-finite") +
             "; (b) noise loss " + fmt("%.4f", first) + " -> " + fmt("%.4f", last) + " (" + fmt("%.1f%%", 100 * drop) +
             " drop, need 20%); (c) MAE " + c_detail + " (need +10%); " + fmt("%.0f s", secs) +
             (tally.ok ? "" : "; failed: " + tally.failures());
  v.notes.push_back("note: training " + fmt("%.0f s", train_secs) + " this invocation (45 min target is for 4 cores)");
  return v;
}

// ---- 8 ---------------------------------------------------------------------

Verdict ablation_wiring(const fs::path& work) {
  const auto start = std::chrono::steady_clock::now();
  const fs::path root = work / "ablation";
  fs::remove_all(root);
  // Five epochs each on a reduced training split; the study checks wiring,
  // not quality.
  RunConfig base;
  base.epochs = 5;
  base.n_train = 40;
  base.n_test = 4;
  const Dataset data = make_data(base, root / "data");

  struct Variant {
    std::string name;
    std::function<void(RunConfig&)> apply;
  };
  const std::vector<Variant> variants = {
      {"w/oRA", [](RunConfig& c) { c.use_relativistic = false; }},
      {"w/oGP", [](RunConfig& c) { c.use_gp = false; }},
      {"w/oT1w", [](RunConfig& c) { c.use_t1 = false; }},
      {"w/oT2F", [](RunConfig& c) { c.use_t2f = false; }},
  };
  Tally tally;
  std::vector<std::vector<double>> columns;
  std::string summary;
  for (std::size_t i = 0; i < variants.size(); ++i) {
    RunConfig c = base;
    variants[i].apply(c);
    c.output_dir = (root / ("variant" + std::to_string(i))).string();
    const std::string& name = variants[i].name;
    try {
      TrainState s = init_training(c);
      train(s, data);
    } catch (const std::exception& e) {
      tally.expect(false, name + ": " + e.what());
      continue;
    }
    const auto rows = read_log(fs::path(c.output_dir) / "train_log.jsonl");
    tally.expect(rows.size() == 5 * (data.train.size() * kNumTracers / c.batch_size), name + " row count");
    std::vector<double> col;
    bool finite = true, gp_zero = true;
    for (const auto& r : rows) {
      col.push_back(r["total_g"].get<double>());
      for (const char* k : {"l_noise", "l_image", "l_rel_g", "l_rel_d", "l_gp", "total_g", "total_d"})
        finite = finite && std::isfinite(r[k].get<double>());
      gp_zero = gp_zero && r["l_gp"].get<double>() == 0.0;
    }
    columns.push_back(col);
    tally.expect(finite, name + " finite");
    tally.expect(gp_zero == !c.use_gp, name + (c.use_gp ? " l_gp nonzero" : " l_gp identically 0"));
    const std::size_t in_ch = c.generator().in_channels;
    tally.expect(in_ch == (c.use_t1 && c.use_t2f ? 3u : 2u), name + " input channels");
    summary += (summary.empty() ? "" : ", ") + name + " in_ch " + std::to_string(in_ch) +
               (gp_zero ? " l_gp=0" : "");
  }
  for (std::size_t i = 0; i < columns.size(); ++i)
    for (std::size_t j = i + 1; j < columns.size(); ++j)
      tally.expect(columns[i] != columns[j], "loss columns of variants " + std::to_string(i) + " and " +
                                                 std::to_string(j) + " coincide");
  const double secs = elapsed(start);
  return {tally.ok, summary + "; loss columns pairwise distinct; " + fmt("%.0f s", secs) +
                        (tally.ok ? "" : "; failed: " + tally.failures())};
}

// ---- 9 ---------------------------------------------------------------------

RunConfig small_config(const fs::path& out) {
  RunConfig c;
  c.epochs = 2;
  c.n_train = 6;
  c.n_test = 2;
  c.base_width = 8;
  c.output_dir = out.string();
  return c;
}

std::map<std::string, std::string> snapshot(const fs::path& out) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(out))
    if (e.is_regular_file()) files[fs::relative(e.path(), out).string()] = slurp(e.path());
  return files;
}

Verdict determinism(const fs::path& work) {
  const auto start = std::chrono::steady_clock::now();
  const fs::path root = work / "determinism";
  fs::remove_all(root);
  const fs::path out = root / "run";
  const Dataset data = make_data(small_config(out), root / "data");
  Tally tally;

  // Same output path for every run so state.json compares byte for byte.
  auto run_fresh = [&] {
    fs::remove_all(out);
    TrainState s = init_training(small_config(out));
    train(s, data);
    return snapshot(out);
  };
  const auto a = run_fresh();
  const auto b = run_fresh();
  tally.expect(a == b, "repeat run differs");

  fs::remove_all(out);
  RunConfig one = small_config(out);
  one.epochs = 1;
  TrainState s = init_training(one);
  train(s, data);
  TrainState resumed = load_checkpoint(checkpoint_dir(out, 1));
  resumed.config.epochs = 2;
  train(resumed, data);
  // The first run was launched for one epoch, and the run length is part of
  // the stored config; everything else must match byte for byte.
  auto without_run_length = [](std::map<std::string, std::string> files) {
    for (auto& [name, bytes] : files)
      if (fs::path(name).filename() == "state.json") {
        json j = json::parse(bytes);
        j["config"].erase("epochs");
        j["config"].erase("max_steps");
        bytes = j.dump();
      }
    return files;
  };
  const auto c = snapshot(out);
  tally.expect(without_run_length(c) == without_run_length(a), "resumed run differs");

  const auto persist = checks::persistence_round_trip_check(0);
  tally.expect(persist.passed, "persistence round trip");
  bool rdvf = true;
  for (const auto& sample : data.test)
    for (const Volume* vol : {&sample.cond_t1, &sample.cond_t2f, &sample.labels, &sample.targets[2]}) {
      const std::string bytes = encode_volume(*vol);
      rdvf = rdvf && encode_volume(decode_volume(bytes)) == bytes && decode_volume(bytes).data == vol->data;
    }
  tally.expect(rdvf, "RDVF round trip");
  const double secs = elapsed(start);
  return {tally.ok, std::to_string(a.size()) + " files identical across repeat and resumed runs, RDVF bit-exact, " +
                        fmt("%.0f s", secs) + (tally.ok ? "" : "; failed: " + tally.failures())};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"reladiff acceptance criteria"};
  std::vector<int> only;
  std::string work = "acceptance_work";
  bool fresh = false;
  bool xfail = false;
  app.add_option("--only", only, "run only these criteria (1-9)")->check(CLI::Range(1, 9));
  app.add_option("--work", work, "scratch directory for training runs");
  app.add_flag("--fresh", fresh, "delete the scratch directory first");
  app.add_flag("--xfail", xfail,
               "succeed only if every selected criterion fails in its documented way (for ctest)");
  CLI11_PARSE(app, argc, argv);
  if (fresh) fs::remove_all(work);
  fs::create_directories(work);

  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
      {"algebraic round-trip", algebraic_round_trip},
      {"schedule fidelity", schedule_fidelity},
      {"oracle sampler", oracle_sampler},
      {"gradient correctness", gradient_correctness},
      {"loss identities", loss_identities},
      {"metric oracles", metric_oracles},
      {"desk-scale training study", [&] { return training_study(work); }},
      {"ablation wiring", [&] { return ablation_wiring(work); }},
      {"determinism and persistence", [&] { return determinism(work); }},
  };
  const std::set<int> selected(only.begin(), only.end());
  bool all = true, all_known = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = int(i) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    all = all && v.passed;
    all_known = all_known && !v.passed && v.known_failure;
    std::printf("%s %d %s: %s\n", v.passed ? "PASS" : "FAIL", id, criteria[i].first.c_str(), v.detail.c_str());
    for (const auto& n : v.notes) std::printf("       %s\n", n.c_str());
    if (xfail && v.passed) std::printf("       XPASS: expected to fail; update the README and the test registration\n");
    if (xfail && !v.passed && !v.known_failure) std::printf("       failure is not the documented one\n");
    std::fflush(stdout);
  }
  if (xfail) return all_known ? 0 : 1;
  return all ? 0 : 1;
}
