// reladiff: phantom-gen, train, sample, eval, check.
//
// Exit codes: 0 ok, 1 usage or configuration error, 2 data error (missing or
// malformed files, non-finite loss), 3 a self-check failed.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "reladiff/checks.hpp"
#include "reladiff/errors.hpp"
#include "reladiff/pipeline.hpp"

using namespace reladiff;
namespace fs = std::filesystem;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitCheck = 3;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "JSON run config (RELADIFF_* environment variables override it)");
  app->add_option("--seed", c.seed, "seed; overrides the config value");
}

RunConfig resolve(const Common& c) {
  RunConfig cfg = load_run_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  return cfg;
}

int phantom_gen(const Common& c, const std::string& out, bool force) {
  const RunConfig cfg = resolve(c);
  DatasetSpec spec;
  spec.seed = cfg.seed;
  spec.n_train = cfg.n_train;
  spec.n_test = cfg.n_test;
  spec.dims = cfg.dims;
  spec.num_regions = cfg.num_regions;
  make_dataset(spec, out, force);
  std::printf("wrote %zu train and %zu test phantoms to %s\n", spec.n_train, spec.n_test,
              (fs::path(out) / "manifest.json").string().c_str());
  return 0;
}

int train_cmd(const Common& c, const std::string& manifest, const std::string& out, const std::string& resume) {
  RunConfig cfg = resolve(c);
  if (!manifest.empty()) cfg.manifest = manifest;
  if (!out.empty()) cfg.output_dir = out;
  TrainState state;
  if (resume.empty()) {
    state = init_training(cfg);
  } else {
    // The checkpoint fixes the model and optimizer; run length and output
    // location come from the current invocation.
    state = load_checkpoint(resume);
    state.config.epochs = cfg.epochs;
    state.config.max_steps = cfg.max_steps;
    state.config.output_dir = cfg.output_dir;
    if (!cfg.manifest.empty()) state.config.manifest = cfg.manifest;
  }
  if (state.config.manifest.empty()) throw ConfigError("no dataset manifest: set 'manifest' or pass --manifest");
  const Dataset data = load_dataset(state.config.manifest);
  fs::create_directories(state.config.output_dir);
  TrainOptions opts;
  opts.verbose = true;
  train(state, data, opts);
  std::printf("trained to epoch %zu, step %zu; checkpoints under %s\n", state.epoch, state.step,
              (fs::path(state.config.output_dir) / "checkpoints").string().c_str());
  return 0;
}

int sample_cmd(const Common& c, const std::string& checkpoint, const std::string& manifest, const std::string& out,
               const std::string& split, std::size_t limit) {
  const TrainState state = load_checkpoint(checkpoint);
  const std::string manifest_path = !manifest.empty() ? manifest : state.config.manifest;
  if (manifest_path.empty()) throw ConfigError("no dataset manifest: pass --manifest");
  const Dataset data = load_dataset(manifest_path);
  SampleOptions opts;
  opts.split = split;
  opts.seed = c.seed.value_or(0);
  opts.limit = limit;
  opts.verbose = true;
  const auto index = sample_split(state.config, state.generator, data, out, opts);
  std::printf("wrote %zu volumes and index.json to %s\n", index["entries"].size(), out.c_str());
  return 0;
}

int eval_cmd(const std::string& pred, const std::string& manifest, const std::string& out, const std::string& split) {
  const Dataset data = load_dataset(manifest);
  EvalOptions opts;
  opts.split = split;
  opts.out_dir = out.empty() ? fs::path(pred) / "eval" : fs::path(out);
  const auto report = evaluate_predictions(pred, data, opts);
  for (const auto& w : report["warnings"]) std::fprintf(stderr, "warning: %s\n", w.get<std::string>().c_str());
  for (const auto& [name, section] : report["tracers"].items()) {
    const auto& s = section["summary"];
    std::printf("%-4s psnr %s +- %s  ssim %s +- %s  mae %s +- %s  (baseline mae %s)\n", name.c_str(),
                s["psnr"]["mean"].dump().c_str(), s["psnr"]["std"].dump().c_str(), s["ssim"]["mean"].dump().c_str(),
                s["ssim"]["std"].dump().c_str(), s["mae"]["mean"].dump().c_str(), s["mae"]["std"].dump().c_str(),
                section["baseline"]["mae"]["mean"].dump().c_str());
  }
  std::printf("report: %s\n", (opts.out_dir / "report.json").string().c_str());
  return 0;
}

int check_cmd(const Common& c, const std::string& fault, const std::string& out) {
  if (!fault.empty()) testing::set_backward_fault(fault);
  const auto results = checks::run_all(c.seed.value_or(0));
  nlohmann::json j = nlohmann::json::array();
  bool all = true;
  for (const auto& r : results) {
    j.push_back(checks::to_json(r));
    all = all && r.passed;
    std::printf("%s %s\n", r.passed ? "PASS" : "FAIL", r.name.c_str());
  }
  if (!out.empty()) std::ofstream(out) << j.dump(2) << '\n';
  std::printf("%s\n", all ? "all checks passed" : "some checks failed");
  return all ? 0 : kExitCheck;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Conditional diffusion with relativistic adversarial supervision, desk scale"};
  app.require_subcommand(1);

  Common common;
  auto* gen = app.add_subcommand("phantom-gen", "generate a phantom dataset and manifest");
  add_common(gen, common);
  std::string gen_out;
  bool force = false;
  gen->add_option("--out", gen_out, "dataset directory")->required();
  gen->add_flag("--force", force, "overwrite a non-empty directory");

  auto* tr = app.add_subcommand("train", "train generator and discriminator");
  add_common(tr, common);
  std::string tr_manifest, tr_out, tr_resume;
  tr->add_option("--manifest", tr_manifest, "dataset manifest.json");
  tr->add_option("--out", tr_out, "output directory for log and checkpoints");
  tr->add_option("--resume", tr_resume, "checkpoint directory to continue from");

  auto* sa = app.add_subcommand("sample", "synthesize every tracer for a dataset split");
  add_common(sa, common);
  std::string sa_ckpt, sa_manifest, sa_out, sa_split = "test";
  std::size_t sa_limit = 0;
  sa->add_option("--checkpoint", sa_ckpt, "checkpoint directory")->required();
  sa->add_option("--manifest", sa_manifest, "dataset manifest.json (default: the one used for training)");
  sa->add_option("--out", sa_out, "prediction directory")->required();
  sa->add_option("--split", sa_split, "train or test")->check(CLI::IsMember({"train", "test"}));
  sa->add_option("--limit", sa_limit, "only the first N subjects");

  auto* ev = app.add_subcommand("eval", "score predictions against a dataset split");
  add_common(ev, common);
  std::string ev_pred, ev_manifest, ev_out, ev_split = "test";
  ev->add_option("--pred", ev_pred, "prediction directory")->required();
  ev->add_option("--manifest", ev_manifest, "dataset manifest.json")->required();
  ev->add_option("--out", ev_out, "report directory (default: <pred>/eval)");
  ev->add_option("--split", ev_split, "train or test")->check(CLI::IsMember({"train", "test"}));

  auto* ch = app.add_subcommand("check", "gradient, sampler and round-trip self-checks");
  add_common(ch, common);
  std::string fault, ch_out;
  ch->add_option("--fault", fault, "corrupt the backward rule of this op (negative control)");
  ch->add_option("--json", ch_out, "write results as JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (gen->parsed()) return phantom_gen(common, gen_out, force);
    if (tr->parsed()) return train_cmd(common, tr_manifest, tr_out, tr_resume);
    if (sa->parsed()) return sample_cmd(common, sa_ckpt, sa_manifest, sa_out, sa_split, sa_limit);
    if (ev->parsed()) return eval_cmd(ev_pred, ev_manifest, ev_out, ev_split);
    if (ch->parsed()) return check_cmd(common, fault, ch_out);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitUsage;
  } catch (const TrainingError& e) {
    std::fprintf(stderr, "training aborted: %s\n", e.what());
    return kExitData;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitData;
  }
  return kExitUsage;
}
