#include "reladiff/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>

#include "reladiff/errors.hpp"
#include "reladiff/io.hpp"

namespace reladiff {

// ---- Adam ------------------------------------------------------------------

AdamState make_adam_state(const ModelParams& params) {
  AdamState s;
  for (const auto& [name, t] : params.entries()) {
    s.m.add(name, Tensor::zeros(t.shape()));
    s.v.add(name, Tensor::zeros(t.shape()));
  }
  return s;
}

void adam_step(ModelParams& params, const GradMap& grads, AdamState& state, double lr, const AdamOptions& opts) {
  ++state.step;
  const double bc1 = 1.0 - std::pow(opts.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(opts.beta2, static_cast<double>(state.step));
  const auto& entries = params.entries();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    Tensor p = entries[i].second;
    Tensor m = state.m.entries()[i].second;
    Tensor v = state.v.entries()[i].second;
    auto pd = p.mutable_data();
    auto md = m.mutable_data();
    auto vd = v.mutable_data();
    const bool has_grad = grads.contains(p);
    std::span<const Real> g = has_grad ? grads.at(p).data() : std::span<const Real>{};
    for (std::size_t k = 0; k < pd.size(); ++k) {
      const double gk = has_grad ? g[k] : 0.0;
      md[k] = static_cast<float>(opts.beta1 * md[k] + (1.0 - opts.beta1) * gk);
      vd[k] = static_cast<float>(opts.beta2 * vd[k] + (1.0 - opts.beta2) * gk * gk);
      const double mhat = md[k] / bc1, vhat = vd[k] / bc2;
      pd[k] = static_cast<float>(pd[k] - lr * mhat / (std::sqrt(vhat) + opts.eps));
    }
  }
}

// ---- setup -----------------------------------------------------------------

TrainState init_training(const RunConfig& cfg) {
  cfg.validate();
  TrainState s;
  s.config = cfg;
  s.generator = build_generator(cfg.generator(), mix_seed(cfg.seed, 1));
  s.discriminator = build_discriminator(cfg.discriminator(), mix_seed(cfg.seed, 2));
  s.adam_g = make_adam_state(s.generator);
  s.adam_d = make_adam_state(s.discriminator);
  s.rng = Rng(mix_seed(cfg.seed, 3));
  return s;
}

namespace {

void append_channel(std::vector<Real>& out, const Volume& v) {
  for (float x : v.data) out.push_back(to_model_range(x));
}

Shape with_batch(std::size_t n, std::size_t c, const std::vector<std::size_t>& dims) {
  Shape s{n, c};
  s.insert(s.end(), dims.begin(), dims.end());
  return s;
}

}  // namespace

Tensor condition_tensor(const RunConfig& cfg, const PhantomSample& s, std::size_t copies) {
  const std::size_t cc = cfg.condition_channels();
  if (cc == 0) return {};
  std::vector<Real> values;
  for (std::size_t i = 0; i < copies; ++i) {
    if (cfg.use_t1) append_channel(values, s.cond_t1);
    if (cfg.use_t2f) append_channel(values, s.cond_t2f);
  }
  return Tensor::constant(with_batch(copies, cc, s.cond_t1.dims), std::move(values));
}

Batch make_batch(const RunConfig& cfg, const std::vector<PhantomSample>& samples,
                 const std::vector<std::pair<std::size_t, std::size_t>>& pairs) {
  Batch b;
  const auto& dims = samples.at(pairs.at(0).first).cond_t1.dims;
  std::vector<Real> x0, cond;
  for (const auto& [i, k] : pairs) {
    const auto& s = samples.at(i);
    append_channel(x0, s.targets.at(k));
    if (cfg.use_t1) append_channel(cond, s.cond_t1);
    if (cfg.use_t2f) append_channel(cond, s.cond_t2f);
    b.tracers.push_back(k);
  }
  b.x0 = Tensor::constant(with_batch(pairs.size(), 1, dims), std::move(x0));
  if (cfg.condition_channels() > 0)
    b.cond = Tensor::constant(with_batch(pairs.size(), cfg.condition_channels(), dims), std::move(cond));
  return b;
}

// ---- one step --------------------------------------------------------------

StepResult train_step(TrainState& state, const Batch& batch, std::size_t t, const Tensor& eps) {
  const RunConfig& cfg = state.config;
  const GeneratorConfig gcfg = cfg.generator();
  const DiscriminatorConfig dcfg = cfg.discriminator();
  const LossWeights weights = cfg.loss_weights();
  const Schedule sched = cfg.schedule();

  std::vector<ConditionInfo> info;
  for (auto c : batch.tracers) info.push_back({t, c});
  const Tensor x_t = q_sample(batch.x0, t, eps, sched);

  // Generator objective: D parameters frozen.
  const ModelParams d_frozen = state.discriminator.frozen();
  const Tensor eps_hat = generator_forward(gcfg, state.generator, x_t, batch.cond, info);
  const Tensor x0_hat = estimate_x0(x_t, eps_hat, t, sched);
  auto frozen_critic = [&](const Tensor& x) { return discriminator_forward(dcfg, d_frozen, x); };
  const CriticEval g_eval = evaluate_critic(frozen_critic, batch.x0, x0_hat, false);

  // Discriminator objective: x0_hat detached.
  auto critic = [&](const Tensor& x) { return discriminator_forward(dcfg, state.discriminator, x); };
  const CriticEval d_eval = evaluate_critic(critic, batch.x0, x0_hat.detach(), weights.use_gp);

  LossParts parts;
  parts.l_noise = noise_loss(eps, eps_hat);
  parts.l_image = image_loss(batch.x0, x0_hat);
  parts.l_rel_g = adv_losses(g_eval.d_real, g_eval.d_fake, weights).g;
  parts.l_rel_d = adv_losses(d_eval.d_real, d_eval.d_fake, weights).d;
  parts.l_gp = d_eval.penalty;
  const Objectives obj = combine(parts, weights);

  StepResult r;
  r.report = obj.report;
  r.t = t;
  const auto& rep = r.report;
  for (double v : {rep.l_noise, rep.l_image, rep.l_rel_g, rep.l_rel_d, rep.l_gp, rep.total_g, rep.total_d})
    if (!std::isfinite(v)) return r;  // caller aborts before touching the parameters

  const GradMap g_grads = backward(obj.total_g);
  adam_step(state.generator, g_grads, state.adam_g, cfg.lr_g);
  const GradMap d_grads = backward(obj.total_d);
  adam_step(state.discriminator, d_grads, state.adam_d, cfg.lr_d);
  r.generator_grad_handles = g_grads.handles();
  r.discriminator_grad_handles = d_grads.handles();
  ++state.step;
  return r;
}

nlohmann::json log_row(const TrainState& state, const StepResult& r) {
  const auto& p = r.report;
  return {{"epoch", state.epoch + 1}, {"step", state.step},   {"t_drawn", r.t},        {"l_noise", p.l_noise},
          {"l_image", p.l_image},     {"l_rel_g", p.l_rel_g}, {"l_rel_d", p.l_rel_d}, {"l_gp", p.l_gp},
          {"total_g", p.total_g},     {"total_d", p.total_d}};
}

// ---- epoch loop ------------------------------------------------------------

void train(TrainState& state, const Dataset& data, const TrainOptions& opts) {
  const RunConfig& cfg = state.config;
  if (data.train.empty()) throw LoadError("dataset has no training samples");
  if (data.train.front().cond_t1.dims != cfg.dims)
    throw LoadError("dataset dims " + to_string(data.train.front().cond_t1.dims) + " do not match config dims " +
                    to_string(cfg.dims));
  const std::filesystem::path out = cfg.output_dir;
  std::filesystem::create_directories(out);
  std::ofstream log(out / "train_log.jsonl", std::ios::app);
  if (!log) throw LoadError("cannot open training log under " + out.string());

  const std::size_t n_spatial = numel(cfg.dims);
  while (state.epoch < cfg.epochs) {
    const auto start = std::chrono::steady_clock::now();
    // Rebuilt every epoch so the order depends only on the RNG state, which is
    // what a checkpoint stores.
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t i = 0; i < data.train.size(); ++i)
      for (std::size_t k = 0; k < kNumTracers; ++k) pairs.emplace_back(i, k);
    std::shuffle(pairs.begin(), pairs.end(), state.rng.engine());
    for (std::size_t b = 0; b < pairs.size(); b += cfg.batch_size) {
      if (cfg.max_steps && state.step >= cfg.max_steps) break;
      const std::vector<std::pair<std::size_t, std::size_t>> chunk(
          pairs.begin() + static_cast<std::ptrdiff_t>(b),
          pairs.begin() + static_cast<std::ptrdiff_t>(std::min(b + cfg.batch_size, pairs.size())));
      const std::string rng_before = state.rng.serialize();
      const std::size_t t = state.rng.uniform_int(1, cfg.T);
      const Tensor eps = Tensor::constant(with_batch(chunk.size(), 1, cfg.dims),
                                          state.rng.normal_vector(chunk.size() * n_spatial));
      const Batch batch = make_batch(cfg, data.train, chunk);
      const StepResult r = train_step(state, batch, t, eps);
      if (r.generator_grad_handles.empty()) {
        nlohmann::json dump = {{"epoch", state.epoch + 1},
                               {"step", state.step + 1},
                               {"t_drawn", t},
                               {"rng_state_before_batch", rng_before},
                               {"pairs", chunk},
                               {"losses", log_row(state, r)}};
        const auto path = out / "nan_dump.json";
        io::write_file_atomic(path, dump.dump(2) + "\n");
        throw TrainingError("non-finite loss at epoch " + std::to_string(state.epoch + 1) + ", step " +
                            std::to_string(state.step + 1) + "; batch dump in " + path.string());
      }
      const nlohmann::json row = log_row(state, r);
      log << row.dump() << '\n';
      if (opts.on_log) opts.on_log(row);
    }
    log.flush();
    const bool stopped_early = cfg.max_steps && state.step >= cfg.max_steps &&
                               state.step < (state.epoch + 1) * ((pairs.size() + cfg.batch_size - 1) / cfg.batch_size);
    if (stopped_early) break;
    ++state.epoch;
    save_checkpoint(checkpoint_dir(out, state.epoch), state);
    if (opts.verbose) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      std::fprintf(stderr, "epoch %zu/%zu done in %.1fs (step %zu)\n", state.epoch, cfg.epochs, secs, state.step);
    }
  }
}

// ---- checkpoints -----------------------------------------------------------

namespace {

constexpr int kCheckpointVersion = 1;

void split_moments(const ModelParams& both, AdamState& s) {
  for (const auto& [name, t] : both.entries()) {
    if (name.rfind("m/", 0) == 0)
      s.m.add(name.substr(2), t.detach());
    else if (name.rfind("v/", 0) == 0)
      s.v.add(name.substr(2), t.detach());
    else
      throw LoadError("unexpected optimizer entry " + name);
  }
}

ModelParams join_moments(const AdamState& s) {
  ModelParams out;
  for (const auto& [name, t] : s.m.entries()) out.add("m/" + name, t);
  for (const auto& [name, t] : s.v.entries()) out.add("v/" + name, t);
  return out;
}

void require_same_layout(const ModelParams& a, const ModelParams& b, const std::string& what) {
  bool ok = a.size() == b.size();
  for (std::size_t i = 0; ok && i < a.size(); ++i)
    ok = a.entries()[i].first == b.entries()[i].first &&
         a.entries()[i].second.shape() == b.entries()[i].second.shape();
  if (!ok) throw LoadError(what + " does not match the architecture in the checkpoint config");
}

}  // namespace

std::filesystem::path checkpoint_dir(const std::filesystem::path& output_dir, std::size_t epoch) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "epoch_%04zu", epoch);
  return output_dir / "checkpoints" / buf;
}

void save_checkpoint(const std::filesystem::path& dir, const TrainState& state) {
  namespace fs = std::filesystem;
  fs::path tmp = dir;
  tmp += ".tmp";
  fs::remove_all(tmp);
  fs::create_directories(tmp);
  save_params(tmp / "generator.bin", state.generator);
  save_params(tmp / "discriminator.bin", state.discriminator);
  save_params(tmp / "adam_generator.bin", join_moments(state.adam_g));
  save_params(tmp / "adam_discriminator.bin", join_moments(state.adam_d));
  const nlohmann::json meta = {{"version", kCheckpointVersion},   {"config", to_json(state.config)},
                               {"epoch", state.epoch},            {"step", state.step},
                               {"adam_generator_step", state.adam_g.step},
                               {"adam_discriminator_step", state.adam_d.step},
                               {"rng", state.rng.serialize()}};
  io::write_file_atomic(tmp / "state.json", meta.dump(2) + "\n");
  fs::remove_all(dir);
  fs::rename(tmp, dir);
}

TrainState load_checkpoint(const std::filesystem::path& dir) {
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(io::read_file(dir / "state.json"));
  } catch (const nlohmann::json::exception& e) {
    throw LoadError("checkpoint state.json is malformed: " + std::string(e.what()));
  }
  if (meta.value("version", 0) != kCheckpointVersion)
    throw LoadError("unsupported checkpoint version " + meta.value("version", nlohmann::json()).dump());
  TrainState s;
  try {
    s.config = run_config_from_json(meta.at("config"));
    s.config.validate();
    s.epoch = meta.at("epoch").get<std::size_t>();
    s.step = meta.at("step").get<std::size_t>();
    s.rng = Rng::deserialize(meta.at("rng").get<std::string>());
    s.generator = load_params(dir / "generator.bin");
    s.discriminator = load_params(dir / "discriminator.bin");
    split_moments(load_params(dir / "adam_generator.bin"), s.adam_g);
    split_moments(load_params(dir / "adam_discriminator.bin"), s.adam_d);
    s.adam_g.step = meta.at("adam_generator_step").get<std::size_t>();
    s.adam_d.step = meta.at("adam_discriminator_step").get<std::size_t>();
  } catch (const FormatError& e) {
    throw LoadError("checkpoint " + dir.string() + ": " + e.what());
  } catch (const nlohmann::json::exception& e) {
    throw LoadError("checkpoint " + dir.string() + ": " + e.what());
  } catch (const ConfigError& e) {
    throw LoadError("checkpoint " + dir.string() + ": " + e.what());
  }
  require_same_layout(build_generator(s.config.generator(), 0), s.generator, "generator table");
  require_same_layout(build_discriminator(s.config.discriminator(), 0), s.discriminator, "discriminator table");
  require_same_layout(s.generator, s.adam_g.m, "generator first moments");
  require_same_layout(s.generator, s.adam_g.v, "generator second moments");
  require_same_layout(s.discriminator, s.adam_d.m, "discriminator first moments");
  require_same_layout(s.discriminator, s.adam_d.v, "discriminator second moments");
  return s;
}

}  // namespace reladiff
