#include "reladiff/config.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>

#include "reladiff/errors.hpp"
#include "reladiff/io.hpp"

extern char** environ;

namespace reladiff {

GeneratorConfig RunConfig::generator() const {
  GeneratorConfig g;
  g.in_channels = 1 + condition_channels();
  g.out_channels = 1;
  g.base_width = base_width;
  g.depth = depth;
  g.num_tracers = 3;
  g.embed_dim = embed_dim;
  g.use_bottleneck_attention = use_bottleneck_attention;
  g.num_timesteps = T;
  g.spatial_rank = dims.size();
  return g;
}

DiscriminatorConfig RunConfig::discriminator() const {
  DiscriminatorConfig d;
  d.in_channels = 1;
  d.widths = disc_widths;
  d.norm_kind = norm_from_string(disc_norm);
  d.spatial_rank = dims.size();
  return d;
}

LossWeights RunConfig::loss_weights() const {
  LossWeights w;
  w.lambda_adv = lambda_adv;
  w.gp_weight = gp_weight;
  w.use_relativistic = use_relativistic;
  w.use_gp = use_gp;
  return w;
}

Schedule RunConfig::schedule() const { return make_schedule(T, beta_1, beta_T, sigma_kind); }

void RunConfig::validate() const {
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };
  require(dims.size() == 2 || dims.size() == 3, "dims must have 2 or 3 extents");
  const std::size_t factor = std::size_t{1} << depth;
  for (auto d : dims) require(d >= 16 && d % factor == 0, "dims must be >= 16 and divisible by 2^depth");
  require(T >= 1, "T must be >= 1");
  require(batch_size >= 1, "batch_size must be >= 1");
  require(lr_g > 0 && lr_d > 0, "lr_g and lr_d must be > 0");
  require(lambda_adv >= 0, "lambda_adv must be >= 0");
  require(gp_weight >= 0, "gp_weight must be >= 0");
  require(num_regions >= 2 && num_regions <= 8, "num_regions must be in [2, 8]");
  reladiff::validate(generator());
  reladiff::validate(discriminator());
  make_schedule(T, beta_1, beta_T, sigma_kind);
}

nlohmann::json to_json(const RunConfig& c) {
  return {{"dims", c.dims},
          {"T", c.T},
          {"beta_1", c.beta_1},
          {"beta_T", c.beta_T},
          {"sigma_kind", to_string(c.sigma_kind)},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"lr_g", c.lr_g},
          {"lr_d", c.lr_d},
          {"lambda_adv", c.lambda_adv},
          {"gp_weight", c.gp_weight},
          {"use_relativistic", c.use_relativistic},
          {"use_gp", c.use_gp},
          {"use_t1", c.use_t1},
          {"use_t2f", c.use_t2f},
          {"seed", c.seed},
          {"manifest", c.manifest},
          {"output_dir", c.output_dir},
          {"max_steps", c.max_steps},
          {"base_width", c.base_width},
          {"depth", c.depth},
          {"embed_dim", c.embed_dim},
          {"use_bottleneck_attention", c.use_bottleneck_attention},
          {"disc_widths", c.disc_widths},
          {"disc_norm", c.disc_norm},
          {"n_train", c.n_train},
          {"n_test", c.n_test},
          {"num_regions", c.num_regions}};
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  RunConfig c;
  const nlohmann::json defaults = to_json(c);
  for (const auto& [key, value] : j.items())
    if (!defaults.contains(key)) throw ConfigError("unknown config key '" + key + "'");
  auto get = [&](const char* key, auto& field) {
    if (!j.contains(key)) return;
    try {
      j.at(key).get_to(field);
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(std::string("config key '") + key + "' has the wrong type: " + j.at(key).dump());
    }
  };
  get("dims", c.dims);
  get("T", c.T);
  get("beta_1", c.beta_1);
  get("beta_T", c.beta_T);
  std::string sigma = to_string(c.sigma_kind);
  get("sigma_kind", sigma);
  c.sigma_kind = sigma_kind_from_string(sigma);
  get("batch_size", c.batch_size);
  get("epochs", c.epochs);
  get("lr_g", c.lr_g);
  get("lr_d", c.lr_d);
  get("lambda_adv", c.lambda_adv);
  get("gp_weight", c.gp_weight);
  get("use_relativistic", c.use_relativistic);
  get("use_gp", c.use_gp);
  get("use_t1", c.use_t1);
  get("use_t2f", c.use_t2f);
  get("seed", c.seed);
  get("manifest", c.manifest);
  get("output_dir", c.output_dir);
  get("max_steps", c.max_steps);
  get("base_width", c.base_width);
  get("depth", c.depth);
  get("embed_dim", c.embed_dim);
  get("use_bottleneck_attention", c.use_bottleneck_attention);
  get("disc_widths", c.disc_widths);
  get("disc_norm", c.disc_norm);
  get("n_train", c.n_train);
  get("n_test", c.n_test);
  get("num_regions", c.num_regions);
  return c;
}

void apply_env_overrides(nlohmann::json& j) {
  const std::string prefix = kEnvPrefix;
  for (char** e = environ; e && *e; ++e) {
    const std::string entry = *e;
    if (entry.rfind(prefix, 0) != 0) continue;
    const auto eq = entry.find('=');
    if (eq == std::string::npos) continue;
    std::string key = entry.substr(prefix.size(), eq - prefix.size());
    std::transform(key.begin(), key.end(), key.begin(), [](unsigned char ch) { return std::tolower(ch); });
    if (key == "t") key = "T";
    if (key == "beta_t") key = "beta_T";
    const std::string raw = entry.substr(eq + 1);
    nlohmann::json value;
    try {
      value = nlohmann::json::parse(raw);
    } catch (const nlohmann::json::exception&) {
      value = raw;
    }
    j[key] = value;
  }
}

RunConfig load_run_config(const std::filesystem::path& path) {
  nlohmann::json j = nlohmann::json::object();
  if (!path.empty()) {
    try {
      j = nlohmann::json::parse(io::read_file(path));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
    }
  }
  apply_env_overrides(j);
  RunConfig c = run_config_from_json(j);
  c.validate();
  return c;
}

}  // namespace reladiff
