#include "reladiff/nn.hpp"

#include <algorithm>
#include <cmath>

#include "reladiff/errors.hpp"
#include "reladiff/io.hpp"
#include "reladiff/rng.hpp"

namespace reladiff {

// ---- ModelParams -----------------------------------------------------------

void ModelParams::add(std::string name, Tensor value) {
  if (contains(name)) throw ContractError("duplicate parameter name " + name);
  entries_.emplace_back(std::move(name), std::move(value));
}

bool ModelParams::contains(const std::string& name) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const Entry& e) { return e.first == name; });
}

const Tensor& ModelParams::at(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.first == name) return e.second;
  throw ContractError("unknown parameter " + name);
}

TensorList ModelParams::tensors() const {
  TensorList out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.second);
  return out;
}

std::size_t ModelParams::count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.second.numel();
  return n;
}

ModelParams ModelParams::frozen() const {
  ModelParams out;
  for (const auto& [name, t] : entries_) out.entries_.emplace_back(name, t.detach());
  return out;
}

ModelParams ModelParams::clone() const {
  ModelParams out;
  for (const auto& [name, t] : entries_)
    out.entries_.emplace_back(name, Tensor::parameter(t.shape(), {t.data().begin(), t.data().end()}));
  return out;
}

namespace {

constexpr std::string_view kParamsMagic = "RDPARAMS";
constexpr std::uint32_t kParamsVersion = 1;

}  // namespace

std::string encode_params(const ModelParams& params) {
  io::ByteWriter w;
  w.bytes(kParamsMagic);
  w.u32(kParamsVersion);
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, t] : params.entries()) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.bytes(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape()) w.u32(static_cast<std::uint32_t>(e));
    for (Real v : t.data()) w.f32(static_cast<float>(v));
  }
  return w.take();
}

ModelParams decode_params(const std::string& bytes) {
  io::ByteReader r(bytes);
  if (r.bytes(kParamsMagic.size(), "magic") != kParamsMagic) throw FormatError("bad parameter-table magic", 0);
  const std::size_t version_at = r.offset();
  const auto version = r.u32("version");
  if (version != kParamsVersion)
    throw UnsupportedVersionError("unsupported parameter-table version " + std::to_string(version), version_at);
  const auto count = r.u32("entry count");
  ModelParams out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.u32("name length");
    std::string name(r.bytes(name_len, "name"));
    const std::size_t rank_at = r.offset();
    const auto rank = r.u32("rank");
    if (rank == 0 || rank > 8) throw FormatError("bad rank for " + name, rank_at);
    Shape shape(rank);
    for (auto& e : shape) e = r.u32("extent");
    const std::size_t n = numel(shape);
    if (n == 0 || n > r.remaining() / 4) throw FormatError("truncated data for " + name, r.offset());
    std::vector<Real> values(n);
    for (auto& v : values) v = r.f32("value");
    out.add(std::move(name), Tensor::parameter(std::move(shape), std::move(values)));
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after parameter table", r.offset());
  return out;
}

void save_params(const std::filesystem::path& path, const ModelParams& params) {
  io::write_file_atomic(path, encode_params(params));
}

ModelParams load_params(const std::filesystem::path& path) { return decode_params(io::read_file(path)); }

void round_to_float32(std::span<Real> values) {
  for (auto& v : values) v = static_cast<Real>(static_cast<float>(v));
}

// ---- configs ---------------------------------------------------------------

std::string to_string(DiscriminatorConfig::Norm norm) {
  return norm == DiscriminatorConfig::Norm::batch ? "batch" : "instance";
}

DiscriminatorConfig::Norm norm_from_string(const std::string& name) {
  if (name == "batch") return DiscriminatorConfig::Norm::batch;
  if (name == "instance") return DiscriminatorConfig::Norm::instance;
  throw ConfigError("norm_kind must be 'batch' or 'instance', got '" + name + "'");
}

void validate(const GeneratorConfig& cfg) {
  auto require = [](bool ok, const char* field, const char* rule) {
    if (!ok) throw ConfigError(std::string("generator.") + field + " " + rule);
  };
  require(cfg.in_channels >= cfg.out_channels && cfg.out_channels >= 1, "in_channels",
          "must be at least out_channels (>= 1)");
  require(cfg.base_width >= 1, "base_width", "must be >= 1");
  require(cfg.depth >= 1 && cfg.depth <= 6, "depth", "must be in [1, 6]");
  require(cfg.num_tracers >= 1, "num_tracers", "must be >= 1");
  require(cfg.embed_dim >= 2 && cfg.embed_dim % 2 == 0, "embed_dim", "must be even and >= 2");
  require(cfg.num_timesteps >= 1, "num_timesteps", "must be >= 1");
  require(cfg.spatial_rank == 2 || cfg.spatial_rank == 3, "spatial_rank", "must be 2 or 3");
}

void validate(const DiscriminatorConfig& cfg) {
  auto require = [](bool ok, const char* field, const char* rule) {
    if (!ok) throw ConfigError(std::string("discriminator.") + field + " " + rule);
  };
  require(cfg.in_channels >= 1, "in_channels", "must be >= 1");
  require(cfg.widths.size() == 3, "widths", "must list exactly 3 channel counts");
  require(cfg.widths.size() == 3 && cfg.widths[0] >= 1 && cfg.widths[1] >= 1, "widths", "must be positive");
  require(cfg.widths.size() == 3 && cfg.widths[2] == 1, "widths", "last entry must be 1 (patch logits)");
  require(cfg.leaky_slope >= 0.0 && cfg.leaky_slope < 1.0, "leaky_slope", "must be in [0, 1)");
  require(cfg.spatial_rank == 2 || cfg.spatial_rank == 3, "spatial_rank", "must be 2 or 3");
}

// ---- layers ----------------------------------------------------------------

namespace layers {

Shape channel_shape(std::size_t channels, std::size_t rank) {
  Shape s(rank, 1);
  s[1] = channels;
  return s;
}

Tensor conv_bias(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride, std::size_t padding) {
  Tensor y = conv(x, w, stride, padding);
  return y + reshape(b, channel_shape(b.numel(), y.rank()));
}

namespace {

Tensor normalize_groups(const Tensor& x, const Shape& stats_shape, Real eps) {
  Tensor mu = mean_to(x, stats_shape);
  Tensor d = x - mu;
  Tensor var = mean_to(square(d), stats_shape);
  return d * pow_scalar(var + eps, -0.5);
}

Tensor affine(const Tensor& x, const Tensor& gamma, const Tensor& beta) {
  const Shape cs = channel_shape(gamma.numel(), x.rank());
  return x * reshape(gamma, cs) + reshape(beta, cs);
}

}  // namespace

Tensor group_norm(const Tensor& x, std::size_t groups, const Tensor& gamma, const Tensor& beta, Real eps) {
  const std::size_t n = x.extent(0), c = x.extent(1);
  if (c % groups != 0) throw ShapeError("group_norm: " + std::to_string(c) + " channels not divisible by groups");
  Tensor g = reshape(x, {n, groups, x.numel() / (n * groups)});
  Tensor y = reshape(normalize_groups(g, {n, groups, 1}, eps), x.shape());
  return affine(y, gamma, beta);
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Real eps) {
  return affine(normalize_groups(x, channel_shape(x.extent(1), x.rank()), eps), gamma, beta);
}

Tensor instance_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Real eps) {
  Shape s(x.rank(), 1);
  s[0] = x.extent(0);
  s[1] = x.extent(1);
  return affine(normalize_groups(x, s, eps), gamma, beta);
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  return matmul(x, w) + reshape(b, {1, b.numel()});
}

}  // namespace layers

// ---- initialization --------------------------------------------------------

namespace {

using namespace layers;

class Initializer {
 public:
  Initializer(ModelParams& p, std::uint64_t seed, std::size_t rank) : p_(p), rng_(seed), rank_(rank) {}

  /// Fan-in scaled uniform weights U(-1/sqrt(fan_in), 1/sqrt(fan_in)); zero bias.
  void conv(const std::string& name, std::size_t in, std::size_t out, std::size_t k, bool zero = false) {
    Shape ks{out, in};
    for (std::size_t i = 0; i < rank_; ++i) ks.push_back(k);
    weight(name + ".w", ks, numel(ks) / out, zero);
    p_.add(name + ".b", Tensor::parameter({out}, std::vector<Real>(out, 0.0)));
  }
  void linear(const std::string& name, std::size_t in, std::size_t out, bool zero = false) {
    weight(name + ".w", {in, out}, in, zero);
    p_.add(name + ".b", Tensor::parameter({out}, std::vector<Real>(out, 0.0)));
  }
  void norm(const std::string& name, std::size_t ch) {
    p_.add(name + ".gamma", Tensor::parameter({ch}, std::vector<Real>(ch, 1.0)));
    p_.add(name + ".beta", Tensor::parameter({ch}, std::vector<Real>(ch, 0.0)));
  }
  void table(const std::string& name, std::size_t rows, std::size_t cols) {
    std::vector<Real> v(rows * cols);
    for (auto& x : v) x = static_cast<Real>(static_cast<float>(rng_.normal()));
    p_.add(name, Tensor::parameter({rows, cols}, std::move(v)));
  }

 private:
  void weight(const std::string& name, Shape shape, std::size_t fan_in, bool zero) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::vector<Real> v(numel(shape), 0.0);
    // Values are float32-representable so a checkpoint reload is exact.
    if (!zero)
      for (auto& x : v) x = static_cast<Real>(static_cast<float>(rng_.uniform(-bound, bound)));
    p_.add(name, Tensor::parameter(std::move(shape), std::move(v)));
  }

  ModelParams& p_;
  Rng rng_;
  std::size_t rank_;
};

std::vector<std::size_t> level_widths(const GeneratorConfig& cfg) {
  std::vector<std::size_t> w(cfg.depth + 1);
  for (std::size_t i = 0; i <= cfg.depth; ++i) w[i] = cfg.base_width << i;
  return w;
}

std::size_t groups_for(std::size_t channels) {
  std::size_t g = std::min<std::size_t>(8, channels);
  while (channels % g != 0) --g;
  return g;
}

void init_resblock(Initializer& init, const std::string& name, std::size_t in, std::size_t out,
                   std::size_t embed_dim) {
  init.conv(name + ".conv1", in, out, 3);
  init.norm(name + ".norm1", out);
  init.linear(name + ".emb1", embed_dim, out);
  init.conv(name + ".conv2", out, out, 3);
  init.norm(name + ".norm2", out);
  init.linear(name + ".emb2", embed_dim, out);
  if (in != out) init.conv(name + ".skip", in, out, 1);
}

}  // namespace

ModelParams build_generator(const GeneratorConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  ModelParams p;
  Initializer init(p, seed, cfg.spatial_rank);
  const auto w = level_widths(cfg);
  const std::size_t e = cfg.embed_dim;

  init.table("embed.tracer", cfg.num_tracers, e);
  init.linear("embed.mlp", e, e);
  init.conv("stem", cfg.in_channels, w[0], 3);
  for (std::size_t i = 1; i <= cfg.depth; ++i) {
    const std::string d = "down" + std::to_string(i);
    init.conv(d + ".down", w[i - 1], w[i], 3);
    init_resblock(init, d + ".res0", w[i], w[i], e);
    init_resblock(init, d + ".res1", w[i], w[i], e);
  }
  if (cfg.use_bottleneck_attention) {
    const std::size_t c = w[cfg.depth];
    init.conv("attn.q", c, c, 1);
    init.linear("attn.k", e, c);
    init.linear("attn.v", e, c);
    init.conv("attn.out", c, c, 1, /*zero=*/true);
  }
  for (std::size_t i = cfg.depth; i >= 1; --i) {
    const std::string u = "up" + std::to_string(i);
    init.conv(u + ".up", w[i], w[i - 1], 3);
    init_resblock(init, u + ".res0", 2 * w[i - 1], w[i - 1], e);
    init_resblock(init, u + ".res1", w[i - 1], w[i - 1], e);
  }
  init.norm("out.norm", w[0]);
  init.conv("out.conv", w[0], cfg.out_channels, 3, /*zero=*/true);
  return p;
}

ModelParams build_discriminator(const DiscriminatorConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  ModelParams p;
  Initializer init(p, seed, cfg.spatial_rank);
  init.conv("stage1.conv", cfg.in_channels, cfg.widths[0], 4);
  init.norm("stage1.norm", cfg.widths[0]);
  init.conv("stage2.conv", cfg.widths[0], cfg.widths[1], 4);
  init.norm("stage2.norm", cfg.widths[1]);
  init.conv("stage3.conv", cfg.widths[1], cfg.widths[2], 3);
  return p;
}

// ---- generator forward -----------------------------------------------------

std::vector<Real> timestep_embedding(double t, std::size_t dim) {
  std::vector<Real> out(dim, 0.0);
  for (std::size_t i = 0; 2 * i < dim; ++i) {
    const double w = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(dim));
    out[2 * i] = static_cast<Real>(std::sin(t * w));
    if (2 * i + 1 < dim) out[2 * i + 1] = static_cast<Real>(std::cos(t * w));
  }
  return out;
}

namespace {

std::vector<ConditionInfo> expand_info(const GeneratorConfig& cfg, const std::vector<ConditionInfo>& info,
                                       std::size_t n) {
  if (info.size() != 1 && info.size() != n)
    throw ShapeError("condition info has " + std::to_string(info.size()) + " entries for batch of " +
                     std::to_string(n));
  for (const auto& ci : info) {
    if (ci.t < 1 || ci.t > cfg.num_timesteps)
      throw ContractError("timestep " + std::to_string(ci.t) + " outside [1, " +
                          std::to_string(cfg.num_timesteps) + "]");
    if (ci.c >= cfg.num_tracers)
      throw ContractError("tracer label " + std::to_string(ci.c) + " outside [0, " +
                          std::to_string(cfg.num_tracers) + ")");
  }
  return info.size() == n ? info : std::vector<ConditionInfo>(n, info[0]);
}

struct Embeddings {
  Tensor t_sin;   // [N, E] sinusoid, constant
  Tensor c_row;   // [N, E] learned tracer row
  Tensor hidden;  // [N, E] shared projection consumed by every block
};

Embeddings compute_embeddings(const GeneratorConfig& cfg, const ModelParams& p,
                              const std::vector<ConditionInfo>& info) {
  const std::size_t n = info.size(), e = cfg.embed_dim;
  std::vector<Real> sins(n * e), onehot(n * cfg.num_tracers, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    auto s = timestep_embedding(static_cast<double>(info[i].t), e);
    std::copy(s.begin(), s.end(), sins.begin() + static_cast<std::ptrdiff_t>(i * e));
    onehot[i * cfg.num_tracers + info[i].c] = 1.0;
  }
  Embeddings out;
  out.t_sin = Tensor::constant({n, e}, std::move(sins));
  out.c_row = matmul(Tensor::constant({n, cfg.num_tracers}, std::move(onehot)), p.at("embed.tracer"));
  out.hidden = silu(linear(out.t_sin + out.c_row, p.at("embed.mlp.w"), p.at("embed.mlp.b")));
  return out;
}

class UNet {
 public:
  UNet(const ModelParams& p, const Tensor& emb, std::size_t rank) : p_(p), emb_(emb), rank_(rank) {}

  Tensor conv3(const std::string& name, const Tensor& x, std::size_t stride = 1) const {
    return conv_bias(x, p_.at(name + ".w"), p_.at(name + ".b"), stride, 1);
  }

  Tensor inject(const std::string& name, const Tensor& h) const {
    Tensor e = linear(emb_, p_.at(name + ".w"), p_.at(name + ".b"));
    return h + batch_channel(e, h);
  }

  Tensor norm(const std::string& name, const Tensor& h) const {
    return group_norm(h, groups_for(h.extent(1)), p_.at(name + ".gamma"), p_.at(name + ".beta"));
  }

  Tensor resblock(const std::string& name, const Tensor& x) const {
    Tensor h = silu(inject(name + ".emb1", norm(name + ".norm1", conv3(name + ".conv1", x))));
    h = silu(inject(name + ".emb2", norm(name + ".norm2", conv3(name + ".conv2", h))));
    Tensor skip = p_.contains(name + ".skip.w")
                      ? conv_bias(x, p_.at(name + ".skip.w"), p_.at(name + ".skip.b"), 1, 0)
                      : x;
    return h + skip;
  }

 private:
  Shape batch_channel_shape(const Tensor& h) const {
    Shape s(rank_, 1);
    s[0] = h.extent(0);
    s[1] = h.extent(1);
    return s;
  }
  Tensor batch_channel(const Tensor& e, const Tensor& h) const { return reshape(e, batch_channel_shape(h)); }

  const ModelParams& p_;
  const Tensor& emb_;
  std::size_t rank_;
};

/// Queries from bottleneck features; keys and values from two tokens, the
/// timestep sinusoid and the tracer row.
Tensor cross_attention(const ModelParams& p, const Tensor& h, const Embeddings& emb) {
  const std::size_t n = h.extent(0), c = h.extent(1), s = h.numel() / (n * c);
  Tensor q = reshape(conv_bias(h, p.at("attn.q.w"), p.at("attn.q.b"), 1, 0), {n, c, s, 1});
  auto token = [&](const std::string& which, const Tensor& tok) {
    return reshape(linear(tok, p.at("attn." + which + ".w"), p.at("attn." + which + ".b")), {n, c, 1, 1});
  };
  Tensor k = concat({token("k", emb.t_sin), token("k", emb.c_row)}, 3);
  Tensor v = concat({token("v", emb.t_sin), token("v", emb.c_row)}, 3);
  Tensor scores = sum_to(q * k, {n, 1, s, 2}) * (1.0 / std::sqrt(static_cast<double>(c)));
  // Shift by a constant row max for stability; softmax is invariant to it.
  std::vector<Real> shift(n * s);
  auto sv = scores.data();
  for (std::size_t i = 0; i < n * s; ++i) shift[i] = std::max(sv[2 * i], sv[2 * i + 1]);
  Tensor e = exp(scores - Tensor::constant({n, 1, s, 1}, std::move(shift)));
  Tensor a = e / sum_to(e, {n, 1, s, 1});
  Tensor out = reshape(sum_to(a * v, {n, c, s, 1}), h.shape());
  return h + conv_bias(out, p.at("attn.out.w"), p.at("attn.out.b"), 1, 0);
}

}  // namespace

Tensor embed_condition(const GeneratorConfig& cfg, const ModelParams& params,
                       const std::vector<ConditionInfo>& info) {
  auto full = expand_info(cfg, info, info.size());
  auto e = compute_embeddings(cfg, params, full);
  return e.t_sin + e.c_row;
}

Tensor generator_forward(const GeneratorConfig& cfg, const ModelParams& params, const Tensor& x_t,
                         const Tensor& cond, const std::vector<ConditionInfo>& info,
                         const GeneratorHooks& hooks) {
  const std::size_t rank = cfg.spatial_rank + 2;
  if (x_t.rank() != rank)
    throw ShapeError("generator expects rank-" + std::to_string(rank) + " input, got " + to_string(x_t.shape()));
  if (x_t.extent(1) != cfg.out_channels)
    throw ShapeError("x_t has " + std::to_string(x_t.extent(1)) + " channels, generator predicts " +
                     std::to_string(cfg.out_channels));
  Tensor x = x_t;
  if (cond.defined()) {
    const Shape& a = x_t.shape();
    const Shape& b = cond.shape();
    bool aligned = b.size() == a.size() && b[0] == a[0];
    for (std::size_t i = 2; aligned && i < a.size(); ++i) aligned = a[i] == b[i];
    if (!aligned) throw ShapeError("x_t " + to_string(a) + " and condition " + to_string(b) + " are not aligned");
    x = concat({x_t, cond}, 1);
  }
  if (x.extent(1) != cfg.in_channels)
    throw ShapeError("generator input has " + std::to_string(x.extent(1)) + " channels, config expects " +
                     std::to_string(cfg.in_channels));
  const std::size_t factor = std::size_t{1} << cfg.depth;
  for (std::size_t i = 2; i < rank; ++i)
    if (x.extent(i) % factor != 0)
      throw ShapeError("spatial shape " + to_string(x.shape()) + " not divisible by 2^depth = " +
                       std::to_string(factor));

  const auto full = expand_info(cfg, info, x.extent(0));
  const Embeddings emb = compute_embeddings(cfg, params, full);
  UNet net(params, emb.hidden, rank);

  Tensor h = net.conv3("stem", x);
  std::vector<Tensor> skips{h};
  for (std::size_t i = 1; i <= cfg.depth; ++i) {
    const std::string d = "down" + std::to_string(i);
    h = net.conv3(d + ".down", h, 2);
    h = net.resblock(d + ".res0", h);
    h = net.resblock(d + ".res1", h);
    if (i < cfg.depth) skips.push_back(h);
  }
  if (cfg.use_bottleneck_attention) h = cross_attention(params, h, emb);
  for (std::size_t i = cfg.depth; i >= 1; --i) {
    const std::string u = "up" + std::to_string(i);
    h = net.conv3(u + ".up", upsample2x(h));
    Tensor skip = skips[i - 1];
    if (hooks.disable_skips) skip = Tensor::zeros(skip.shape());
    h = net.resblock(u + ".res0", concat({h, skip}, 1));
    h = net.resblock(u + ".res1", h);
  }
  h = silu(net.norm("out.norm", h));
  return net.conv3("out.conv", h);
}

// ---- discriminator ---------------------------------------------------------

Tensor discriminator_forward(const DiscriminatorConfig& cfg, const ModelParams& p, const Tensor& x) {
  const std::size_t rank = cfg.spatial_rank + 2;
  if (x.rank() != rank || x.extent(1) != cfg.in_channels)
    throw ShapeError("discriminator expects [N, " + std::to_string(cfg.in_channels) + ", ...] of rank " +
                     std::to_string(rank) + ", got " + to_string(x.shape()));
  auto norm = [&](const std::string& name, const Tensor& h) {
    const Tensor& g = p.at(name + ".gamma");
    const Tensor& b = p.at(name + ".beta");
    return cfg.norm_kind == DiscriminatorConfig::Norm::batch ? batch_norm(h, g, b) : instance_norm(h, g, b);
  };
  const Real slope = static_cast<Real>(cfg.leaky_slope);
  Tensor h = conv_bias(x, p.at("stage1.conv.w"), p.at("stage1.conv.b"), 2, 1);
  h = leaky_relu(norm("stage1.norm", h), slope);
  h = conv_bias(h, p.at("stage2.conv.w"), p.at("stage2.conv.b"), 2, 1);
  h = leaky_relu(norm("stage2.norm", h), slope);
  h = conv_bias(h, p.at("stage3.conv.w"), p.at("stage3.conv.b"), 1, 1);
  const std::size_t n = h.extent(0);
  Shape per_item(rank, 1);
  per_item[0] = n;
  return reshape(mean_to(h, per_item), {n});
}

}  // namespace reladiff
