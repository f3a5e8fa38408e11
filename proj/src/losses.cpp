#include "reladiff/losses.hpp"

#include "reladiff/errors.hpp"

namespace reladiff {

namespace {

void require_same(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(what) + ": shapes " + to_string(a.shape()) + " and " + to_string(b.shape()) +
                     " differ");
}

void require_pairs(const Tensor& d_real, const Tensor& d_fake) {
  require_same(d_real, d_fake, "adversarial loss");
  if (d_real.numel() == 0) throw ContractError("adversarial loss on an empty batch");
}

double value_or_zero(const Tensor& t) { return t.defined() ? static_cast<double>(t.item()) : 0.0; }

}  // namespace

Tensor noise_loss(const Tensor& eps, const Tensor& eps_hat) {
  require_same(eps, eps_hat, "noise_loss");
  return mean(square(eps - eps_hat));
}

Tensor image_loss(const Tensor& x0, const Tensor& x0_hat) {
  require_same(x0, x0_hat, "image_loss");
  return mean(abs(x0 - x0_hat));
}

AdvPair rel_adv_losses(const Tensor& d_real, const Tensor& d_fake) {
  require_pairs(d_real, d_fake);
  return {mean(softplus(d_real - d_fake)), mean(softplus(d_fake - d_real))};
}

AdvPair standard_adv_losses(const Tensor& d_real, const Tensor& d_fake) {
  require_pairs(d_real, d_fake);
  return {mean(softplus(-d_fake)), mean(softplus(-d_real)) + mean(softplus(d_fake))};
}

AdvPair adv_losses(const Tensor& d_real, const Tensor& d_fake, const LossWeights& w) {
  return w.use_relativistic ? rel_adv_losses(d_real, d_fake) : standard_adv_losses(d_real, d_fake);
}

CriticEval evaluate_critic(const Critic& critic, const Tensor& x_real, const Tensor& x_fake, bool with_penalty) {
  require_same(x_real, x_fake, "critic inputs");
  const std::size_t n = x_real.extent(0);
  CriticEval out;
  if (!with_penalty) {
    Tensor d = critic(concat({x_real, x_fake}, 0));
    out.d_real = slice(d, 0, 0, n);
    out.d_fake = slice(d, 0, n, n);
    return out;
  }
  if (!GradMode::enabled()) throw CapabilityError("gradient penalty needs grad mode (second-order tape)");
  // Fresh leaf so the input gradient is taken at the data points themselves.
  Tensor joined = concat({x_real.detach(), x_fake.detach()}, 0);
  Tensor x = Tensor::parameter(joined.shape(), {joined.data().begin(), joined.data().end()});
  Tensor d = critic(x);
  Tensor g = grad(sum(d), std::span<const Tensor>(&x, 1), /*retain_graph=*/true)[0];
  out.penalty = sum(square(g)) * (1.0 / static_cast<double>(n));
  out.d_real = slice(d, 0, 0, n);
  out.d_fake = slice(d, 0, n, n);
  return out;
}

Tensor gradient_penalty(const Critic& critic, const Tensor& x_real, const Tensor& x_fake) {
  return evaluate_critic(critic, x_real, x_fake, true).penalty;
}

Objectives combine(const LossParts& parts, const LossWeights& w) {
  if (w.lambda_adv < 0.0) throw ConfigError("lambda_adv must be >= 0");
  const Real lambda = static_cast<Real>(w.lambda_adv);
  Objectives out;
  auto& r = out.report;
  r.l_noise = value_or_zero(parts.l_noise);
  r.l_image = value_or_zero(parts.l_image);
  r.l_rel_g = value_or_zero(parts.l_rel_g);
  r.l_rel_d = value_or_zero(parts.l_rel_d);
  r.l_gp = w.use_gp ? value_or_zero(parts.l_gp) : 0.0;

  auto accumulate = [](Tensor& acc, const Tensor& term) { acc = acc.defined() ? acc + term : term; };
  Tensor g, d;
  if (parts.l_noise.defined()) accumulate(g, parts.l_noise);
  if (parts.l_image.defined()) accumulate(g, parts.l_image);
  if (parts.l_rel_g.defined()) accumulate(g, parts.l_rel_g * lambda);
  if (parts.l_rel_d.defined()) accumulate(d, parts.l_rel_d * lambda);
  if (w.use_gp && parts.l_gp.defined()) accumulate(d, parts.l_gp * (lambda * static_cast<Real>(w.gp_weight)));
  out.total_g = g.defined() ? g : Tensor::scalar(0.0);
  out.total_d = d.defined() ? d : Tensor::scalar(0.0);
  r.total_g = out.total_g.item();
  r.total_d = out.total_d.item();
  return out;
}

}  // namespace reladiff
