#pragma once

// Training losses and their combination into the generator and
// discriminator objectives.
//
// Role assignment: the discriminator minimizes softplus(D(fake) - D(real)),
// the generator minimizes softplus(D(real) - D(fake)). The caller is
// responsible for detachment: D parameters are frozen in the generator
// objective and the generated image is detached in the discriminator one.

#include <functional>

#include "reladiff/tensor.hpp"

namespace reladiff {

struct LossWeights {
  double lambda_adv = 0.1;
  /// Extra factor on the gradient penalty inside the adversarial bracket.
  double gp_weight = 1.0;
  bool use_relativistic = true;
  bool use_gp = true;
};

struct LossReport {
  double l_noise = 0.0;
  double l_image = 0.0;
  double l_rel_g = 0.0;
  double l_rel_d = 0.0;
  double l_gp = 0.0;
  double total_g = 0.0;
  double total_d = 0.0;
};

/// Mean squared error.
Tensor noise_loss(const Tensor& eps, const Tensor& eps_hat);
/// Mean absolute error.
Tensor image_loss(const Tensor& x0, const Tensor& x0_hat);

struct AdvPair {
  Tensor g;  ///< generator term
  Tensor d;  ///< discriminator term
};

/// Relativistic pair over positionally matched logits.
AdvPair rel_adv_losses(const Tensor& d_real, const Tensor& d_fake);
/// Standard non-saturating pair (the w/oRA ablation).
AdvPair standard_adv_losses(const Tensor& d_real, const Tensor& d_fake);
AdvPair adv_losses(const Tensor& d_real, const Tensor& d_fake, const LossWeights& w);

using Critic = std::function<Tensor(const Tensor& x)>;

/// Zero-centered penalty on both inputs: mean over the batch of
/// |grad_x D(x_real)|^2 + |grad_x D(x_fake)|^2, with the gradient of the summed
/// logits. The result stays on the tape, so it is differentiable with respect
/// to whatever `critic` closes over. Throws CapabilityError when grad mode is
/// off. Both batches go through `critic` in one call, so batch statistics are
/// shared between them.
Tensor gradient_penalty(const Critic& critic, const Tensor& x_real, const Tensor& x_fake);

struct CriticEval {
  Tensor d_real;   ///< logits for the real batch, shape {N}
  Tensor d_fake;   ///< logits for the fake batch, shape {N}
  Tensor penalty;  ///< undefined unless requested
};

/// One critic pass over [x_real; x_fake] that yields the logits and,
/// optionally, the penalty computed from that same pass.
CriticEval evaluate_critic(const Critic& critic, const Tensor& x_real, const Tensor& x_fake, bool with_penalty);

/// Scalar tensors that make up one step's objectives.
struct LossParts {
  Tensor l_noise, l_image, l_rel_g, l_rel_d, l_gp;
};

struct Objectives {
  Tensor total_g;
  Tensor total_d;
  LossReport report;
};

/// total_g = l_noise + l_image + lambda * l_rel_g;
/// total_d = lambda * (l_rel_d + gp_weight * l_gp).
/// Undefined parts count as zero; use_gp = false drops the penalty.
Objectives combine(const LossParts& parts, const LossWeights& w);

}  // namespace reladiff
