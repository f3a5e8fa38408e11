#include "reladiff/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "reladiff/errors.hpp"
#include "reladiff/rng.hpp"

namespace reladiff::oracle {

namespace {

void require_target(const GaussianTarget& target) {
  if (!(target.sigma2 >= 0.0)) throw ContractError("Gaussian target variance must be >= 0");
}

}  // namespace

Tensor posterior_mean(const Tensor& x_t, std::size_t t, const Schedule& sched, const GaussianTarget& target) {
  require_target(target);
  const double ab = sched.alpha_bar_at(t);
  const double den = ab * target.sigma2 + (1.0 - ab);
  std::vector<Real> out(x_t.numel());
  auto x = x_t.data();
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<Real>((std::sqrt(ab) * target.sigma2 * x[i] + (1.0 - ab) * target.mu) / den);
  return Tensor::constant(x_t.shape(), std::move(out));
}

Tensor oracle_eps(const Tensor& x_t, std::size_t t, const Schedule& sched, const GaussianTarget& target) {
  require_target(target);
  const double ab = sched.alpha_bar_at(t);
  const double den = ab * target.sigma2 + (1.0 - ab);
  // (x_t - sqrt(ab) E[x0|x_t]) / sqrt(1 - ab), simplified so the sigma2 -> inf
  // limit does not cancel catastrophically.
  const double scale = std::sqrt(1.0 - ab) / den;
  std::vector<Real> out(x_t.numel());
  auto x = x_t.data();
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<Real>(scale * (x[i] - std::sqrt(ab) * target.mu));
  return Tensor::constant(x_t.shape(), std::move(out));
}

FdReport finite_diff_check(const std::function<Tensor()>& loss, std::vector<Tensor> params, const FdOptions& opts) {
  FdReport report;
  Tensor root = loss();
  if (!std::isfinite(root.item())) throw NonFiniteLossError("loss is not finite at the base point");
  const TensorList analytic = grad(root, params, false);
  const double floor = opts.atol / opts.rtol;

  auto eval = [&]() {
    const Real v = loss().item();
    if (!std::isfinite(v)) throw NonFiniteLossError("loss is not finite at a perturbed point");
    return static_cast<double>(v);
  };

  Rng rng(opts.seed);
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto values = params[p].mutable_data();
    std::vector<std::size_t> coords(values.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (coords.size() > opts.max_coords) {
      std::shuffle(coords.begin(), coords.end(), rng.engine());
      coords.resize(opts.max_coords);
      std::sort(coords.begin(), coords.end());
    }
    auto a_values = analytic[p].data();
    for (std::size_t i : coords) {
      const Real original = values[i];
      values[i] = original + opts.step;
      const double up = eval();
      values[i] = original - opts.step;
      const double down = eval();
      values[i] = original;
      // Divide by the realized step so Real rounding of x +/- h does not bias the estimate.
      const double h2 = static_cast<double>(original + opts.step) - static_cast<double>(original - opts.step);
      const double numeric = (up - down) / h2;
      const double a = a_values[i];
      const double err = std::fabs(a - numeric) / std::max({std::fabs(a), std::fabs(numeric), floor});
      ++report.checked;
      if (err > opts.rtol) ++report.failures;
      if (err >= report.max_rel_error) {
        report.max_rel_error = err;
        report.worst_param = p;
        report.worst_index = i;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace reladiff::oracle
