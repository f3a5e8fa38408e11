// Cross-correlation over 2 or 3 spatial axes as im2col followed by a GEMM.
//
// 2D inputs run through the 3D loops with a unit depth axis (depth stride 1,
// depth padding 0), so both cases share one code path.

#include <algorithm>
#include <vector>

#include <Eigen/Core>

#include "reladiff/errors.hpp"
#include "reladiff/tensor.hpp"

namespace reladiff {

namespace {

struct ConvGeometry {
  std::size_t n, c, f;
  std::size_t d, h, w;     // input spatial
  std::size_t kd, kh, kw;  // kernel spatial
  std::size_t od, oh, ow;  // output spatial
  std::size_t sd, sh, sw;
  std::size_t pd, ph, pw;

  std::size_t in_plane() const { return d * h * w; }
  std::size_t out_plane() const { return od * oh * ow; }
  std::size_t k_volume() const { return kd * kh * kw; }
};

std::size_t out_extent(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
  return (in + 2 * pad - k) / stride + 1;
}

ConvGeometry geometry(const Shape& input, const Shape& kernel, std::size_t stride, std::size_t padding) {
  if (input.size() != kernel.size() || (input.size() != 4 && input.size() != 5))
    throw ShapeError("conv expects [N,C,*S] input and [F,C,*K] kernel with 2 or 3 spatial axes, got " +
                     to_string(input) + " and " + to_string(kernel));
  if (input[1] != kernel[1])
    throw ShapeError("conv channel mismatch: input " + to_string(input) + " vs kernel " + to_string(kernel));
  if (stride < 1) throw ContractError("conv stride must be >= 1");
  const bool is3d = input.size() == 5;
  ConvGeometry g{};
  g.n = input[0];
  g.c = input[1];
  g.f = kernel[0];
  g.d = is3d ? input[2] : 1;
  g.h = input[input.size() - 2];
  g.w = input[input.size() - 1];
  g.kd = is3d ? kernel[2] : 1;
  g.kh = kernel[kernel.size() - 2];
  g.kw = kernel[kernel.size() - 1];
  g.sd = is3d ? stride : 1;
  g.sh = g.sw = stride;
  g.pd = is3d ? padding : 0;
  g.ph = g.pw = padding;
  if (g.kd > g.d + 2 * g.pd || g.kh > g.h + 2 * g.ph || g.kw > g.w + 2 * g.pw)
    throw ShapeError("conv kernel " + to_string(kernel) + " larger than padded input " + to_string(input));
  g.od = out_extent(g.d, g.kd, g.sd, g.pd);
  g.oh = out_extent(g.h, g.kh, g.sh, g.ph);
  g.ow = out_extent(g.w, g.kw, g.sw, g.pw);
  return g;
}

Shape output_shape(const ConvGeometry& g, bool is3d) {
  if (is3d) return {g.n, g.f, g.od, g.oh, g.ow};
  return {g.n, g.f, g.oh, g.ow};
}

// Valid output range [lo, hi) along one axis for kernel tap `k`.
std::pair<std::size_t, std::size_t> tap_range(std::size_t k, std::size_t in, std::size_t out, std::size_t stride,
                                              std::size_t pad) {
  // o * stride + k - pad in [0, in)
  std::size_t lo = 0;
  if (pad > k) lo = (pad - k + stride - 1) / stride;
  if (in + pad <= k) return {0, 0};
  std::size_t hi = (in + pad - k - 1) / stride + 1;
  hi = std::min(hi, out);
  return {std::min(lo, hi), hi};
}

// Calls body(out_row_offset, in_row_offset, ow_lo, ow_hi) for every output
// row touched by kernel tap (kd, kh, kw); offsets are within one plane.
template <class Body>
void for_each_tap_row(const ConvGeometry& g, std::size_t kd, std::size_t kh, std::size_t kw, Body&& body) {
  const auto [d_lo, d_hi] = tap_range(kd, g.d, g.od, g.sd, g.pd);
  const auto [h_lo, h_hi] = tap_range(kh, g.h, g.oh, g.sh, g.ph);
  const auto [w_lo, w_hi] = tap_range(kw, g.w, g.ow, g.sw, g.pw);
  if (w_lo >= w_hi) return;
  for (std::size_t od = d_lo; od < d_hi; ++od) {
    const std::size_t id = od * g.sd + kd - g.pd;
    for (std::size_t oh = h_lo; oh < h_hi; ++oh) {
      const std::size_t ih = oh * g.sh + kh - g.ph;
      body((od * g.oh + oh) * g.ow, (id * g.h + ih) * g.w, w_lo, w_hi);
    }
  }
}

using RowMajor = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMajor>;
using ConstMatMap = Eigen::Map<const RowMajor>;

// Unrolls one batch element into cols[(c * kvol + tap), out_voxel]; taps that
// fall into padding are written as zero.
void im2col(const ConvGeometry& g, const Real* x, Real* cols) {
  const std::size_t kvol = g.k_volume(), op = g.out_plane();
  for (std::size_t c = 0; c < g.c; ++c) {
    const Real* xp = x + c * g.in_plane();
    for (std::size_t kd = 0; kd < g.kd; ++kd)
      for (std::size_t kh = 0; kh < g.kh; ++kh)
        for (std::size_t kw = 0; kw < g.kw; ++kw) {
          Real* row = cols + (c * kvol + (kd * g.kh + kh) * g.kw + kw) * op;
          const auto [d_lo, d_hi] = tap_range(kd, g.d, g.od, g.sd, g.pd);
          const auto [h_lo, h_hi] = tap_range(kh, g.h, g.oh, g.sh, g.ph);
          const auto [w_lo, w_hi] = tap_range(kw, g.w, g.ow, g.sw, g.pw);
          for (std::size_t od = 0; od < g.od; ++od)
            for (std::size_t oh = 0; oh < g.oh; ++oh) {
              Real* out = row + (od * g.oh + oh) * g.ow;
              if (od < d_lo || od >= d_hi || oh < h_lo || oh >= h_hi || w_lo >= w_hi) {
                std::fill(out, out + g.ow, Real{0});
                continue;
              }
              const Real* in = xp + ((od * g.sd + kd - g.pd) * g.h + (oh * g.sh + kh - g.ph)) * g.w;
              std::fill(out, out + w_lo, Real{0});
              for (std::size_t ow = w_lo; ow < w_hi; ++ow) out[ow] = in[ow * g.sw + kw - g.pw];
              std::fill(out + w_hi, out + g.ow, Real{0});
            }
        }
  }
}

// Adjoint of im2col: scatters cols back into x (accumulating).
void col2im(const ConvGeometry& g, const Real* cols, Real* x) {
  const std::size_t kvol = g.k_volume(), op = g.out_plane();
  for (std::size_t c = 0; c < g.c; ++c) {
    Real* xp = x + c * g.in_plane();
    for (std::size_t kd = 0; kd < g.kd; ++kd)
      for (std::size_t kh = 0; kh < g.kh; ++kh)
        for (std::size_t kw = 0; kw < g.kw; ++kw) {
          const Real* row = cols + (c * kvol + (kd * g.kh + kh) * g.kw + kw) * op;
          for_each_tap_row(g, kd, kh, kw, [&](std::size_t yo, std::size_t xo, std::size_t lo, std::size_t hi) {
            for (std::size_t ow = lo; ow < hi; ++ow) xp[xo + ow * g.sw + kw - g.pw] += row[yo + ow];
          });
        }
  }
}

Eigen::Index idx(std::size_t v) { return static_cast<Eigen::Index>(v); }

void conv_forward_kernel(const ConvGeometry& g, const Real* x, const Real* k, Real* y) {
  const std::size_t rows = g.c * g.k_volume(), op = g.out_plane();
  std::vector<Real> cols(rows * op);
  const ConstMatMap K(k, idx(g.f), idx(rows));
  for (std::size_t n = 0; n < g.n; ++n) {
    im2col(g, x + n * g.c * g.in_plane(), cols.data());
    MatMap Y(y + n * g.f * op, idx(g.f), idx(op));
    Y.noalias() += K * ConstMatMap(cols.data(), idx(rows), idx(op));
  }
}

void conv_input_grad_kernel(const ConvGeometry& g, const Real* gy, const Real* k, Real* gx) {
  const std::size_t rows = g.c * g.k_volume(), op = g.out_plane();
  RowMajor cols(idx(rows), idx(op));
  const ConstMatMap K(k, idx(g.f), idx(rows));
  for (std::size_t n = 0; n < g.n; ++n) {
    cols.noalias() = K.transpose() * ConstMatMap(gy + n * g.f * op, idx(g.f), idx(op));
    col2im(g, cols.data(), gx + n * g.c * g.in_plane());
  }
}

void conv_kernel_grad_kernel(const ConvGeometry& g, const Real* x, const Real* gy, Real* gk) {
  const std::size_t rows = g.c * g.k_volume(), op = g.out_plane();
  std::vector<Real> cols(rows * op);
  MatMap GK(gk, idx(g.f), idx(rows));
  GK.setZero();
  for (std::size_t n = 0; n < g.n; ++n) {
    im2col(g, x + n * g.c * g.in_plane(), cols.data());
    GK.noalias() += ConstMatMap(gy + n * g.f * op, idx(g.f), idx(op)) * ConstMatMap(cols.data(), idx(rows), idx(op)).transpose();
  }
}

void require_shape(const Tensor& t, const Shape& expected, const char* what) {
  if (t.shape() != expected)
    throw ShapeError(std::string(what) + " has shape " + to_string(t.shape()) + ", expected " + to_string(expected));
}

}  // namespace

Tensor conv(const Tensor& input, const Tensor& kernel, std::size_t stride, std::size_t padding) {
  const ConvGeometry g = geometry(input.shape(), kernel.shape(), stride, padding);
  Shape out_shape = output_shape(g, input.rank() == 5);
  std::vector<Real> out(numel(out_shape), 0.0);
  conv_forward_kernel(g, input.data().data(), kernel.data().data(), out.data());
  return Tensor::from_op(std::move(out_shape), std::move(out), "conv", {input, kernel},
                         [stride, padding](const Tensor& gy, std::span<const Tensor> in) {
                           TensorList grads(2);
                           if (in[0].requires_grad())
                             grads[0] = conv_input_grad(gy, in[1], in[0].shape(), stride, padding);
                           if (in[1].requires_grad())
                             grads[1] = conv_kernel_grad(in[0], gy, in[1].shape(), stride, padding);
                           return grads;
                         });
}

Tensor conv_input_grad(const Tensor& grad_out, const Tensor& kernel, const Shape& input_shape, std::size_t stride,
                       std::size_t padding) {
  const ConvGeometry g = geometry(input_shape, kernel.shape(), stride, padding);
  require_shape(grad_out, output_shape(g, input_shape.size() == 5), "conv_input_grad output gradient");
  std::vector<Real> out(numel(input_shape), 0.0);
  conv_input_grad_kernel(g, grad_out.data().data(), kernel.data().data(), out.data());
  return Tensor::from_op(input_shape, std::move(out), "conv_input_grad", {grad_out, kernel},
                         [stride, padding](const Tensor& gx, std::span<const Tensor> in) {
                           TensorList grads(2);
                           if (in[0].requires_grad()) grads[0] = conv(gx, in[1], stride, padding);
                           if (in[1].requires_grad()) grads[1] = conv_kernel_grad(gx, in[0], in[1].shape(), stride, padding);
                           return grads;
                         });
}

Tensor conv_kernel_grad(const Tensor& input, const Tensor& grad_out, const Shape& kernel_shape, std::size_t stride,
                        std::size_t padding) {
  const ConvGeometry g = geometry(input.shape(), kernel_shape, stride, padding);
  require_shape(grad_out, output_shape(g, input.rank() == 5), "conv_kernel_grad output gradient");
  std::vector<Real> out(numel(kernel_shape), 0.0);
  conv_kernel_grad_kernel(g, input.data().data(), grad_out.data().data(), out.data());
  return Tensor::from_op(kernel_shape, std::move(out), "conv_kernel_grad", {input, grad_out},
                         [stride, padding](const Tensor& gk, std::span<const Tensor> in) {
                           TensorList grads(2);
                           if (in[0].requires_grad())
                             grads[0] = conv_input_grad(in[1], gk, in[0].shape(), stride, padding);
                           if (in[1].requires_grad()) grads[1] = conv(in[0], gk, stride, padding);
                           return grads;
                         });
}

// ---- resampling ------------------------------------------------------------

namespace {

struct Spatial {
  std::size_t planes, d, h, w;
};

Spatial spatial_of(const Shape& s) {
  if (s.size() != 4 && s.size() != 5) throw ShapeError("expected [N,C,*S] with 2 or 3 spatial axes, got " + to_string(s));
  const bool is3d = s.size() == 5;
  return {s[0] * s[1], is3d ? s[2] : 1, s[s.size() - 2], s[s.size() - 1]};
}

}  // namespace

Tensor upsample2x(const Tensor& x) {
  const Spatial sp = spatial_of(x.shape());
  const bool is3d = x.rank() == 5;
  const std::size_t fd = is3d ? 2 : 1;
  Shape shape = x.shape();
  for (std::size_t a = 2; a < shape.size(); ++a) shape[a] *= 2;
  const std::size_t od = sp.d * fd, oh = sp.h * 2, ow = sp.w * 2;
  std::vector<Real> out(numel(shape));
  auto d = x.data();
  for (std::size_t p = 0; p < sp.planes; ++p)
    for (std::size_t z = 0; z < od; ++z)
      for (std::size_t y = 0; y < oh; ++y) {
        const Real* src = d.data() + ((p * sp.d + z / fd) * sp.h + y / 2) * sp.w;
        Real* dst = out.data() + ((p * od + z) * oh + y) * ow;
        for (std::size_t xx = 0; xx < ow; ++xx) dst[xx] = src[xx / 2];
      }
  return Tensor::from_op(std::move(shape), std::move(out), "upsample2x", {x},
                         [](const Tensor& g, std::span<const Tensor>) { return TensorList{sum_pool2x(g)}; });
}

Tensor sum_pool2x(const Tensor& x) {
  const Spatial sp = spatial_of(x.shape());
  const bool is3d = x.rank() == 5;
  const std::size_t fd = is3d ? 2 : 1;
  if (sp.h % 2 || sp.w % 2 || (is3d && sp.d % 2))
    throw ShapeError("sum_pool2x needs even spatial extents, got " + to_string(x.shape()));
  Shape shape = x.shape();
  for (std::size_t a = 2; a < shape.size(); ++a) shape[a] /= 2;
  const std::size_t od = sp.d / fd, oh = sp.h / 2, ow = sp.w / 2;
  std::vector<Real> out(numel(shape), 0.0);
  auto d = x.data();
  for (std::size_t p = 0; p < sp.planes; ++p)
    for (std::size_t z = 0; z < sp.d; ++z)
      for (std::size_t y = 0; y < sp.h; ++y) {
        const Real* src = d.data() + ((p * sp.d + z) * sp.h + y) * sp.w;
        Real* dst = out.data() + ((p * od + z / fd) * oh + y / 2) * ow;
        for (std::size_t xx = 0; xx < sp.w; ++xx) dst[xx / 2] += src[xx];
      }
  return Tensor::from_op(std::move(shape), std::move(out), "sum_pool2x", {x},
                         [](const Tensor& g, std::span<const Tensor>) { return TensorList{upsample2x(g)}; });
}

}  // namespace reladiff
