#include "fcn/layers.hpp"

#include <algorithm>
#include <limits>

#include "fcn/rng.hpp"

namespace fcn {

std::int64_t conv_out_extent(std::int64_t in, std::int64_t k, std::int64_t s,
                             std::int64_t pad, std::int64_t dilation) {
  const std::int64_t k_eff = (k - 1) * dilation + 1;
  const std::int64_t span = in + 2 * pad - k_eff;
  if (span < 0) return 0;
  return span / s + 1;
}

namespace {

void check_conv_pre(const Tensor& x, const ConvParams& p) {
  const auto& w = p.weights;
  if (w.dims.n < 1 || w.dims.c < 1 || w.dims.h < 1 || w.dims.w < 1)
    throw ShapeError("conv2d: bad kernel dims " + w.dims.str());
  if (p.stride < 1 || p.dilation < 1 || p.pad < 0)
    throw InvalidParamError("conv2d: stride/dilation must be >= 1, pad >= 0");
  if (w.dims.c != x.dims.c)
    throw ShapeError("conv2d: input channels " + std::to_string(x.dims.c) +
                     " != kernel in_c " + std::to_string(w.dims.c));
  if (static_cast<std::int64_t>(p.bias.size()) != w.dims.n)
    throw ShapeError("conv2d: bias length != out channels");
  if (conv_out_extent(x.dims.h, w.dims.h, p.stride, p.pad, p.dilation) < 1 ||
      conv_out_extent(x.dims.w, w.dims.w, p.stride, p.pad, p.dilation) < 1)
    throw ShapeError("conv2d: kernel larger than padded input (" +
                     x.dims.str() + " vs kernel " + w.dims.str() + ")");
}

}  // namespace

Tensor conv2d_forward(const Tensor& x, const ConvParams& p) {
  check_conv_pre(x, p);
  const auto& w = p.weights;
  const std::int64_t oh =
      conv_out_extent(x.dims.h, w.dims.h, p.stride, p.pad, p.dilation);
  const std::int64_t ow =
      conv_out_extent(x.dims.w, w.dims.w, p.stride, p.pad, p.dilation);
  Tensor out({x.dims.n, w.dims.n, oh, ow});
  for (std::int64_t n = 0; n < x.dims.n; ++n)
    for (std::int64_t o = 0; o < w.dims.n; ++o)
      for (std::int64_t i = 0; i < oh; ++i)
        for (std::int64_t j = 0; j < ow; ++j) {
          double acc = p.bias[static_cast<std::size_t>(o)];
          const std::int64_t i0 = i * p.stride - p.pad;
          const std::int64_t j0 = j * p.stride - p.pad;
          for (std::int64_t c = 0; c < x.dims.c; ++c)
            for (std::int64_t di = 0; di < w.dims.h; ++di) {
              const std::int64_t ii = i0 + di * p.dilation;
              if (ii < 0 || ii >= x.dims.h) continue;
              for (std::int64_t dj = 0; dj < w.dims.w; ++dj) {
                const std::int64_t jj = j0 + dj * p.dilation;
                if (jj < 0 || jj >= x.dims.w) continue;
                acc += w.at(o, c, di, dj) * x.at(n, c, ii, jj);
              }
            }
          out.at(n, o, i, j) = acc;
        }
  return out;
}

TensorF conv2d_forward(const TensorF& x, const BasicTensor<float>& w,
                       const std::vector<float>& bias, std::int64_t stride,
                       std::int64_t pad, std::int64_t dilation) {
  if (w.dims.c != x.dims.c || static_cast<std::int64_t>(bias.size()) != w.dims.n)
    throw ShapeError("conv2d(f32): channel/bias mismatch");
  const std::int64_t oh = conv_out_extent(x.dims.h, w.dims.h, stride, pad, dilation);
  const std::int64_t ow = conv_out_extent(x.dims.w, w.dims.w, stride, pad, dilation);
  if (oh < 1 || ow < 1) throw ShapeError("conv2d(f32): kernel larger than padded input");
  TensorF out({x.dims.n, w.dims.n, oh, ow});
  for (std::int64_t n = 0; n < x.dims.n; ++n)
    for (std::int64_t o = 0; o < w.dims.n; ++o)
      for (std::int64_t i = 0; i < oh; ++i)
        for (std::int64_t j = 0; j < ow; ++j) {
          float acc = bias[static_cast<std::size_t>(o)];
          const std::int64_t i0 = i * stride - pad;
          const std::int64_t j0 = j * stride - pad;
          for (std::int64_t c = 0; c < x.dims.c; ++c)
            for (std::int64_t di = 0; di < w.dims.h; ++di) {
              const std::int64_t ii = i0 + di * dilation;
              if (ii < 0 || ii >= x.dims.h) continue;
              for (std::int64_t dj = 0; dj < w.dims.w; ++dj) {
                const std::int64_t jj = j0 + dj * dilation;
                if (jj < 0 || jj >= x.dims.w) continue;
                acc += w.at(o, c, di, dj) * x.at(n, c, ii, jj);
              }
            }
          out.at(n, o, i, j) = acc;
        }
  return out;
}

ConvGrads conv2d_backward(const Tensor& x, const ConvParams& p,
                          const Tensor& grad_out) {
  check_conv_pre(x, p);
  const auto& w = p.weights;
  const std::int64_t oh =
      conv_out_extent(x.dims.h, w.dims.h, p.stride, p.pad, p.dilation);
  const std::int64_t ow =
      conv_out_extent(x.dims.w, w.dims.w, p.stride, p.pad, p.dilation);
  if (!(grad_out.dims == Shape4{x.dims.n, w.dims.n, oh, ow}))
    throw ShapeError("conv2d_backward: grad_out dims " + grad_out.dims.str() +
                     " do not match forward output");
  ConvGrads g{Tensor(x.dims), Tensor(w.dims),
              std::vector<double>(static_cast<std::size_t>(w.dims.n), 0.0)};
  for (std::int64_t n = 0; n < x.dims.n; ++n)
    for (std::int64_t o = 0; o < w.dims.n; ++o)
      for (std::int64_t i = 0; i < oh; ++i)
        for (std::int64_t j = 0; j < ow; ++j) {
          const double go = grad_out.at(n, o, i, j);
          if (go == 0.0) continue;
          g.grad_b[static_cast<std::size_t>(o)] += go;
          const std::int64_t i0 = i * p.stride - p.pad;
          const std::int64_t j0 = j * p.stride - p.pad;
          for (std::int64_t c = 0; c < x.dims.c; ++c)
            for (std::int64_t di = 0; di < w.dims.h; ++di) {
              const std::int64_t ii = i0 + di * p.dilation;
              if (ii < 0 || ii >= x.dims.h) continue;
              for (std::int64_t dj = 0; dj < w.dims.w; ++dj) {
                const std::int64_t jj = j0 + dj * p.dilation;
                if (jj < 0 || jj >= x.dims.w) continue;
                g.grad_x.at(n, c, ii, jj) += go * w.at(o, c, di, dj);
                g.grad_w.at(o, c, di, dj) += go * x.at(n, c, ii, jj);
              }
            }
        }
  return g;
}

PoolResult pool_forward(const Tensor& x, const PoolParams& p) {
  if (p.kernel < 1 || p.stride < 1 || p.dilation < 1 || p.pad < 0)
    throw InvalidParamError("pool: kernel/stride/dilation must be >= 1");
  if (p.pad >= (p.kernel - 1) * p.dilation + 1)
    throw InvalidParamError("pool: pad must be smaller than kernel extent");
  const std::int64_t oh =
      conv_out_extent(x.dims.h, p.kernel, p.stride, p.pad, p.dilation);
  const std::int64_t ow =
      conv_out_extent(x.dims.w, p.kernel, p.stride, p.pad, p.dilation);
  if (oh < 1 || ow < 1)
    throw ShapeError("pool: kernel larger than padded input");
  PoolResult r;
  r.y = Tensor({x.dims.n, x.dims.c, oh, ow});
  if (p.kind == PoolParams::kMax)
    r.switches.assign(static_cast<std::size_t>(r.y.numel()), -1);
  for (std::int64_t n = 0; n < x.dims.n; ++n)
    for (std::int64_t c = 0; c < x.dims.c; ++c)
      for (std::int64_t i = 0; i < oh; ++i)
        for (std::int64_t j = 0; j < ow; ++j) {
          const std::int64_t i0 = i * p.stride - p.pad;
          const std::int64_t j0 = j * p.stride - p.pad;
          if (p.kind == PoolParams::kMax) {
            double best = -std::numeric_limits<double>::infinity();
            std::int64_t best_idx = -1;
            for (std::int64_t di = 0; di < p.kernel; ++di) {
              const std::int64_t ii = i0 + di * p.dilation;
              if (ii < 0 || ii >= x.dims.h) continue;
              for (std::int64_t dj = 0; dj < p.kernel; ++dj) {
                const std::int64_t jj = j0 + dj * p.dilation;
                if (jj < 0 || jj >= x.dims.w) continue;
                const double v = x.at(n, c, ii, jj);
                if (v > best) {  // first index wins ties
                  best = v;
                  best_idx = x.index(n, c, ii, jj);
                }
              }
            }
            r.y.at(n, c, i, j) = best;
            r.switches[static_cast<std::size_t>(r.y.index(n, c, i, j))] =
                best_idx;
          } else {
            double sum = 0.0;
            std::int64_t cnt = 0;
            for (std::int64_t di = 0; di < p.kernel; ++di) {
              const std::int64_t ii = i0 + di * p.dilation;
              if (ii < 0 || ii >= x.dims.h) continue;
              for (std::int64_t dj = 0; dj < p.kernel; ++dj) {
                const std::int64_t jj = j0 + dj * p.dilation;
                if (jj < 0 || jj >= x.dims.w) continue;
                sum += x.at(n, c, ii, jj);
                ++cnt;
              }
            }
            r.y.at(n, c, i, j) = sum / static_cast<double>(cnt);
          }
        }
  return r;
}

Tensor pool_backward(const PoolParams& p, const Shape4& in_dims,
                     const PoolResult& fwd, const Tensor& grad_out) {
  if (!(grad_out.dims == fwd.y.dims))
    throw ShapeError("pool_backward: grad_out dims " + grad_out.dims.str() +
                     " do not match forward output " + fwd.y.dims.str());
  Tensor grad_x(in_dims);
  if (p.kind == PoolParams::kMax) {
    if (fwd.switches.size() != grad_out.data.size())
      throw ShapeError("pool_backward: stale switches");
    for (std::size_t k = 0; k < grad_out.data.size(); ++k) {
      const std::int64_t idx = fwd.switches[k];
      if (idx < 0 || idx >= grad_x.numel())
        throw ShapeError("pool_backward: switch index out of range");
      grad_x.data[static_cast<std::size_t>(idx)] += grad_out.data[k];
    }
    return grad_x;
  }
  const auto& y = fwd.y;
  for (std::int64_t n = 0; n < y.dims.n; ++n)
    for (std::int64_t c = 0; c < y.dims.c; ++c)
      for (std::int64_t i = 0; i < y.dims.h; ++i)
        for (std::int64_t j = 0; j < y.dims.w; ++j) {
          const std::int64_t i0 = i * p.stride - p.pad;
          const std::int64_t j0 = j * p.stride - p.pad;
          std::int64_t cnt = 0;
          for (std::int64_t di = 0; di < p.kernel; ++di) {
            const std::int64_t ii = i0 + di * p.dilation;
            if (ii < 0 || ii >= in_dims.h) continue;
            for (std::int64_t dj = 0; dj < p.kernel; ++dj) {
              const std::int64_t jj = j0 + dj * p.dilation;
              if (jj < 0 || jj >= in_dims.w) continue;
              ++cnt;
            }
          }
          const double g = grad_out.at(n, c, i, j) / static_cast<double>(cnt);
          for (std::int64_t di = 0; di < p.kernel; ++di) {
            const std::int64_t ii = i0 + di * p.dilation;
            if (ii < 0 || ii >= in_dims.h) continue;
            for (std::int64_t dj = 0; dj < p.kernel; ++dj) {
              const std::int64_t jj = j0 + dj * p.dilation;
              if (jj < 0 || jj >= in_dims.w) continue;
              grad_x.at(n, c, ii, jj) += g;
            }
          }
        }
  return grad_x;
}

Tensor relu_forward(const Tensor& x) {
  Tensor out(x.dims);
  for (std::size_t i = 0; i < x.data.size(); ++i)
    out.data[i] = x.data[i] > 0.0 ? x.data[i] : 0.0;
  return out;
}

Tensor relu_backward(const Tensor& x, const Tensor& grad_out) {
  if (!(x.dims == grad_out.dims))
    throw ShapeError("relu_backward: dims mismatch");
  Tensor g(x.dims);
  for (std::size_t i = 0; i < x.data.size(); ++i)
    g.data[i] = x.data[i] > 0.0 ? grad_out.data[i] : 0.0;
  return g;
}

DropoutResult dropout_forward(const Tensor& x, const DropoutParams& p,
                              std::uint64_t seed) {
  if (p.rate < 0.0 || p.rate >= 1.0)
    throw InvalidParamError("dropout: rate must be in [0, 1)");
  DropoutResult r;
  if (!p.train || p.rate == 0.0) {
    r.y = x;
    return r;
  }
  const double keep = 1.0 - p.rate;
  const double scale = 1.0 / keep;
  Rng rng(seed);
  r.y = Tensor(x.dims);
  r.mask.resize(x.data.size());
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    const bool kept = rng.bernoulli(keep);
    r.mask[i] = kept ? 1 : 0;
    r.y.data[i] = kept ? x.data[i] * scale : 0.0;
  }
  return r;
}

Tensor dropout_backward(const DropoutParams& p,
                        const std::vector<std::uint8_t>& mask,
                        const Tensor& grad_out) {
  if (!p.train || p.rate == 0.0) return grad_out;
  if (mask.size() != grad_out.data.size())
    throw ShapeError("dropout_backward: mask size mismatch");
  const double scale = 1.0 / (1.0 - p.rate);
  Tensor g(grad_out.dims);
  for (std::size_t i = 0; i < grad_out.data.size(); ++i)
    g.data[i] = mask[i] ? grad_out.data[i] * scale : 0.0;
  return g;
}

ConvParams convolutionalize(const std::vector<double>& fc_weights,
                            std::int64_t n_out, std::int64_t in_c,
                            std::int64_t in_h, std::int64_t in_w,
                            const std::vector<double>& fc_bias) {
  const std::int64_t cols = in_c * in_h * in_w;
  if (n_out < 1 || cols < 1 ||
      static_cast<std::int64_t>(fc_weights.size()) != n_out * cols)
    throw ShapeError("convolutionalize: weight matrix is not n_out x (c*h*w)");
  if (static_cast<std::int64_t>(fc_bias.size()) != n_out)
    throw ShapeError("convolutionalize: bias length != n_out");
  ConvParams p;
  p.weights = Tensor({n_out, in_c, in_h, in_w});
  // column index (c*h + i)*w + j matches the kernel's row-major layout,
  // so the reshape is a straight copy
  p.weights.data = fc_weights;
  p.bias = fc_bias;
  p.stride = 1;
  p.pad = 0;
  p.dilation = 1;
  return p;
}

}  // namespace fcn
