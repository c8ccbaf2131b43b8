#include "fcn/resampling.hpp"

#include <array>
#include <cmath>

#include "fcn/graph.hpp"
#include "fcn/layers.hpp"

namespace fcn {

std::int64_t upsample_kernel_size(std::int64_t factor) {
  if (factor < 1) throw InvalidParamError("upsample: factor must be >= 1");
  return 2 * factor - (factor % 2);
}

std::vector<double> bilinear_profile(std::int64_t factor) {
  const std::int64_t k = upsample_kernel_size(factor);
  // Note: the cited interpolation formula's "{i/j}" term is read as the
  // fractional part {j/f}; the coefficients below follow the standard
  // bilinear map evaluated at the symmetric tap positions.
  const double center =
      static_cast<double>(2 * factor - 1 - (factor % 2)) /
      static_cast<double>(2 * factor);
  std::vector<double> w(static_cast<std::size_t>(k));
  for (std::int64_t i = 0; i < k; ++i)
    w[static_cast<std::size_t>(i)] =
        1.0 - std::abs(static_cast<double>(i) / static_cast<double>(factor) -
                       center);
  return w;
}

UpsampleParams bilinear_kernel(std::int64_t factor, std::int64_t channels) {
  if (channels < 1) throw InvalidParamError("bilinear_kernel: channels >= 1");
  const std::vector<double> w = bilinear_profile(factor);
  const std::int64_t k = static_cast<std::int64_t>(w.size());
  UpsampleParams p;
  p.factor = factor;
  p.kernel = Tensor({channels, 1, k, k});
  for (std::int64_t c = 0; c < channels; ++c)
    for (std::int64_t i = 0; i < k; ++i)
      for (std::int64_t j = 0; j < k; ++j)
        p.kernel.at(c, 0, i, j) = w[static_cast<std::size_t>(i)] *
                                  w[static_cast<std::size_t>(j)];
  return p;
}

Tensor dilate_filter(const Tensor& f, std::int64_t s) {
  if (s < 1) throw InvalidParamError("dilate_filter: s must be >= 1");
  if (s == 1) return f;
  const std::int64_t kh = (f.dims.h - 1) * s + 1;
  const std::int64_t kw = (f.dims.w - 1) * s + 1;
  Tensor out({f.dims.n, f.dims.c, kh, kw});
  for (std::int64_t o = 0; o < f.dims.n; ++o)
    for (std::int64_t c = 0; c < f.dims.c; ++c)
      for (std::int64_t i = 0; i < f.dims.h; ++i)
        for (std::int64_t j = 0; j < f.dims.w; ++j)
          out.at(o, c, i * s, j * s) = f.at(o, c, i, j);
  return out;
}

namespace {

void check_upsample(const Tensor& x, const UpsampleParams& p) {
  if (p.factor < 1) throw InvalidParamError("upsample: factor must be >= 1");
  const std::int64_t k = upsample_kernel_size(p.factor);
  if (p.kernel.dims.h != k || p.kernel.dims.w != k || p.kernel.dims.c != 1)
    throw ShapeError("upsample: kernel must be (c,1," + std::to_string(k) +
                     "," + std::to_string(k) + ") for factor " +
                     std::to_string(p.factor));
  if (p.kernel.dims.n != x.dims.c)
    throw ShapeError("upsample: kernel channels " +
                     std::to_string(p.kernel.dims.n) + " != input channels " +
                     std::to_string(x.dims.c));
}

}  // namespace

Tensor upsample_forward(const Tensor& x, const UpsampleParams& p) {
  check_upsample(x, p);
  const std::int64_t f = p.factor;
  const std::int64_t k = p.kernel.dims.h;
  const std::int64_t t = p.trim();
  Tensor out({x.dims.n, x.dims.c, x.dims.h * f, x.dims.w * f});
  for (std::int64_t n = 0; n < x.dims.n; ++n)
    for (std::int64_t c = 0; c < x.dims.c; ++c)
      for (std::int64_t pi = 0; pi < x.dims.h; ++pi)
        for (std::int64_t pj = 0; pj < x.dims.w; ++pj) {
          const double v = x.at(n, c, pi, pj);
          if (v == 0.0) continue;
          for (std::int64_t di = 0; di < k; ++di) {
            const std::int64_t oi = f * pi + di - t;
            if (oi < 0 || oi >= out.dims.h) continue;
            for (std::int64_t dj = 0; dj < k; ++dj) {
              const std::int64_t oj = f * pj + dj - t;
              if (oj < 0 || oj >= out.dims.w) continue;
              out.at(n, c, oi, oj) += v * p.kernel.at(c, 0, di, dj);
            }
          }
        }
  return out;
}

UpsampleGrads upsample_backward(const Tensor& x, const UpsampleParams& p,
                                const Tensor& grad_out) {
  check_upsample(x, p);
  const std::int64_t f = p.factor;
  const std::int64_t k = p.kernel.dims.h;
  const std::int64_t t = p.trim();
  if (!(grad_out.dims ==
        Shape4{x.dims.n, x.dims.c, x.dims.h * f, x.dims.w * f}))
    throw ShapeError("upsample_backward: grad dims " + grad_out.dims.str() +
                     " do not match forward output");
  UpsampleGrads g{Tensor(x.dims), Tensor(p.kernel.dims)};
  for (std::int64_t n = 0; n < x.dims.n; ++n)
    for (std::int64_t c = 0; c < x.dims.c; ++c)
      for (std::int64_t pi = 0; pi < x.dims.h; ++pi)
        for (std::int64_t pj = 0; pj < x.dims.w; ++pj) {
          double acc = 0.0;
          const double xv = x.at(n, c, pi, pj);
          for (std::int64_t di = 0; di < k; ++di) {
            const std::int64_t oi = f * pi + di - t;
            if (oi < 0 || oi >= grad_out.dims.h) continue;
            for (std::int64_t dj = 0; dj < k; ++dj) {
              const std::int64_t oj = f * pj + dj - t;
              if (oj < 0 || oj >= grad_out.dims.w) continue;
              const double go = grad_out.at(n, c, oi, oj);
              acc += go * p.kernel.at(c, 0, di, dj);
              if (p.learnable) g.grad_kernel.at(c, 0, di, dj) += go * xv;
            }
          }
          g.grad_x.at(n, c, pi, pj) = acc;
        }
  return g;
}

// ---- shift-and-stitch ----------------------------------------------------

namespace {

struct ChainGeom {
  std::int64_t stride = 1;   // composed stride
  std::int64_t out_c = 0;    // channels of the output
  // per-layer (kernel, stride, pad, dilation) for the extent recurrence
  std::vector<std::array<std::int64_t, 4>> layers;
};

// Geometry of a linear conv/pool/relu chain; rejects other shapes.
ChainGeom chain_geom(const Graph& g) {
  ChainGeom geo;
  for (const Node& n : g.nodes()) {
    switch (n.op) {
      case OpKind::kInput:
        break;
      case OpKind::kConv: {
        const Param& w = g.param(n.weight);
        if (w.value.dims.h != w.value.dims.w)
          throw InvalidParamError("shift_and_stitch: square kernels only");
        geo.layers.push_back({w.value.dims.h, n.stride, n.pad, n.dilation});
        geo.stride *= n.stride;
        break;
      }
      case OpKind::kPool:
        geo.layers.push_back(
            {n.pool.kernel, n.pool.stride, n.pool.pad, n.pool.dilation});
        geo.stride *= n.pool.stride;
        break;
      case OpKind::kRelu:
        break;
      default:
        throw InvalidParamError(
            "shift_and_stitch: graph must be a conv/pool/relu chain");
    }
  }
  return geo;
}

// output extent of the stride-1 rarefied chain: every layer runs at
// stride 1 with kernel and padding dilated by the cumulative stride of
// the layers before it
std::int64_t dense_extent(const ChainGeom& geo, std::int64_t in) {
  std::int64_t e = in;
  std::int64_t cum = 1;
  for (const auto& [k, s, pad, dil] : geo.layers) {
    e = conv_out_extent(e, k, 1, pad * cum, dil * cum);
    if (e < 1) throw ShapeError("shift_and_stitch: input too small");
    cum *= s;
  }
  return e;
}

// shift right/down by growing the canvas with leading zeros, so no real
// pixel falls off the trailing edge
Tensor shift_input(const Tensor& x, std::int64_t down, std::int64_t right) {
  Tensor out({x.dims.n, x.dims.c, x.dims.h + down, x.dims.w + right});
  for (std::int64_t n = 0; n < x.dims.n; ++n)
    for (std::int64_t c = 0; c < x.dims.c; ++c)
      for (std::int64_t i = 0; i < x.dims.h; ++i)
        for (std::int64_t j = 0; j < x.dims.w; ++j)
          out.at(n, c, i + down, j + right) = x.at(n, c, i, j);
  return out;
}

}  // namespace

Tensor shift_and_stitch(Graph& g, const Tensor& x) {
  const ChainGeom geo = chain_geom(g);
  const std::int64_t f = geo.stride;
  if (f == 1) return g.forward(x);

  Tensor dense;
  for (std::int64_t sy = 0; sy < f; ++sy)
    for (std::int64_t sx = 0; sx < f; ++sx) {
      const Tensor out = g.forward(shift_input(x, sy, sx));
      if (sy == 0 && sx == 0)
        dense = Tensor({out.dims.n, out.dims.c, dense_extent(geo, x.dims.h),
                        dense_extent(geo, x.dims.w)});
      // the prediction for shift (sy,sx) at coarse cell m sits at
      // f*m - shift, the center of its receptive field on the unshifted
      // input
      for (std::int64_t n = 0; n < out.dims.n; ++n)
        for (std::int64_t c = 0; c < out.dims.c; ++c)
          for (std::int64_t mi = 0; mi < out.dims.h; ++mi) {
            const std::int64_t qi = f * mi - sy;
            if (qi < 0 || qi >= dense.dims.h) continue;
            for (std::int64_t mj = 0; mj < out.dims.w; ++mj) {
              const std::int64_t qj = f * mj - sx;
              if (qj < 0 || qj >= dense.dims.w) continue;
              dense.at(n, c, qi, qj) = out.at(n, c, mi, mj);
            }
          }
    }
  return dense;
}

}  // namespace fcn
