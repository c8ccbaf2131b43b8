#pragma once

#include <cstdint>
#include <vector>

#include "fcn/tensor.hpp"

namespace fcn {

/// Convolution is cross-correlation (no kernel flip), matching the layer
/// functional form y_ij = f_ks({x_{si+di, sj+dj}}). Padding is zero-fill,
/// symmetric per side.
struct ConvParams {
  Tensor weights;             // (out_c, in_c, k_h, k_w)
  std::vector<double> bias;   // length out_c
  std::int64_t stride = 1;
  std::int64_t pad = 0;
  std::int64_t dilation = 1;  // rarefied-filter spacing

  std::int64_t out_channels() const { return weights.dims.n; }
  std::int64_t in_channels() const { return weights.dims.c; }
};

struct PoolParams {
  enum Kind { kMax, kAvg };
  Kind kind = kMax;
  std::int64_t kernel = 2;
  std::int64_t stride = 2;
  std::int64_t pad = 0;
  std::int64_t dilation = 1;  // used by the rarefied (stride-1) nets
};

struct DropoutParams {
  double rate = 0.5;  // in [0, 1)
  bool train = true;  // test mode is exact identity
};

/// floor((in + 2 pad - ((k-1) dilation + 1)) / stride) + 1
std::int64_t conv_out_extent(std::int64_t in, std::int64_t k, std::int64_t s,
                             std::int64_t pad, std::int64_t dilation);

Tensor conv2d_forward(const Tensor& x, const ConvParams& p);
TensorF conv2d_forward(const TensorF& x, const BasicTensor<float>& weights,
                       const std::vector<float>& bias, std::int64_t stride,
                       std::int64_t pad, std::int64_t dilation);

struct ConvGrads {
  Tensor grad_x;
  Tensor grad_w;
  std::vector<double> grad_b;
};

/// Gradients of <grad_out, conv2d_forward(x, p)> w.r.t. x, weights, bias.
ConvGrads conv2d_backward(const Tensor& x, const ConvParams& p,
                          const Tensor& grad_out);

struct PoolResult {
  Tensor y;
  std::vector<std::int64_t> switches;  // flat argmax input index (max only)
};

/// Max pool records first-index (row-major) switches; padding contributes
/// -inf to max and is excluded from the average denominator.
PoolResult pool_forward(const Tensor& x, const PoolParams& p);

Tensor pool_backward(const PoolParams& p, const Shape4& in_dims,
                     const PoolResult& fwd, const Tensor& grad_out);

Tensor relu_forward(const Tensor& x);
/// Gradient passes where x > 0.
Tensor relu_backward(const Tensor& x, const Tensor& grad_out);

struct DropoutResult {
  Tensor y;
  std::vector<std::uint8_t> mask;  // 1 = kept (empty in test mode)
};

/// Train mode zeroes each element with probability rate and scales
/// survivors by 1/(1-rate); test mode is identity.
DropoutResult dropout_forward(const Tensor& x, const DropoutParams& p,
                              std::uint64_t seed);
Tensor dropout_backward(const DropoutParams& p,
                        const std::vector<std::uint8_t>& mask,
                        const Tensor& grad_out);

/// Reinterpret a fully connected layer (rows of fc_weights indexed by
/// output, columns by flattened (c, h, w) input) as a convolution whose
/// kernel covers its entire input region.
ConvParams convolutionalize(const std::vector<double>& fc_weights,
                            std::int64_t n_out, std::int64_t in_c,
                            std::int64_t in_h, std::int64_t in_w,
                            const std::vector<double>& fc_bias);

}  // namespace fcn
