#pragma once

#include <cstdint>
#include <vector>

#include "fcn/tensor.hpp"

namespace fcn {

/// In-network upsampling by factor f as the adjoint of an input-strided
/// convolution ("backward convolution"). The kernel is applied per channel
/// with no cross-channel mixing. Kernel size is fixed to 2f - (f mod 2) so
/// the implicit margin (k - f) is even and trimmed symmetrically, making
/// the output extent exactly f times the input extent.
struct UpsampleParams {
  std::int64_t factor = 1;
  Tensor kernel;  // (c, 1, k, k)
  bool learnable = true;

  std::int64_t kernel_size() const { return kernel.dims.h; }
  std::int64_t trim() const { return (kernel_size() - factor) / 2; }
};

/// Required kernel size for an upsampling factor: 2f - (f mod 2).
std::int64_t upsample_kernel_size(std::int64_t factor);

/// 1-D bilinear profile w[i] = 1 - |i/f - c| with the symmetric-tap
/// center c = (2f - 1 - (f mod 2)) / (2f); each phase sums to 1.
std::vector<double> bilinear_profile(std::int64_t factor);

/// Per-channel 2-D bilinear kernel (outer product of the 1-D profile).
UpsampleParams bilinear_kernel(std::int64_t factor, std::int64_t channels);

/// Rarefy a filter: output extent (k-1)s + 1 per spatial axis with the
/// original taps at multiples of s and zeros elsewhere.
Tensor dilate_filter(const Tensor& f, std::int64_t s);

Tensor upsample_forward(const Tensor& x, const UpsampleParams& p);

struct UpsampleGrads {
  Tensor grad_x;
  Tensor grad_kernel;  // zero if p.learnable is false
};

UpsampleGrads upsample_backward(const Tensor& x, const UpsampleParams& p,
                                const Tensor& grad_out);

class Graph;

/// Dense stride-1 prediction by processing all f^2 shifted inputs of a
/// stride-f net and interlacing the outputs at their receptive-field
/// centers. Reference implementation; equivalent to rarefying every
/// filter layer-by-layer.
Tensor shift_and_stitch(Graph& g, const Tensor& x);

}  // namespace fcn
