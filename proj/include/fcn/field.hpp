#pragma once

#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "fcn/errors.hpp"
#include "fcn/tensor.hpp"

namespace fcn {

/// Exact rational arithmetic for field offsets. Interpolation layers
/// introduce halves and fractional strides; converting to integers only at
/// crop time keeps alignment exact.
class Rational {
 public:
  Rational() = default;
  Rational(std::int64_t num) : n_(num) {}  // NOLINT(google-explicit-constructor)
  Rational(std::int64_t num, std::int64_t den) : n_(num), d_(den) {
    if (d_ == 0) throw InvalidParamError("Rational: zero denominator");
    normalize();
  }

  std::int64_t num() const { return n_; }
  std::int64_t den() const { return d_; }
  bool is_integer() const { return d_ == 1; }
  std::int64_t to_integer() const {
    if (!is_integer())
      throw AlignmentError("rational " + str() + " is not an integer");
    return n_;
  }
  double to_double() const {
    return static_cast<double>(n_) / static_cast<double>(d_);
  }
  std::string str() const {
    return d_ == 1 ? std::to_string(n_)
                   : std::to_string(n_) + "/" + std::to_string(d_);
  }

  friend Rational operator+(Rational a, Rational b) {
    return Rational(checked(a.n_, b.d_) + checked(b.n_, a.d_),
                    checked(a.d_, b.d_));
  }
  friend Rational operator-(Rational a, Rational b) {
    return Rational(checked(a.n_, b.d_) - checked(b.n_, a.d_),
                    checked(a.d_, b.d_));
  }
  friend Rational operator*(Rational a, Rational b) {
    return Rational(checked(a.n_, b.n_), checked(a.d_, b.d_));
  }
  friend Rational operator/(Rational a, Rational b) {
    if (b.n_ == 0) throw InvalidParamError("Rational: division by zero");
    return Rational(checked(a.n_, b.d_), checked(a.d_, b.n_));
  }
  Rational operator-() const { return Rational(-n_, d_); }
  friend bool operator==(const Rational&, const Rational&) = default;
  friend bool operator<(Rational a, Rational b) {
    return checked(a.n_, b.d_) < checked(b.n_, a.d_);
  }

 private:
  static std::int64_t checked(std::int64_t a, std::int64_t b) {
    const __int128 p = static_cast<__int128>(a) * b;
    if (p > INT64_MAX || p < INT64_MIN)
      throw Error("Rational: overflow");
    return static_cast<std::int64_t>(p);
  }
  void normalize() {
    if (d_ < 0) {
      n_ = -n_;
      d_ = -d_;
    }
    const std::int64_t g = std::gcd(n_ < 0 ? -n_ : n_, d_);
    if (g > 1) {
      n_ /= g;
      d_ /= g;
    }
    if (n_ == 0) d_ = 1;
  }
  std::int64_t n_ = 0;
  std::int64_t d_ = 1;
};

/// One layer's geometric signature, per axis.
struct FieldDescriptor {
  std::int64_t kernel = 1;
  std::int64_t stride = 1;
  std::int64_t pad_before = 0;
  std::int64_t dilation = 1;
};

/// Accumulated geometry of a layer stack, looking from the current grid
/// back to the input. offset is the input coordinate of output pixel 0's
/// field center, with pixel centers at integer coordinates and a k-tap
/// kernel centered at (k-1)/2.
struct ComposedField {
  Rational rf_size{1};
  Rational eff_stride{1};
  Rational offset{0};
};

/// Per-layer geometry in a form that also covers fractional-stride
/// (upsampling) layers: footprint extent on the immediate input, stride,
/// and the immediate-input coordinate of output pixel 0's window center.
struct LayerField {
  Rational extent{1};
  Rational stride{1};
  Rational center{0};

  static LayerField conv(const FieldDescriptor& d) {
    if (d.kernel < 1 || d.stride < 1 || d.dilation < 1 || d.pad_before < 0)
      throw InvalidParamError("FieldDescriptor: kernel/stride/dilation >= 1");
    const std::int64_t k_eff = (d.kernel - 1) * d.dilation + 1;
    LayerField f;
    f.extent = Rational(k_eff);
    f.stride = Rational(d.stride);
    f.center = Rational(k_eff - 1, 2) - Rational(d.pad_before);
    return f;
  }

  /// Transposed convolution with factor f and k taps, trimmed by
  /// floor((k-f)/2) leading pixels so the output extent is exactly f * in.
  static LayerField upsample(std::int64_t factor, std::int64_t kernel_taps) {
    if (factor < 1 || kernel_taps < 1)
      throw InvalidParamError("upsample field: factor/kernel >= 1");
    const std::int64_t trim = (kernel_taps - factor) / 2;
    LayerField f;
    f.extent = Rational(1) + Rational(kernel_taps - 1, 1) / Rational(factor);
    f.stride = Rational(1, factor);
    f.center = (Rational(trim) - Rational(kernel_taps - 1, 2)) / Rational(factor);
    return f;
  }
};

ComposedField compose(const LayerField& outer, const ComposedField& inner);

/// rf' = rf + (k_eff - 1) * stride; stride' = s * stride;
/// offset' = offset + ((k_eff - 1)/2 - pad) * stride.
ComposedField compose(const FieldDescriptor& outer, const ComposedField& inner);

ComposedField chain(std::span<const FieldDescriptor> descriptors);
ComposedField chain(std::span<const LayerField> layers);

/// Crop (in pixels of the shared grid) that aligns path_a's pixel 0 onto
/// path_b's grid. Requires equal effective strides; throws AlignmentError
/// if the required crop is not an integer.
std::int64_t crop_offset(const ComposedField& path_a,
                         const ComposedField& path_b);
std::int64_t crop_offset(std::span<const LayerField> path_a,
                         std::span<const LayerField> path_b);

struct CropOffset2d {
  std::int64_t h = 0;
  std::int64_t w = 0;
};

class Graph;

/// Receptive field measured operationally: the rectangle of input pixels
/// whose perturbation changes output pixel (out_i, out_j), plus the stride
/// measured from the neighbouring output pixels' field centers. Requires a
/// deterministic graph with perturbation-sensitive weights and an interior
/// probe pixel whose field does not clip the input border. Geometric
/// support centers equal the calculus offsets for integer-stride
/// (conv/pool) graphs; interpolating layers need response weighting on top.
struct ProbedField {
  std::int64_t top = 0, left = 0, bottom = -1, right = -1;  // inclusive
  Rational center_h{0}, center_w{0};
  Rational stride_h{1}, stride_w{1};
  std::int64_t height() const { return bottom - top + 1; }
  std::int64_t width() const { return right - left + 1; }
};

ProbedField probe_field(Graph& g, const Tensor& input, std::int64_t out_i,
                        std::int64_t out_j, double delta = 1.0);

}  // namespace fcn
