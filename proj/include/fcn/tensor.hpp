#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fcn/errors.hpp"

namespace fcn {

/// Fixed (n, c, h, w) layout; strides are always derived from dims.
struct Shape4 {
  std::int64_t n = 1, c = 1, h = 1, w = 1;

  friend bool operator==(const Shape4&, const Shape4&) = default;

  std::int64_t numel() const { return n * c * h * w; }

  std::string str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," +
           std::to_string(h) + "," + std::to_string(w) + ")";
  }
};

namespace detail {
inline void check_shape(const Shape4& d) {
  if (d.n < 1 || d.c < 1 || d.h < 1 || d.w < 1)
    throw ShapeError("invalid shape " + d.str() + ": all dims must be >= 1");
  // overflow check on the element count
  constexpr std::int64_t kMax = (std::int64_t{1} << 62) / 8;
  std::int64_t p = 1;
  for (std::int64_t d_i : {d.n, d.c, d.h, d.w}) {
    if (d_i > kMax / p) throw ShapeError("shape " + d.str() + " overflows");
    p *= d_i;
  }
}
}  // namespace detail

/// Dense row-major (n, c, h, w) array. Wide precision (double) is the
/// default everywhere; the float instantiation is an opt-in fast path for
/// the elementwise/convolution primitives.
template <typename T>
struct BasicTensor {
  Shape4 dims;
  std::vector<T> data;

  BasicTensor() = default;

  explicit BasicTensor(const Shape4& d, T fill = T{0}) : dims(d) {
    detail::check_shape(d);
    data.assign(static_cast<std::size_t>(d.numel()), fill);
  }

  std::int64_t numel() const { return dims.numel(); }

  std::int64_t index(std::int64_t n, std::int64_t c, std::int64_t i,
                     std::int64_t j) const {
    return ((n * dims.c + c) * dims.h + i) * dims.w + j;
  }

  T& at(std::int64_t n, std::int64_t c, std::int64_t i, std::int64_t j) {
    return data[static_cast<std::size_t>(index(n, c, i, j))];
  }
  T at(std::int64_t n, std::int64_t c, std::int64_t i, std::int64_t j) const {
    return data[static_cast<std::size_t>(index(n, c, i, j))];
  }
};

using Tensor = BasicTensor<double>;
using TensorF = BasicTensor<float>;

/// Integer label maps (n, h, w). Values are class ids < n_cl or kIgnoreLabel.
inline constexpr std::uint8_t kIgnoreLabel = 255;

struct LabelMap {
  std::int64_t n = 1, h = 1, w = 1;
  std::vector<std::uint8_t> data;

  LabelMap() = default;
  LabelMap(std::int64_t n_, std::int64_t h_, std::int64_t w_,
           std::uint8_t fill = 0)
      : n(n_), h(h_), w(w_) {
    if (n < 1 || h < 1 || w < 1) throw ShapeError("invalid label map dims");
    data.assign(static_cast<std::size_t>(n * h * w), fill);
  }

  std::int64_t numel() const { return n * h * w; }

  std::uint8_t& at(std::int64_t n_, std::int64_t i, std::int64_t j) {
    return data[static_cast<std::size_t>((n_ * h + i) * w + j)];
  }
  std::uint8_t at(std::int64_t n_, std::int64_t i, std::int64_t j) const {
    return data[static_cast<std::size_t>((n_ * h + i) * w + j)];
  }

  friend bool operator==(const LabelMap&, const LabelMap&) = default;
};

// ---- tensor-core operations -------------------------------------------

/// New tensor with every element set to value.
template <typename T>
BasicTensor<T> new_filled(const Shape4& dims, T value) {
  return BasicTensor<T>(dims, value);
}

inline Tensor new_filled(const Shape4& dims, double value) {
  return Tensor(dims, value);
}

template <typename T>
BasicTensor<T> elementwise_add(const BasicTensor<T>& a,
                               const BasicTensor<T>& b) {
  if (!(a.dims == b.dims))
    throw ShapeError("elementwise_add: dims " + a.dims.str() + " vs " +
                     b.dims.str());
  BasicTensor<T> out(a.dims);
  for (std::size_t i = 0; i < a.data.size(); ++i)
    out.data[i] = a.data[i] + b.data[i];
  return out;
}

/// out[n,c,i,j] = x[n,c,i+offset_h,j+offset_w] over an out_h x out_w window.
template <typename T>
BasicTensor<T> crop(const BasicTensor<T>& x, std::int64_t offset_h,
                    std::int64_t offset_w, std::int64_t out_h,
                    std::int64_t out_w) {
  if (offset_h < 0 || offset_w < 0 || out_h < 1 || out_w < 1 ||
      offset_h + out_h > x.dims.h || offset_w + out_w > x.dims.w)
    throw ShapeError("crop: window (" + std::to_string(offset_h) + "," +
                     std::to_string(offset_w) + ")+" + std::to_string(out_h) +
                     "x" + std::to_string(out_w) + " out of bounds for " +
                     x.dims.str());
  BasicTensor<T> out({x.dims.n, x.dims.c, out_h, out_w});
  for (std::int64_t n = 0; n < x.dims.n; ++n)
    for (std::int64_t c = 0; c < x.dims.c; ++c)
      for (std::int64_t i = 0; i < out_h; ++i)
        for (std::int64_t j = 0; j < out_w; ++j)
          out.at(n, c, i, j) = x.at(n, c, i + offset_h, j + offset_w);
  return out;
}

/// Per-pixel argmax over channels; ties resolve to the lowest index.
LabelMap channel_argmax(const Tensor& x);

/// Throws if any element is non-finite.
void check_finite(const Tensor& x, const char* what);

}  // namespace fcn
