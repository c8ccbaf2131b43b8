#include "fcn/tensor.hpp"

#include <cmath>

namespace fcn {

LabelMap channel_argmax(const Tensor& x) {
  if (x.dims.c > 254)
    throw ShapeError("channel_argmax: too many channels for a label map");
  LabelMap out(x.dims.n, x.dims.h, x.dims.w);
  for (std::int64_t n = 0; n < x.dims.n; ++n)
    for (std::int64_t i = 0; i < x.dims.h; ++i)
      for (std::int64_t j = 0; j < x.dims.w; ++j) {
        std::int64_t best = 0;
        double best_v = x.at(n, 0, i, j);
        for (std::int64_t c = 1; c < x.dims.c; ++c) {
          const double v = x.at(n, c, i, j);
          if (v > best_v) {
            best_v = v;
            best = c;
          }
        }
        out.at(n, i, j) = static_cast<std::uint8_t>(best);
      }
  return out;
}

void check_finite(const Tensor& x, const char* what) {
  for (double v : x.data)
    if (!std::isfinite(v))
      throw Error(std::string(what) + ": non-finite value");
}

}  // namespace fcn
