#include "fcn/field.hpp"

#include <cmath>

#include "fcn/graph.hpp"

namespace fcn {

ComposedField compose(const LayerField& outer, const ComposedField& inner) {
  ComposedField out;
  out.rf_size = inner.rf_size + (outer.extent - Rational(1)) * inner.eff_stride;
  out.eff_stride = inner.eff_stride * outer.stride;
  out.offset = inner.offset + outer.center * inner.eff_stride;
  return out;
}

ComposedField compose(const FieldDescriptor& outer, const ComposedField& inner) {
  return compose(LayerField::conv(outer), inner);
}

ComposedField chain(std::span<const FieldDescriptor> descriptors) {
  if (descriptors.empty())
    throw InvalidParamError("chain: empty descriptor list");
  ComposedField acc;
  for (const auto& d : descriptors) acc = compose(d, acc);
  return acc;
}

ComposedField chain(std::span<const LayerField> layers) {
  if (layers.empty()) throw InvalidParamError("chain: empty layer list");
  ComposedField acc;
  for (const auto& l : layers) acc = compose(l, acc);
  return acc;
}

std::int64_t crop_offset(const ComposedField& path_a,
                         const ComposedField& path_b) {
  if (!(path_a.eff_stride == path_b.eff_stride))
    throw AlignmentError("crop_offset: paths end at different strides (" +
                         path_a.eff_stride.str() + " vs " +
                         path_b.eff_stride.str() + ")");
  const Rational d = (path_a.offset - path_b.offset) / path_b.eff_stride;
  if (!d.is_integer())
    throw AlignmentError(
        "crop_offset: required crop " + d.str() +
        " is not an integer; padding choices are inconsistent");
  return d.to_integer();
}

std::int64_t crop_offset(std::span<const LayerField> path_a,
                         std::span<const LayerField> path_b) {
  return crop_offset(chain(path_a), chain(path_b));
}

ProbedField probe_field(Graph& g, const Tensor& input, std::int64_t out_i,
                        std::int64_t out_j, double delta) {
  const Tensor base = g.forward(input);
  if (out_i < 0 || out_i >= base.dims.h || out_j < 0 || out_j >= base.dims.w)
    throw InvalidParamError("probe_field: output pixel out of range");

  auto outputs_at = [&](const Tensor& out, std::int64_t i, std::int64_t j) {
    std::vector<double> v;
    v.reserve(static_cast<std::size_t>(out.dims.c));
    for (std::int64_t c = 0; c < out.dims.c; ++c)
      v.push_back(out.at(0, c, i, j));
    return v;
  };

  // perturb every input pixel (all channels at once) and record which
  // ones change the probed output
  auto measure = [&](std::int64_t oi, std::int64_t oj) {
    const std::vector<double> ref = outputs_at(base, oi, oj);
    ProbedField f;
    f.top = input.dims.h;
    f.left = input.dims.w;
    f.bottom = -1;
    f.right = -1;
    for (std::int64_t i = 0; i < input.dims.h; ++i)
      for (std::int64_t j = 0; j < input.dims.w; ++j) {
        Tensor probe = input;
        for (std::int64_t c = 0; c < input.dims.c; ++c)
          probe.at(0, c, i, j) += delta;
        const Tensor out = g.forward(probe);
        const std::vector<double> got = outputs_at(out, oi, oj);
        bool changed = false;
        for (std::size_t k = 0; k < got.size(); ++k)
          if (got[k] != ref[k]) {
            changed = true;
            break;
          }
        if (changed) {
          f.top = std::min(f.top, i);
          f.bottom = std::max(f.bottom, i);
          f.left = std::min(f.left, j);
          f.right = std::max(f.right, j);
        }
      }
    if (f.bottom < f.top)
      throw CalibrationError("probe_field: no input pixel affects the output; "
                             "weights are not perturbation-sensitive");
    f.center_h = Rational(f.top + f.bottom, 2);
    f.center_w = Rational(f.left + f.right, 2);
    return f;
  };

  ProbedField f = measure(out_i, out_j);
  // stride = displacement of adjacent output pixels' field centers
  if (out_i + 1 < base.dims.h) {
    const ProbedField fy = measure(out_i + 1, out_j);
    f.stride_h = fy.center_h - f.center_h;
  }
  if (out_j + 1 < base.dims.w) {
    const ProbedField fx = measure(out_i, out_j + 1);
    f.stride_w = fx.center_w - f.center_w;
  }
  g.forward(input);  // leave caches consistent with the unperturbed input
  return f;
}

}  // namespace fcn
