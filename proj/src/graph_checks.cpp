#include "fcn/graph_checks.hpp"

#include <cmath>

#include "fcn/field.hpp"

namespace fcn {

namespace {

// composed (rf, stride) of a pad-free conv/pool/relu chain
std::pair<std::int64_t, std::int64_t> chain_geometry(const Graph& g) {
  std::vector<FieldDescriptor> descs;
  for (const Node& n : g.nodes()) {
    switch (n.op) {
      case OpKind::kInput:
      case OpKind::kRelu:
        break;
      case OpKind::kConv: {
        if (n.pad != 0)
          throw InvalidParamError(
              "patch equivalence requires pad-free layers");
        const Param& w = g.param(n.weight);
        if (w.value.dims.h != w.value.dims.w)
          throw InvalidParamError("patch equivalence: square kernels only");
        descs.push_back({w.value.dims.h, n.stride, 0, n.dilation});
        break;
      }
      case OpKind::kPool:
        if (n.pool.pad != 0)
          throw InvalidParamError(
              "patch equivalence requires pad-free layers");
        descs.push_back({n.pool.kernel, n.pool.stride, 0, n.pool.dilation});
        break;
      default:
        throw InvalidParamError(
            "patch equivalence requires a conv/pool/relu chain");
    }
  }
  const ComposedField f = chain(std::span<const FieldDescriptor>(descs));
  return {f.rf_size.to_integer(), f.eff_stride.to_integer()};
}

std::map<std::string, Tensor> grads_snapshot(const Graph& g) {
  std::map<std::string, Tensor> out;
  for (const std::string& name : g.param_names())
    out.emplace(name, g.param(name).grad);
  return out;
}

}  // namespace

PatchEquivalenceReport whole_image_equals_patch_batch(
    Graph& g, const Tensor& image, const LabelMap& output_labels,
    const LossConfig& loss_cfg) {
  const auto [rf, stride] = chain_geometry(g);

  // whole-image pass
  g.zero_grads();
  const Tensor scores = g.forward(image);
  if (scores.dims.h != output_labels.h || scores.dims.w != output_labels.w)
    throw ShapeError("patch equivalence: labels must live on the output grid");
  const LossResult whole = softmax_loss(scores, output_labels, loss_cfg);
  g.backward(whole.grad);
  const auto whole_grads = grads_snapshot(g);

  // independent per-receptive-field patch passes, gradients summed
  g.zero_grads();
  PatchEquivalenceReport rep;
  for (std::int64_t i = 0; i < scores.dims.h; ++i)
    for (std::int64_t j = 0; j < scores.dims.w; ++j) {
      const Tensor patch = crop(image, i * stride, j * stride, rf, rf);
      const Tensor patch_scores = g.forward(patch);
      if (patch_scores.dims.h != 1 || patch_scores.dims.w != 1)
        throw ShapeError("patch pass produced a non-1x1 output");
      LabelMap one(output_labels.n, 1, 1);
      for (std::int64_t n = 0; n < output_labels.n; ++n)
        one.at(n, 0, 0) = output_labels.at(n, i, j);
      const LossResult lr = softmax_loss(patch_scores, one, loss_cfg);
      g.backward(lr.grad);
      ++rep.patches;
    }
  const auto patch_grads = grads_snapshot(g);

  for (const auto& [name, wg] : whole_grads) {
    const Tensor& pg = patch_grads.at(name);
    double num = 0.0, den = 0.0;
    for (std::size_t k = 0; k < wg.data.size(); ++k) {
      num = std::max(num, std::abs(wg.data[k] - pg.data[k]));
      den = std::max(den, std::abs(wg.data[k]));
    }
    const double rel = den > 0.0 ? num / den : num;
    rep.per_param.emplace_back(name, rel);
    rep.max_rel_diff = std::max(rep.max_rel_diff, rel);
  }
  g.zero_grads();
  return rep;
}

}  // namespace fcn
