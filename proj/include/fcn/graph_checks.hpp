#pragma once

#include <string>
#include <vector>

#include "fcn/graph.hpp"
#include "fcn/losses.hpp"

namespace fcn {

/// Comparison of one whole-image pass against independent per-receptive-
/// field patch passes (the loss-decomposition identity: summing per-pixel
/// losses makes whole-image SGD identical to patch-minibatch SGD).
struct PatchEquivalenceReport {
  double max_rel_diff = 0.0;
  std::vector<std::pair<std::string, double>> per_param;
  std::int64_t patches = 0;
  bool within(double tol) const { return max_rel_diff <= tol; }
};

/// Requires a pad-free chain of conv/pool/relu nodes (so each output pixel
/// is exactly the net applied to an input patch) and labels given on the
/// output grid.
PatchEquivalenceReport whole_image_equals_patch_batch(
    Graph& g, const Tensor& image, const LabelMap& output_labels,
    const LossConfig& loss_cfg);

}  // namespace fcn
