#pragma once

#include <cstdint>
#include <vector>

#include "fcn/tensor.hpp"

namespace fcn {

/// Spatial losses are unnormalized sums over pixels so that every pixel has
/// the same weight; the normalize flag divides by the kept-pixel count for
/// diagnostics only.
struct LossConfig {
  enum Kind { kSoftmaxSum, kSigmoidCe };
  Kind kind = kSoftmaxSum;
  std::vector<double> class_weights;  // empty = uniform 1
  double sample_keep_p = 1.0;         // in (0, 1]
  bool normalize = false;
};

struct LossResult {
  double loss = 0.0;
  Tensor grad;              // d loss / d scores
  std::int64_t kept = 0;    // pixels contributing terms
};

/// Sum over non-ignored, non-sampled-out pixels of w[y] * (-log softmax_y);
/// log-sum-exp uses max subtraction. keep_mask (n,1,h,w), when given,
/// excludes zero cells from loss and gradient.
LossResult softmax_loss(const Tensor& scores, const LabelMap& labels,
                        const LossConfig& cfg,
                        const Tensor* keep_mask = nullptr);

/// Per-class binary maps from a label map: channel k corresponds to class
/// k + first_class. Ignored pixels are handled by the loss, not here.
Tensor binary_targets(const LabelMap& labels, std::int64_t n_channels,
                      std::int64_t first_class = 0);

/// Numerically stabilized binary cross-entropy on sigmoid scores, summed
/// over pixels and classes; each score is normalized independently.
/// first_class shifts the channel-to-class mapping (1 for nets with no
/// background channel).
LossResult sigmoid_ce_loss(const Tensor& scores, const LabelMap& labels,
                           const LossConfig& cfg, std::int64_t first_class = 0,
                           const Tensor* keep_mask = nullptr);

/// Inference with a null background model pinned at score zero: predict
/// background unless some class score exceeds zero, else the argmax class
/// (+1 channel shift). Identical to prepending a zero channel and taking
/// channel_argmax.
LabelMap null_background_infer(const Tensor& class_scores);

/// Independent Bernoulli(keep_p) mask over final-layer cells (n,1,h,w).
/// Callers preserve the effective batch size by scaling images per batch
/// by 1/keep_p.
Tensor sample_loss_mask(std::int64_t n, std::int64_t h, std::int64_t w,
                        double keep_p, std::uint64_t seed);

}  // namespace fcn
