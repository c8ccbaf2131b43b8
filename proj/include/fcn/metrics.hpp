#pragma once

#include <cstdint>
#include <vector>

#include "fcn/tensor.hpp"

namespace fcn {

/// n_cl x n_cl counts n_ij: pixels of true class i predicted as class j.
/// Ignore-labeled pixels are never counted.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::int64_t n_cl);

  std::int64_t n_classes() const { return n_cl_; }
  std::int64_t& at(std::int64_t true_c, std::int64_t pred_c);
  std::int64_t at(std::int64_t true_c, std::int64_t pred_c) const;

  /// cm[truth[p]][pred[p]] += 1 for every non-ignore pixel.
  void accumulate(const LabelMap& predicted, const LabelMap& truth);

  ConfusionMatrix& operator+=(const ConfusionMatrix& other);

  std::int64_t total() const;
  /// t_i = sum_j n_ij
  std::int64_t row_total(std::int64_t i) const;
  std::int64_t col_total(std::int64_t j) const;

 private:
  std::int64_t n_cl_;
  std::vector<std::int64_t> counts_;
};

struct Metrics {
  double pixel_acc = 0.0;
  double mean_acc = 0.0;
  double mean_iu = 0.0;
  double fw_iu = 0.0;
};

/// The four evaluation formulas over confusion counts. Classes absent
/// from the truth are excluded from the mean accuracy and mean IU (only
/// classes actually present in the evaluated set are averaged), which
/// also covers the empty-union case. exclude_background drops class 0
/// from both means.
Metrics compute_metrics(const ConfusionMatrix& cm,
                        bool exclude_background = false);

/// Reduce a label map f-fold: each (clipped) f x f cell takes the mode of
/// its labels, excluding ignores, with ties to the lowest id. Cells that
/// are entirely ignore stay ignore.
LabelMap mode_downsample(const LabelMap& m, std::int64_t f);

/// Nearest-neighbour enlargement back to (out_h, out_w).
LabelMap nn_upsample(const LabelMap& m, std::int64_t f, std::int64_t out_h,
                     std::int64_t out_w);

/// Oracle mean IU obtainable at a given downsampling factor: reduce each
/// ground-truth map f-fold, enlarge it back, and score against the
/// original over the whole dataset.
double iu_upper_bound(const std::vector<LabelMap>& truth, std::int64_t factor,
                      std::int64_t n_cl);

}  // namespace fcn
