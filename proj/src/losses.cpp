#include "fcn/losses.hpp"

#include <cmath>

#include "fcn/rng.hpp"

namespace fcn {

namespace {

double class_weight(const LossConfig& cfg, std::int64_t cls) {
  if (cfg.class_weights.empty()) return 1.0;
  if (cls >= static_cast<std::int64_t>(cfg.class_weights.size()))
    throw InvalidLabelError("class weight missing for class " +
                            std::to_string(cls));
  return cfg.class_weights[static_cast<std::size_t>(cls)];
}

void check_label_dims(const Tensor& scores, const LabelMap& labels) {
  if (scores.dims.n != labels.n || scores.dims.h != labels.h ||
      scores.dims.w != labels.w)
    throw ShapeError("loss: scores " + scores.dims.str() +
                     " vs labels (" + std::to_string(labels.n) + "," +
                     std::to_string(labels.h) + "," + std::to_string(labels.w) +
                     ")");
}

void check_mask_dims(const Tensor& scores, const Tensor* mask) {
  if (!mask) return;
  if (!(mask->dims == Shape4{scores.dims.n, 1, scores.dims.h, scores.dims.w}))
    throw ShapeError("loss: keep mask dims " + mask->dims.str());
}

double stable_sigmoid(double s) {
  if (s >= 0.0) return 1.0 / (1.0 + std::exp(-s));
  const double e = std::exp(s);
  return e / (1.0 + e);
}

}  // namespace

LossResult softmax_loss(const Tensor& scores, const LabelMap& labels,
                        const LossConfig& cfg, const Tensor* keep_mask) {
  check_label_dims(scores, labels);
  check_mask_dims(scores, keep_mask);
  const std::int64_t n_cl = scores.dims.c;
  LossResult r;
  r.grad = Tensor(scores.dims);
  for (std::int64_t n = 0; n < labels.n; ++n)
    for (std::int64_t i = 0; i < labels.h; ++i)
      for (std::int64_t j = 0; j < labels.w; ++j) {
        const std::uint8_t y = labels.at(n, i, j);
        if (y == kIgnoreLabel) continue;
        if (y >= n_cl)
          throw InvalidLabelError("label " + std::to_string(y) +
                                  " >= class count " + std::to_string(n_cl));
        if (keep_mask && keep_mask->at(n, 0, i, j) == 0.0) continue;
        const double w = class_weight(cfg, y);
        double m = scores.at(n, 0, i, j);
        for (std::int64_t c = 1; c < n_cl; ++c)
          m = std::max(m, scores.at(n, c, i, j));
        double z = 0.0;
        for (std::int64_t c = 0; c < n_cl; ++c)
          z += std::exp(scores.at(n, c, i, j) - m);
        const double lse = m + std::log(z);
        r.loss += w * (lse - scores.at(n, y, i, j));
        for (std::int64_t c = 0; c < n_cl; ++c) {
          const double p = std::exp(scores.at(n, c, i, j) - lse);
          r.grad.at(n, c, i, j) = w * (p - (c == y ? 1.0 : 0.0));
        }
        ++r.kept;
      }
  if (cfg.normalize && r.kept > 0) {
    const double inv = 1.0 / static_cast<double>(r.kept);
    r.loss *= inv;
    for (double& g : r.grad.data) g *= inv;
  }
  return r;
}

Tensor binary_targets(const LabelMap& labels, std::int64_t n_channels,
                      std::int64_t first_class) {
  Tensor t({labels.n, n_channels, labels.h, labels.w});
  for (std::int64_t n = 0; n < labels.n; ++n)
    for (std::int64_t i = 0; i < labels.h; ++i)
      for (std::int64_t j = 0; j < labels.w; ++j) {
        const std::uint8_t y = labels.at(n, i, j);
        if (y == kIgnoreLabel) continue;
        const std::int64_t ch = static_cast<std::int64_t>(y) - first_class;
        if (ch >= 0 && ch < n_channels) t.at(n, ch, i, j) = 1.0;
      }
  return t;
}

LossResult sigmoid_ce_loss(const Tensor& scores, const LabelMap& labels,
                           const LossConfig& cfg, std::int64_t first_class,
                           const Tensor* keep_mask) {
  check_label_dims(scores, labels);
  check_mask_dims(scores, keep_mask);
  const std::int64_t n_ch = scores.dims.c;
  LossResult r;
  r.grad = Tensor(scores.dims);
  for (std::int64_t n = 0; n < labels.n; ++n)
    for (std::int64_t i = 0; i < labels.h; ++i)
      for (std::int64_t j = 0; j < labels.w; ++j) {
        const std::uint8_t y = labels.at(n, i, j);
        if (y == kIgnoreLabel) continue;
        if (static_cast<std::int64_t>(y) >= n_ch + first_class)
          throw InvalidLabelError("label " + std::to_string(y) +
                                  " >= class count " +
                                  std::to_string(n_ch + first_class));
        if (keep_mask && keep_mask->at(n, 0, i, j) == 0.0) continue;
        for (std::int64_t c = 0; c < n_ch; ++c) {
          const double s = scores.at(n, c, i, j);
          const double t =
              (static_cast<std::int64_t>(y) == c + first_class) ? 1.0 : 0.0;
          const double w = class_weight(cfg, c + first_class);
          // max(s,0) - s t + log(1 + exp(-|s|))
          r.loss += w * (std::max(s, 0.0) - s * t +
                         std::log1p(std::exp(-std::abs(s))));
          r.grad.at(n, c, i, j) = w * (stable_sigmoid(s) - t);
        }
        ++r.kept;
      }
  if (cfg.normalize && r.kept > 0) {
    const double inv = 1.0 / static_cast<double>(r.kept);
    r.loss *= inv;
    for (double& g : r.grad.data) g *= inv;
  }
  return r;
}

LabelMap null_background_infer(const Tensor& class_scores) {
  if (class_scores.dims.c > 253)
    throw ShapeError("null_background_infer: too many classes");
  LabelMap out(class_scores.dims.n, class_scores.dims.h, class_scores.dims.w);
  for (std::int64_t n = 0; n < class_scores.dims.n; ++n)
    for (std::int64_t i = 0; i < class_scores.dims.h; ++i)
      for (std::int64_t j = 0; j < class_scores.dims.w; ++j) {
        double best = 0.0;  // the null background's constant score
        std::int64_t best_cls = 0;
        for (std::int64_t c = 0; c < class_scores.dims.c; ++c) {
          const double v = class_scores.at(n, c, i, j);
          if (v > best) {
            best = v;
            best_cls = c + 1;
          }
        }
        out.at(n, i, j) = static_cast<std::uint8_t>(best_cls);
      }
  return out;
}

Tensor sample_loss_mask(std::int64_t n, std::int64_t h, std::int64_t w,
                        double keep_p, std::uint64_t seed) {
  if (!(keep_p > 0.0) || keep_p > 1.0)
    throw InvalidParamError("sample_loss_mask: keep_p must be in (0, 1]");
  Tensor mask({n, 1, h, w});
  if (keep_p == 1.0) {
    std::fill(mask.data.begin(), mask.data.end(), 1.0);
    return mask;
  }
  Rng rng(seed);
  for (double& v : mask.data) v = rng.bernoulli(keep_p) ? 1.0 : 0.0;
  return mask;
}

}  // namespace fcn
