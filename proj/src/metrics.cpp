#include "fcn/metrics.hpp"

namespace fcn {

ConfusionMatrix::ConfusionMatrix(std::int64_t n_cl) : n_cl_(n_cl) {
  if (n_cl < 1) throw InvalidParamError("confusion matrix: n_cl must be >= 1");
  counts_.assign(static_cast<std::size_t>(n_cl * n_cl), 0);
}

std::int64_t& ConfusionMatrix::at(std::int64_t i, std::int64_t j) {
  return counts_[static_cast<std::size_t>(i * n_cl_ + j)];
}

std::int64_t ConfusionMatrix::at(std::int64_t i, std::int64_t j) const {
  return counts_[static_cast<std::size_t>(i * n_cl_ + j)];
}

void ConfusionMatrix::accumulate(const LabelMap& predicted,
                                 const LabelMap& truth) {
  if (predicted.n != truth.n || predicted.h != truth.h ||
      predicted.w != truth.w)
    throw ShapeError("confusion: predicted/truth dims differ");
  for (std::size_t k = 0; k < truth.data.size(); ++k) {
    const std::uint8_t t = truth.data[k];
    if (t == kIgnoreLabel) continue;
    const std::uint8_t p = predicted.data[k];
    if (t >= n_cl_ || p >= n_cl_)
      throw InvalidLabelError("confusion: class id " +
                              std::to_string(std::max(t, p)) + " >= n_cl " +
                              std::to_string(n_cl_));
    ++at(t, p);
  }
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
  if (other.n_cl_ != n_cl_)
    throw ShapeError("confusion: class count mismatch");
  for (std::size_t k = 0; k < counts_.size(); ++k)
    counts_[k] += other.counts_[k];
  return *this;
}

std::int64_t ConfusionMatrix::total() const {
  std::int64_t s = 0;
  for (std::int64_t v : counts_) s += v;
  return s;
}

std::int64_t ConfusionMatrix::row_total(std::int64_t i) const {
  std::int64_t s = 0;
  for (std::int64_t j = 0; j < n_cl_; ++j) s += at(i, j);
  return s;
}

std::int64_t ConfusionMatrix::col_total(std::int64_t j) const {
  std::int64_t s = 0;
  for (std::int64_t i = 0; i < n_cl_; ++i) s += at(i, j);
  return s;
}

Metrics compute_metrics(const ConfusionMatrix& cm, bool exclude_background) {
  const std::int64_t n_cl = cm.n_classes();
  const std::int64_t total = cm.total();
  if (total == 0)
    throw InvalidParamError("compute_metrics: empty confusion matrix");

  Metrics m;
  std::int64_t diag = 0;
  for (std::int64_t i = 0; i < n_cl; ++i) diag += cm.at(i, i);
  m.pixel_acc = static_cast<double>(diag) / static_cast<double>(total);

  // classes absent from the truth are excluded from both means (only
  // classes actually present in the evaluated set are averaged)
  const std::int64_t first = exclude_background ? 1 : 0;
  std::int64_t present = 0;
  double acc_sum = 0.0, iu_sum = 0.0;
  for (std::int64_t i = first; i < n_cl; ++i) {
    const std::int64_t t_i = cm.row_total(i);
    if (t_i == 0) continue;
    const std::int64_t un = t_i + cm.col_total(i) - cm.at(i, i);
    acc_sum += static_cast<double>(cm.at(i, i)) / static_cast<double>(t_i);
    iu_sum += static_cast<double>(cm.at(i, i)) / static_cast<double>(un);
    ++present;
  }
  if (present == 0)
    throw InvalidParamError("compute_metrics: no classes present");
  m.mean_acc = acc_sum / static_cast<double>(present);
  m.mean_iu = iu_sum / static_cast<double>(present);
  // frequency weighting always spans all classes present in truth
  double fw_all = 0.0;
  std::int64_t t_all = 0;
  for (std::int64_t i = 0; i < n_cl; ++i) {
    const std::int64_t t_i = cm.row_total(i);
    if (t_i == 0) continue;
    const std::int64_t un = t_i + cm.col_total(i) - cm.at(i, i);
    fw_all += static_cast<double>(t_i) *
              static_cast<double>(cm.at(i, i)) / static_cast<double>(un);
    t_all += t_i;
  }
  m.fw_iu = fw_all / static_cast<double>(t_all);
  return m;
}

LabelMap mode_downsample(const LabelMap& m, std::int64_t f) {
  if (f < 1) throw InvalidParamError("mode_downsample: factor must be >= 1");
  if (f == 1) return m;
  const std::int64_t oh = (m.h + f - 1) / f;
  const std::int64_t ow = (m.w + f - 1) / f;
  LabelMap out(m.n, oh, ow, kIgnoreLabel);
  std::vector<std::int64_t> count(256, 0);
  for (std::int64_t n = 0; n < m.n; ++n)
    for (std::int64_t oi = 0; oi < oh; ++oi)
      for (std::int64_t oj = 0; oj < ow; ++oj) {
        std::fill(count.begin(), count.end(), 0);
        bool any = false;
        for (std::int64_t i = oi * f; i < std::min((oi + 1) * f, m.h); ++i)
          for (std::int64_t j = oj * f; j < std::min((oj + 1) * f, m.w); ++j) {
            const std::uint8_t v = m.at(n, i, j);
            if (v == kIgnoreLabel) continue;
            ++count[v];
            any = true;
          }
        if (!any) continue;  // all-ignore cell stays ignore
        std::int64_t best = 0;
        for (std::int64_t c = 1; c < 255; ++c)
          if (count[static_cast<std::size_t>(c)] >
              count[static_cast<std::size_t>(best)])
            best = c;  // lowest id wins ties
        out.at(n, oi, oj) = static_cast<std::uint8_t>(best);
      }
  return out;
}

LabelMap nn_upsample(const LabelMap& m, std::int64_t f, std::int64_t out_h,
                     std::int64_t out_w) {
  if (f < 1) throw InvalidParamError("nn_upsample: factor must be >= 1");
  LabelMap out(m.n, out_h, out_w);
  for (std::int64_t n = 0; n < m.n; ++n)
    for (std::int64_t i = 0; i < out_h; ++i)
      for (std::int64_t j = 0; j < out_w; ++j)
        out.at(n, i, j) = m.at(n, std::min(i / f, m.h - 1),
                               std::min(j / f, m.w - 1));
  return out;
}

double iu_upper_bound(const std::vector<LabelMap>& truth, std::int64_t factor,
                      std::int64_t n_cl) {
  if (factor < 1) throw InvalidParamError("iu_upper_bound: factor >= 1");
  ConfusionMatrix cm(n_cl);
  for (const LabelMap& t : truth) {
    LabelMap reduced = mode_downsample(t, factor);
    LabelMap restored = nn_upsample(reduced, factor, t.h, t.w);
    // all-ignore cells restore as ignore; their truth pixels are ignore
    // too, so the substitute value never reaches the confusion counts
    for (std::uint8_t& v : restored.data)
      if (v == kIgnoreLabel) v = 0;
    cm.accumulate(restored, t);
  }
  return compute_metrics(cm).mean_iu;
}

}  // namespace fcn
