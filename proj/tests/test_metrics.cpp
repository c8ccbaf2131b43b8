#include <map>

#include "doctest.h"
#include "fcn/metrics.hpp"
#include "fcn/rng.hpp"
#include "testutil.hpp"

using namespace fcn;

namespace {

LabelMap random_labels(Rng& rng, std::int64_t h, std::int64_t w,
                       std::int64_t n_cl, double ignore_p = 0.0) {
  LabelMap m(1, h, w);
  for (auto& v : m.data)
    v = rng.bernoulli(ignore_p)
            ? kIgnoreLabel
            : static_cast<std::uint8_t>(rng.uniform_int(0, n_cl - 1));
  return m;
}

}  // namespace

TEST_CASE("confusion accumulation") {
  SUBCASE("perfect prediction is diagonal") {
    Rng rng(1);
    const LabelMap t = random_labels(rng, 6, 6, 3);
    ConfusionMatrix cm(3);
    cm.accumulate(t, t);
    for (std::int64_t i = 0; i < 3; ++i)
      for (std::int64_t j = 0; j < 3; ++j)
        if (i != j) CHECK(cm.at(i, j) == 0);
    CHECK(cm.total() == 36);
  }
  SUBCASE("all-ignore truth leaves the matrix unchanged") {
    Rng rng(2);
    const LabelMap p = random_labels(rng, 4, 4, 3);
    LabelMap t(1, 4, 4, kIgnoreLabel);
    ConfusionMatrix cm(3);
    cm.accumulate(p, t);
    CHECK(cm.total() == 0);
  }
  SUBCASE("class id past n_cl rejected") {
    LabelMap p(1, 1, 1, 5);
    LabelMap t(1, 1, 1, 0);
    ConfusionMatrix cm(3);
    CHECK_THROWS_AS(cm.accumulate(p, t), InvalidLabelError);
  }
  SUBCASE("random maps match a per-pixel counting oracle") {
    for (int trial = 0; trial < 100; ++trial) {
      Rng rng(100 + trial);
      const LabelMap p = random_labels(rng, 5, 7, 4);
      const LabelMap t = random_labels(rng, 5, 7, 4, 0.2);
      ConfusionMatrix cm(4);
      cm.accumulate(p, t);
      std::map<std::pair<int, int>, std::int64_t> oracle;
      for (std::size_t k = 0; k < t.data.size(); ++k)
        if (t.data[k] != kIgnoreLabel) ++oracle[{t.data[k], p.data[k]}];
      for (std::int64_t i = 0; i < 4; ++i)
        for (std::int64_t j = 0; j < 4; ++j) {
          const auto it = oracle.find({static_cast<int>(i),
                                       static_cast<int>(j)});
          CHECK(cm.at(i, j) == (it == oracle.end() ? 0 : it->second));
        }
    }
  }
  SUBCASE("accumulation is additive over disjoint pixel sets") {
    Rng rng(3);
    const LabelMap p = random_labels(rng, 6, 6, 3);
    const LabelMap t = random_labels(rng, 6, 6, 3);
    LabelMap t_top(1, 6, 6, kIgnoreLabel), t_bot(1, 6, 6, kIgnoreLabel);
    for (std::int64_t i = 0; i < 6; ++i)
      for (std::int64_t j = 0; j < 6; ++j)
        (i < 2 ? t_top : t_bot).at(0, i, j) = t.at(0, i, j);
    ConfusionMatrix whole(3), parts(3), bottom(3);
    whole.accumulate(p, t);
    parts.accumulate(p, t_top);
    bottom.accumulate(p, t_bot);
    parts += bottom;
    for (std::int64_t i = 0; i < 3; ++i)
      for (std::int64_t j = 0; j < 3; ++j)
        CHECK(whole.at(i, j) == parts.at(i, j));
  }
}

TEST_CASE("the four metric formulas") {
  SUBCASE("diagonal matrix scores 1.0 on all four") {
    ConfusionMatrix cm(3);
    cm.at(0, 0) = 5;
    cm.at(1, 1) = 2;
    cm.at(2, 2) = 9;
    const Metrics m = compute_metrics(cm);
    CHECK(m.pixel_acc == 1.0);
    CHECK(m.mean_acc == 1.0);
    CHECK(m.mean_iu == 1.0);
    CHECK(m.fw_iu == 1.0);
  }
  SUBCASE("hand-computed values for [[3,1],[2,4]]") {
    ConfusionMatrix cm(2);
    cm.at(0, 0) = 3;
    cm.at(0, 1) = 1;
    cm.at(1, 0) = 2;
    cm.at(1, 1) = 4;
    const Metrics m = compute_metrics(cm);
    CHECK(m.pixel_acc == doctest::Approx(0.7).epsilon(1e-12));
    CHECK(m.mean_acc == doctest::Approx(17.0 / 24.0).epsilon(1e-12));
    CHECK(m.mean_iu == doctest::Approx(0.5 * (0.5 + 4.0 / 7.0)).epsilon(1e-12));
    CHECK(m.fw_iu ==
          doctest::Approx((4.0 * 0.5 + 6.0 * 4.0 / 7.0) / 10.0).epsilon(1e-12));
  }
  SUBCASE("single-class data collapses the formulas") {
    ConfusionMatrix cm(3);
    cm.at(1, 1) = 7;
    cm.at(1, 0) = 3;
    const Metrics m = compute_metrics(cm);
    CHECK(m.pixel_acc == m.mean_acc);
    CHECK(m.mean_iu == doctest::Approx(m.fw_iu).epsilon(1e-12));
    CHECK(m.mean_iu == doctest::Approx(0.7).epsilon(1e-12));
  }
  SUBCASE("empty matrix rejected") {
    ConfusionMatrix cm(2);
    CHECK_THROWS_AS(compute_metrics(cm), InvalidParamError);
  }
  SUBCASE("exclude_background drops class 0 from the means") {
    ConfusionMatrix cm(2);
    cm.at(0, 0) = 8;
    cm.at(0, 1) = 2;
    cm.at(1, 0) = 1;
    cm.at(1, 1) = 3;
    const Metrics m = compute_metrics(cm, true);
    CHECK(m.mean_acc == doctest::Approx(3.0 / 4.0).epsilon(1e-12));
    CHECK(m.mean_iu == doctest::Approx(3.0 / 6.0).epsilon(1e-12));
  }
  SUBCASE("class permutations leave pixel accuracy invariant") {
    Rng rng(4);
    const LabelMap p = random_labels(rng, 8, 8, 3);
    const LabelMap t = random_labels(rng, 8, 8, 3);
    ConfusionMatrix cm(3);
    cm.accumulate(p, t);
    const Metrics base = compute_metrics(cm);
    const std::uint8_t perm[3] = {2, 0, 1};
    LabelMap pp = p, tp = t;
    for (auto& v : pp.data) v = perm[v];
    for (auto& v : tp.data) v = perm[v];
    ConfusionMatrix cm2(3);
    cm2.accumulate(pp, tp);
    const Metrics permuted = compute_metrics(cm2);
    CHECK(base.pixel_acc == permuted.pixel_acc);
    CHECK(base.mean_iu == doctest::Approx(permuted.mean_iu).epsilon(1e-12));
  }
  SUBCASE("fw_iu lies between the per-class IU extremes") {
    Rng rng(5);
    for (int t = 0; t < 10; ++t) {
      ConfusionMatrix cm(3);
      for (std::int64_t i = 0; i < 3; ++i)
        for (std::int64_t j = 0; j < 3; ++j)
          cm.at(i, j) = rng.uniform_int(1, 30);
      double lo = 1.0, hi = 0.0;
      for (std::int64_t i = 0; i < 3; ++i) {
        const double iu =
            static_cast<double>(cm.at(i, i)) /
            static_cast<double>(cm.row_total(i) + cm.col_total(i) -
                                cm.at(i, i));
        lo = std::min(lo, iu);
        hi = std::max(hi, iu);
      }
      const Metrics m = compute_metrics(cm);
      CHECK(m.fw_iu >= lo - 1e-12);
      CHECK(m.fw_iu <= hi + 1e-12);
    }
  }
}

TEST_CASE("IU upper bound oracle") {
  Rng rng(6);
  std::vector<LabelMap> set;
  for (int i = 0; i < 12; ++i) {
    LabelMap m(1, 24, 24, 0);
    // blobby labels so downsampling actually loses detail
    for (int b = 0; b < 4; ++b) {
      const std::int64_t ci = rng.uniform_int(3, 20);
      const std::int64_t cj = rng.uniform_int(3, 20);
      const std::int64_t r = rng.uniform_int(2, 5);
      const std::uint8_t cls =
          static_cast<std::uint8_t>(rng.uniform_int(1, 4));
      for (std::int64_t y = 0; y < 24; ++y)
        for (std::int64_t x = 0; x < 24; ++x)
          if ((y - ci) * (y - ci) + (x - cj) * (x - cj) <= r * r)
            m.at(0, y, x) = cls;
    }
    set.push_back(m);
  }

  SUBCASE("factor 1 is exactly 1.0") {
    CHECK(iu_upper_bound(set, 1, 5) == 1.0);
  }
  SUBCASE("bound is non-increasing in the factor") {
    double prev = 2.0;
    for (std::int64_t f : {1, 2, 4, 8, 16}) {
      const double b = iu_upper_bound(set, f, 5);
      CHECK(b <= prev + 1e-12);
      prev = b;
    }
  }
  SUBCASE("mode downsampling breaks ties toward the lowest id") {
    LabelMap m(1, 2, 2);
    m.at(0, 0, 0) = 3;
    m.at(0, 0, 1) = 1;
    m.at(0, 1, 0) = 1;
    m.at(0, 1, 1) = 3;
    const LabelMap d = mode_downsample(m, 2);
    CHECK(d.h == 1);
    CHECK(d.at(0, 0, 0) == 1);
  }
  SUBCASE("ignore pixels are excluded from the mode") {
    LabelMap m(1, 2, 2, kIgnoreLabel);
    m.at(0, 1, 1) = 4;
    const LabelMap d = mode_downsample(m, 2);
    CHECK(d.at(0, 0, 0) == 4);
    LabelMap all_ignore(1, 2, 2, kIgnoreLabel);
    CHECK(mode_downsample(all_ignore, 2).at(0, 0, 0) == kIgnoreLabel);
  }
}
