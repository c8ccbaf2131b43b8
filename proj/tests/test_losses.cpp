#include <cmath>

#include "doctest.h"
#include "fcn/graph.hpp"
#include "fcn/losses.hpp"
#include "fcn/rng.hpp"
#include "testutil.hpp"

using namespace fcn;

namespace {

// direct per-pixel oracle: materialize softmax probabilities with plain
// exp/sum and add the weighted negative log-likelihoods one pixel at a time
double softmax_oracle(const Tensor& s, const LabelMap& y,
                      const std::vector<double>& w) {
  double total = 0.0;
  for (std::int64_t n = 0; n < y.n; ++n)
    for (std::int64_t i = 0; i < y.h; ++i)
      for (std::int64_t j = 0; j < y.w; ++j) {
        const std::uint8_t cls = y.at(n, i, j);
        if (cls == kIgnoreLabel) continue;
        double z = 0.0;
        for (std::int64_t c = 0; c < s.dims.c; ++c)
          z += std::exp(s.at(n, c, i, j));
        const double p = std::exp(s.at(n, cls, i, j)) / z;
        total += (w.empty() ? 1.0 : w[cls]) * -std::log(p);
      }
  return total;
}

}  // namespace

TEST_CASE("softmax loss") {
  LossConfig cfg;

  SUBCASE("one pixel, two equal scores: ln 2 and +-0.5 gradient") {
    Tensor s({1, 2, 1, 1});
    LabelMap y(1, 1, 1);
    y.at(0, 0, 0) = 1;
    const LossResult r = softmax_loss(s, y, cfg);
    CHECK(r.loss == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    CHECK(r.grad.at(0, 0, 0, 0) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(r.grad.at(0, 1, 0, 0) == doctest::Approx(-0.5).epsilon(1e-15));
  }

  SUBCASE("all pixels ignored: zero loss, zero gradient") {
    Rng rng(1);
    const Tensor s = test::random_tensor({1, 3, 4, 4}, rng);
    LabelMap y(1, 4, 4, kIgnoreLabel);
    const LossResult r = softmax_loss(s, y, cfg);
    CHECK(r.loss == 0.0);
    CHECK(r.kept == 0);
    for (double v : r.grad.data) CHECK(v == 0.0);
  }

  SUBCASE("label out of range rejected") {
    Tensor s({1, 2, 1, 1});
    LabelMap y(1, 1, 1);
    y.at(0, 0, 0) = 2;
    CHECK_THROWS_AS(softmax_loss(s, y, cfg), InvalidLabelError);
  }

  SUBCASE("random case vs per-pixel oracle and finite differences") {
    Rng rng(2);
    Tensor s = test::random_tensor({1, 3, 4, 4}, rng);
    LabelMap y(1, 4, 4);
    for (auto& v : y.data)
      v = static_cast<std::uint8_t>(rng.uniform_int(0, 2));
    y.at(0, 1, 2) = kIgnoreLabel;
    const LossResult r = softmax_loss(s, y, cfg);
    CHECK(r.loss ==
          doctest::Approx(softmax_oracle(s, y, {})).epsilon(1e-12));
    auto loss = [&]() { return softmax_loss(s, y, cfg).loss; };
    CHECK(test::grad_check(s, r.grad, loss) < 1e-6);
  }

  SUBCASE("numerically extreme scores do not overflow") {
    Tensor s({1, 2, 1, 1});
    s.at(0, 0, 0, 0) = 1000.0;
    s.at(0, 1, 0, 0) = -1000.0;
    LabelMap y(1, 1, 1);
    const LossResult r = softmax_loss(s, y, cfg);
    CHECK(std::isfinite(r.loss));
    CHECK(r.loss < 1e-12);
  }

  SUBCASE("loss is additive over disjoint label regions, exactly") {
    Rng rng(3);
    const Tensor s = test::random_tensor({1, 3, 6, 6}, rng);
    LabelMap all(1, 6, 6);
    for (auto& v : all.data)
      v = static_cast<std::uint8_t>(rng.uniform_int(0, 2));
    LabelMap top(1, 6, 6, kIgnoreLabel), bottom(1, 6, 6, kIgnoreLabel);
    for (std::int64_t i = 0; i < 6; ++i)
      for (std::int64_t j = 0; j < 6; ++j)
        (i < 3 ? top : bottom).at(0, i, j) = all.at(0, i, j);
    const double whole = softmax_loss(s, all, cfg).loss;
    const double parts =
        softmax_loss(s, top, cfg).loss + softmax_loss(s, bottom, cfg).loss;
    CHECK(whole == parts);
  }

  SUBCASE("per-pixel score shifts leave loss and gradient unchanged") {
    Rng rng(4);
    Tensor s = test::random_tensor({1, 3, 5, 5}, rng);
    LabelMap y(1, 5, 5);
    for (auto& v : y.data)
      v = static_cast<std::uint8_t>(rng.uniform_int(0, 2));
    const LossResult a = softmax_loss(s, y, cfg);
    Tensor shifted = s;
    for (std::int64_t i = 0; i < 5; ++i)
      for (std::int64_t j = 0; j < 5; ++j) {
        const double c = rng.uniform(-3.0, 3.0);
        for (std::int64_t ch = 0; ch < 3; ++ch) shifted.at(0, ch, i, j) += c;
      }
    const LossResult b = softmax_loss(shifted, y, cfg);
    CHECK(std::abs(a.loss - b.loss) < 1e-11);
    CHECK(test::max_abs_diff(a.grad, b.grad) < 1e-12);
  }

  SUBCASE("uniform class weights scale loss and gradient exactly") {
    Rng rng(5);
    const Tensor s = test::random_tensor({1, 3, 4, 4}, rng);
    LabelMap y(1, 4, 4);
    for (auto& v : y.data)
      v = static_cast<std::uint8_t>(rng.uniform_int(0, 2));
    const LossResult base = softmax_loss(s, y, cfg);
    LossConfig weighted = cfg;
    weighted.class_weights = {2.0, 2.0, 2.0};
    const LossResult r = softmax_loss(s, y, weighted);
    CHECK(r.loss == doctest::Approx(2.0 * base.loss).epsilon(1e-15));
    for (std::size_t i = 0; i < r.grad.data.size(); ++i)
      CHECK(r.grad.data[i] == 2.0 * base.grad.data[i]);
  }

  SUBCASE("normalize flag divides by kept pixels") {
    Rng rng(6);
    const Tensor s = test::random_tensor({1, 2, 3, 3}, rng);
    LabelMap y(1, 3, 3, 0);
    LossConfig norm = cfg;
    norm.normalize = true;
    const LossResult a = softmax_loss(s, y, cfg);
    const LossResult b = softmax_loss(s, y, norm);
    CHECK(b.loss == doctest::Approx(a.loss / 9.0).epsilon(1e-15));
  }
}

TEST_CASE("sigmoid cross-entropy loss") {
  LossConfig cfg;
  cfg.kind = LossConfig::kSigmoidCe;

  SUBCASE("score 0 gives ln 2 per term") {
    Tensor s({1, 3, 1, 1});
    LabelMap y(1, 1, 1);
    y.at(0, 0, 0) = 1;
    const LossResult r = sigmoid_ce_loss(s, y, cfg);
    CHECK(r.loss == doctest::Approx(3.0 * std::log(2.0)).epsilon(1e-15));
  }

  SUBCASE("saturated correct score stays tiny without overflow") {
    Tensor s({1, 1, 1, 1});
    s.data[0] = 50.0;
    LabelMap y(1, 1, 1);
    y.at(0, 0, 0) = 0;
    const LossResult r = sigmoid_ce_loss(s, y, cfg);
    CHECK(std::isfinite(r.loss));
    CHECK(r.loss < 1e-20);
  }

  SUBCASE("finite differences") {
    Rng rng(7);
    Tensor s = test::random_tensor({1, 3, 3, 3}, rng);
    LabelMap y(1, 3, 3);
    for (auto& v : y.data)
      v = static_cast<std::uint8_t>(rng.uniform_int(0, 2));
    y.at(0, 2, 2) = kIgnoreLabel;
    const LossResult r = sigmoid_ce_loss(s, y, cfg);
    auto loss = [&]() { return sigmoid_ce_loss(s, y, cfg).loss; };
    CHECK(test::grad_check(s, r.grad, loss) < 1e-6);
  }

  SUBCASE("first_class=1 maps channels onto foreground classes") {
    Tensor s({1, 2, 1, 2});
    s.at(0, 0, 0, 0) = 30.0;   // class 1 present
    s.at(0, 1, 0, 0) = -30.0;
    s.at(0, 0, 0, 1) = -30.0;  // background pixel: all channels negative
    s.at(0, 1, 0, 1) = -30.0;
    LabelMap y(1, 1, 2);
    y.at(0, 0, 0) = 1;
    y.at(0, 0, 1) = 0;
    const LossResult r = sigmoid_ce_loss(s, y, cfg, 1);
    CHECK(r.loss < 1e-10);
  }
}

TEST_CASE("null background inference") {
  SUBCASE("all scores negative: all background") {
    Rng rng(8);
    const Tensor s = test::random_tensor({1, 3, 4, 4}, rng, -2.0, -0.1);
    const LabelMap m = null_background_infer(s);
    for (std::uint8_t v : m.data) CHECK(v == 0);
  }
  SUBCASE("a single positive score wins") {
    Tensor s({1, 3, 1, 1});
    s.at(0, 0, 0, 0) = -1.0;
    s.at(0, 1, 0, 0) = 1.0;
    s.at(0, 2, 0, 0) = -0.5;
    const LabelMap m = null_background_infer(s);
    CHECK(m.at(0, 0, 0) == 2);  // channel 1 is class 2
  }
  SUBCASE("equivalent to prepending a zero channel and channel_argmax") {
    Rng rng(9);
    const Tensor s = test::random_tensor({2, 4, 5, 5}, rng, -2.0, 2.0);
    Tensor padded({2, 5, 5, 5});
    for (std::int64_t n = 0; n < 2; ++n)
      for (std::int64_t c = 0; c < 4; ++c)
        for (std::int64_t i = 0; i < 5; ++i)
          for (std::int64_t j = 0; j < 5; ++j)
            padded.at(n, c + 1, i, j) = s.at(n, c, i, j);
    CHECK(null_background_infer(s) == channel_argmax(padded));
  }
}

TEST_CASE("loss sampling mask") {
  SUBCASE("keep_p = 1 keeps everything and matches the unsampled loss") {
    const Tensor m = sample_loss_mask(1, 4, 4, 1.0, 7);
    for (double v : m.data) CHECK(v == 1.0);
    Rng rng(10);
    const Tensor s = test::random_tensor({1, 2, 4, 4}, rng);
    LabelMap y(1, 4, 4, 1);
    LossConfig cfg;
    CHECK(softmax_loss(s, y, cfg, &m).loss == softmax_loss(s, y, cfg).loss);
  }
  SUBCASE("keep_p <= 0 rejected") {
    CHECK_THROWS_AS(sample_loss_mask(1, 2, 2, 0.0, 1), InvalidParamError);
  }
  SUBCASE("kept fraction within 1% over 1e5 draws") {
    const double keep = 0.35;
    std::int64_t kept = 0, total = 0;
    for (int t = 0; t < 100; ++t) {
      const Tensor m = sample_loss_mask(1, 32, 32, keep,
                                        static_cast<std::uint64_t>(t));
      for (double v : m.data) kept += v > 0.0 ? 1 : 0;
      total += m.numel();
    }
    CHECK(static_cast<double>(kept) / static_cast<double>(total) ==
          doctest::Approx(keep).epsilon(0.01));
  }
  SUBCASE("sampled-loss gradient is unbiased: E[grad] = keep_p * full grad") {
    Rng rng(11);
    const Tensor s = test::random_tensor({1, 2, 3, 3}, rng);
    LabelMap y(1, 3, 3);
    for (auto& v : y.data)
      v = static_cast<std::uint8_t>(rng.uniform_int(0, 1));
    LossConfig cfg;
    const Tensor full = softmax_loss(s, y, cfg).grad;
    const double keep = 0.5;
    const int trials = 10000;
    Tensor mean(full.dims);
    double sq_sum = 0.0;  // for a crude per-coordinate variance bound
    for (int t = 0; t < trials; ++t) {
      const Tensor m = sample_loss_mask(1, 3, 3, keep,
                                        static_cast<std::uint64_t>(t));
      const Tensor g = softmax_loss(s, y, cfg, &m).grad;
      for (std::size_t i = 0; i < g.data.size(); ++i) {
        mean.data[i] += g.data[i] / trials;
        sq_sum += g.data[i] * g.data[i];
      }
    }
    // each coordinate is a Bernoulli(keep) thinning of the full gradient:
    // sd of the mean = |full| * sqrt(keep (1-keep) / trials)
    for (std::size_t i = 0; i < full.data.size(); ++i) {
      const double expect = keep * full.data[i];
      const double se = std::abs(full.data[i]) *
                        std::sqrt(keep * (1 - keep) / trials);
      CHECK(std::abs(mean.data[i] - expect) <= 3.0 * se + 1e-12);
    }
    (void)sq_sum;
  }
}

TEST_CASE("ignored pixels never influence gradients through a net") {
  // perturbing input pixels that only feed ignored outputs leaves the
  // parameter gradient unchanged
  Rng rng(12);
  Graph g;
  int cur = g.add_input("data");
  g.add_conv_param("c", test::random_tensor({2, 1, 2, 2}, rng), {0.0, 0.0});
  cur = g.add_conv("c", cur, "c", 2, 0, 1);  // stride 2: disjoint fields
  g.set_output(cur);
  Tensor x = test::random_tensor({1, 1, 6, 6}, rng);
  LabelMap y(1, 3, 3, 0);
  y.at(0, 0, 0) = kIgnoreLabel;
  LossConfig cfg;

  auto param_grad = [&]() {
    g.zero_grads();
    const Tensor out = g.forward(x);
    const LossResult r = softmax_loss(out, y, cfg);
    g.backward(r.grad);
    return g.param("c.w").grad;
  };
  const Tensor before = param_grad();
  // the ignored output (0,0) sees exactly input pixels (0..1, 0..1)
  x.at(0, 0, 0, 0) += 10.0;
  x.at(0, 0, 1, 1) -= 5.0;
  const Tensor after = param_grad();
  CHECK(test::max_abs_diff(before, after) == 0.0);
}
