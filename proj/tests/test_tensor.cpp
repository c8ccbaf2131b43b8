#include "doctest.h"
#include "fcn/rng.hpp"
#include "fcn/tensor.hpp"
#include "testutil.hpp"

using namespace fcn;

TEST_CASE("new_filled fills and validates") {
  const Tensor z = new_filled({1, 1, 2, 2}, 0.0);
  CHECK(z.numel() == 4);
  for (double v : z.data) CHECK(v == 0.0);

  const Tensor t = new_filled({1, 3, 1, 1}, 1.5);
  CHECK(t.numel() == 3);
  for (double v : t.data) CHECK(v == 1.5);

  CHECK_THROWS_AS(new_filled({1, 1, 0, 1}, 0.0), ShapeError);
  CHECK_THROWS_AS(new_filled({1, std::int64_t{1} << 40, 1,
                              std::int64_t{1} << 40},
                             0.0),
                  ShapeError);
}

TEST_CASE("elementwise_add contracts") {
  Rng rng(7);
  const Tensor a = test::random_tensor({2, 3, 4, 5}, rng);
  const Tensor zeros = new_filled(a.dims, 0.0);
  CHECK(test::max_abs_diff(elementwise_add(a, zeros), a) == 0.0);

  const Tensor doubled = elementwise_add(a, a);
  for (std::size_t i = 0; i < a.data.size(); ++i)
    CHECK(doubled.data[i] == 2.0 * a.data[i]);

  CHECK_THROWS_AS(elementwise_add(a, new_filled({2, 3, 4, 4}, 0.0)),
                  ShapeError);
}

TEST_CASE("elementwise_add is commutative and associative on integers") {
  Rng rng(8);
  Tensor a({1, 2, 3, 3}), b(a.dims), c(a.dims);
  for (auto* t : {&a, &b, &c})
    for (double& v : t->data)
      v = static_cast<double>(rng.uniform_int(-50, 50));
  CHECK(test::max_abs_diff(elementwise_add(a, b), elementwise_add(b, a)) ==
        0.0);
  CHECK(test::max_abs_diff(elementwise_add(elementwise_add(a, b), c),
                           elementwise_add(a, elementwise_add(b, c))) == 0.0);
}

TEST_CASE("crop windows and round-trips") {
  Tensor ramp({1, 1, 4, 4});
  for (std::int64_t i = 0; i < 16; ++i)
    ramp.data[static_cast<std::size_t>(i)] = static_cast<double>(i);

  SUBCASE("identity crop is bitwise identical") {
    const Tensor same = crop(ramp, 0, 0, 4, 4);
    CHECK(same.data == ramp.data);
  }
  SUBCASE("central block, index arithmetic oracle") {
    const Tensor mid = crop(ramp, 1, 1, 2, 2);
    // oracle: value at (i,j) of a row-major ramp is 4*(i+1) + (j+1)
    CHECK(mid.at(0, 0, 0, 0) == 5.0);
    CHECK(mid.at(0, 0, 0, 1) == 6.0);
    CHECK(mid.at(0, 0, 1, 0) == 9.0);
    CHECK(mid.at(0, 0, 1, 1) == 10.0);
  }
  SUBCASE("out-of-bounds crop") {
    CHECK_THROWS_AS(crop(ramp, 3, 0, 4, 4), ShapeError);
  }
}

TEST_CASE("channel_argmax picks lowest index on ties") {
  SUBCASE("one-hot channels") {
    Tensor x({1, 3, 2, 2});
    LabelMap expect(1, 2, 2);
    Rng rng(9);
    for (std::int64_t i = 0; i < 2; ++i)
      for (std::int64_t j = 0; j < 2; ++j) {
        const std::int64_t hot = rng.uniform_int(0, 2);
        x.at(0, hot, i, j) = 1.0;
        expect.at(0, i, j) = static_cast<std::uint8_t>(hot);
      }
    CHECK(channel_argmax(x) == expect);
  }
  SUBCASE("all-equal channels give index 0") {
    const Tensor x = new_filled({1, 4, 3, 3}, 0.25);
    const LabelMap m = channel_argmax(x);
    for (std::uint8_t v : m.data) CHECK(v == 0);
  }
  SUBCASE("random map vs per-pixel scan oracle") {
    Rng rng(10);
    const Tensor x = test::random_tensor({2, 3, 5, 4}, rng);
    const LabelMap m = channel_argmax(x);
    for (std::int64_t n = 0; n < 2; ++n)
      for (std::int64_t i = 0; i < 5; ++i)
        for (std::int64_t j = 0; j < 4; ++j) {
          std::int64_t best = 0;
          for (std::int64_t c = 0; c < 3; ++c)
            if (x.at(n, c, i, j) > x.at(n, best, i, j)) best = c;
          CHECK(m.at(n, i, j) == best);
        }
  }
  SUBCASE("invariant under per-pixel constant shifts") {
    Rng rng(11);
    const Tensor x = test::random_tensor({1, 4, 6, 6}, rng);
    Tensor shifted = x;
    for (std::int64_t i = 0; i < 6; ++i)
      for (std::int64_t j = 0; j < 6; ++j) {
        const double c = rng.uniform(-5.0, 5.0);
        for (std::int64_t ch = 0; ch < 4; ++ch) shifted.at(0, ch, i, j) += c;
      }
    CHECK(channel_argmax(x) == channel_argmax(shifted));
  }
}
