#include <cmath>

#include "doctest.h"
#include "fcn/optim.hpp"
#include "fcn/rng.hpp"
#include "testutil.hpp"

using namespace fcn;

TEST_CASE("sgd momentum step") {
  SUBCASE("p=0, lambda=0 is plain gradient descent") {
    Tensor theta({1, 1, 1, 2});
    theta.data = {1.0, -2.0};
    Tensor grad({1, 1, 1, 2});
    grad.data = {0.5, -0.25};
    Tensor vel({1, 1, 1, 2});
    sgd_momentum_step(theta, grad, vel, 0.1, 0.0, 0.0);
    CHECK(theta.data[0] == doctest::Approx(1.0 - 0.05).epsilon(1e-15));
    CHECK(theta.data[1] == doctest::Approx(-2.0 + 0.025).epsilon(1e-15));
  }
  SUBCASE("zero gradient with nonzero velocity drifts by p * velocity") {
    Tensor theta({1, 1, 1, 1});
    theta.data = {3.0};
    Tensor vel({1, 1, 1, 1});
    vel.data = {0.4};
    sgd_momentum_step(theta, new_filled({1, 1, 1, 1}, 0.0), vel, 0.1, 0.9,
                      0.0);
    CHECK(vel.data[0] == doctest::Approx(0.36).epsilon(1e-15));
    CHECK(theta.data[0] == doctest::Approx(3.36).epsilon(1e-15));
  }
  SUBCASE("three scripted steps match the hand-unrolled recurrence") {
    const double eta = 0.05, p = 0.8, lambda = 0.01;
    Tensor theta({1, 1, 1, 1});
    theta.data = {2.0};
    Tensor vel({1, 1, 1, 1});
    const double grads[3] = {1.0, -0.5, 0.25};
    double t_ref = 2.0, v_ref = 0.0;
    for (double gval : grads) {
      Tensor g({1, 1, 1, 1});
      g.data = {gval};
      sgd_momentum_step(theta, g, vel, eta, p, lambda);
      v_ref = -eta * (gval + lambda * t_ref) + p * v_ref;
      t_ref += v_ref;
      CHECK(std::abs(theta.data[0] - t_ref) < 1e-15);
      CHECK(std::abs(vel.data[0] - v_ref) < 1e-15);
    }
  }
}

TEST_CASE("T-step update equals the expanded double sum") {
  // theta_T - theta_0 = -eta sum_t sum_{s<=t} p^s g_{t-s} (batch k=1)
  Rng rng(1);
  const double eta = 0.01, p = 0.7;
  const int T = 12;
  std::vector<double> g(T);
  for (double& v : g) v = rng.uniform(-1.0, 1.0);
  Tensor theta({1, 1, 1, 1});
  Tensor vel({1, 1, 1, 1});
  for (int t = 0; t < T; ++t) {
    Tensor gt({1, 1, 1, 1});
    gt.data = {g[static_cast<std::size_t>(t)]};
    sgd_momentum_step(theta, gt, vel, eta, p, 0.0);
  }
  double expect = 0.0;
  for (int t = 0; t < T; ++t)
    for (int s = 0; s <= t; ++s)
      expect += -eta * std::pow(p, s) * g[static_cast<std::size_t>(t - s)];
  CHECK(theta.data[0] == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("equivalent momentum") {
  CHECK(equivalent_momentum(0.9, 20, 1) ==
        doctest::Approx(std::pow(0.9, 1.0 / 20.0)).epsilon(1e-15));
  CHECK(equivalent_momentum(0.9, 20, 1) ==
        doctest::Approx(0.994746).epsilon(1e-5));
  CHECK(equivalent_momentum(0.37, 5, 5) == 0.37);
  CHECK(equivalent_momentum(0.99, 1, 20) ==
        doctest::Approx(std::pow(0.99, 20)).epsilon(1e-15));
  CHECK(equivalent_momentum(0.99, 1, 20) ==
        doctest::Approx(0.8179).epsilon(1e-4));
  CHECK_THROWS_AS(equivalent_momentum(1.0, 1, 1), InvalidParamError);
  CHECK_THROWS_AS(equivalent_momentum(0.0, 1, 1), InvalidParamError);
}

TEST_CASE("effective coefficients") {
  SUBCASE("k=1 is the geometric series") {
    const auto c = effective_coefficients(0.5, 1, 6);
    for (std::size_t j = 0; j < c.size(); ++j)
      CHECK(c[j] == doctest::Approx(std::pow(0.5, j)).epsilon(1e-15));
  }
  SUBCASE("p=0.9, k=2, horizon 5") {
    const auto c = effective_coefficients(0.9, 2, 5);
    const std::vector<double> expect = {1.0, 1.0, 0.9, 0.9, 0.81};
    REQUIRE(c.size() == 5);
    for (std::size_t j = 0; j < 5; ++j)
      CHECK(c[j] == doctest::Approx(expect[j]).epsilon(1e-15));
  }
  SUBCASE("symbolic unrolling of the optimizer reproduces them exactly") {
    // give example j a unit gradient on its own coordinate: the velocity
    // after T updates is -eta sum_j c_j e_j, so with eta = 1 the velocity
    // spells out the coefficient series bitwise
    const double p = 0.9;
    const std::int64_t k = 4, horizon = 100;
    const std::int64_t T = horizon / k;
    Tensor theta({1, 1, 1, horizon});
    Tensor vel({1, 1, 1, horizon});
    std::int64_t example = 0;
    for (std::int64_t t = 0; t < T; ++t) {
      Tensor g({1, 1, 1, horizon});
      for (std::int64_t i = 0; i < k; ++i)
        g.data[static_cast<std::size_t>(example++)] = 1.0;
      sgd_momentum_step(theta, g, vel, 1.0, p, 0.0);
    }
    const auto c = effective_coefficients(p, k, horizon);
    for (std::int64_t j = 0; j < horizon; ++j) {
      // coordinate horizon-1-j belongs to the j-th most recent batch
      const double measured = -vel.data[static_cast<std::size_t>(horizon - 1 - j)];
      CHECK(measured == c[static_cast<std::size_t>(j)]);
    }
  }
  SUBCASE("lcm agreement between equivalent parameterizations") {
    const double p = 0.9;
    const std::int64_t k = 2, kp = 3, horizon = 60;
    const double p_prime = equivalent_momentum(p, k, kp);
    const auto a = effective_coefficients(p, k, horizon);
    const auto b = effective_coefficients(p_prime, kp, horizon);
    for (std::int64_t j = 0; j < horizon; j += 6)  // lcm(2,3) = 6
      CHECK(a[static_cast<std::size_t>(j)] ==
            doctest::Approx(b[static_cast<std::size_t>(j)]).epsilon(1e-12));
  }
}

TEST_CASE("graph-level step: bias multiplier and fixed params") {
  Graph g;
  int in = g.add_input("data");
  g.add_conv_param("c", new_filled({1, 1, 1, 1}, 1.0), {0.5});
  g.set_output(g.add_conv("c", in, "c", 1, 0, 1));
  g.add_upsample_param("up", bilinear_kernel(2, 1));
  g.param("up").learnable = false;

  g.zero_grads();
  g.param("c.w").grad.data[0] = 1.0;
  g.param("c.b").grad.data[0] = 1.0;
  g.param("up").grad.data[0] = 1.0;

  OptimConfig cfg;
  cfg.learning_rate = 0.1;
  cfg.momentum = 0.0;
  cfg.weight_decay = 0.0;
  cfg.bias_lr_multiplier = 2.0;
  VelocityStore vel;
  const Tensor up_before = g.param("up").value;
  sgd_momentum_step(g, vel, cfg);
  CHECK(g.param("c.w").value.data[0] == doctest::Approx(0.9).epsilon(1e-15));
  CHECK(g.param("c.b").value.data[0] == doctest::Approx(0.3).epsilon(1e-15));
  CHECK(g.param("up").value.data == up_before.data);  // fixed params stay
}

TEST_CASE("training a 1-parameter model converges on a quadratic") {
  // minimize (w - 3)^2 via the optimizer's own update rule
  Tensor w({1, 1, 1, 1});
  Tensor vel({1, 1, 1, 1});
  for (int step = 0; step < 200; ++step) {
    Tensor g({1, 1, 1, 1});
    g.data = {2.0 * (w.data[0] - 3.0)};
    sgd_momentum_step(w, g, vel, 0.05, 0.5, 0.0);
  }
  CHECK(std::abs(w.data[0] - 3.0) < 1e-6);
}

TEST_CASE("regime presets") {
  const OptimConfig accum = regime_config(Regime::kAccum, 1e-4);
  CHECK(accum.batch_size == 20);
  CHECK(accum.momentum == 0.9);
  const OptimConfig heavy = regime_config(Regime::kHeavy, 1e-4);
  CHECK(heavy.batch_size == 1);
  CHECK(heavy.momentum == 0.99);
  const OptimConfig online = regime_config(Regime::kOnline, 1e-4);
  CHECK(online.batch_size == 1);
  CHECK(online.momentum == 0.9);
  // matched steady-state per-example drift eta/(1-p)
  CHECK(accum.learning_rate / (1 - accum.momentum) ==
        doctest::Approx(heavy.learning_rate / (1 - heavy.momentum))
            .epsilon(1e-12));
}
