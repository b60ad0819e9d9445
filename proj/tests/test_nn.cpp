#include <cmath>

#include "doctest.h"
#include "gradcheck.hpp"
#include "softsense/nn/adam.hpp"

using namespace softsense;
using namespace softsense::nn;
using softsense::testing::Tensor64;
using softsense::testing::Tape64;

namespace {

double kl_value(std::vector<double> mu, std::vector<double> logvar) {
  Tape64 t;
  const int n = static_cast<int>(mu.size());
  auto m = t.constant(Tensor64({1, n}, std::move(mu)));
  auto lv = t.constant(Tensor64({1, n}, std::move(logvar)));
  return t.value(kl_standard_normal(t, m, lv)).data[0];
}

// KL(N(mu, s^2) || N(0, 1)) as the integral of p log(p/q), by midpoint rule on [mu - 12s, mu + 12s].
double kl_quadrature(double mu, double sigma) {
  const int steps = 200000;
  const double lo = mu - 12 * sigma, hi = mu + 12 * sigma;
  const double dx = (hi - lo) / steps;
  double sum = 0.0;
  for (int i = 0; i < steps; ++i) {
    const double x = lo + (i + 0.5) * dx;
    const double z = (x - mu) / sigma;
    const double p = std::exp(-0.5 * z * z) / (sigma * std::sqrt(2 * std::numbers::pi));
    const double log_ratio = -0.5 * z * z - std::log(sigma) + 0.5 * x * x;
    sum += p * log_ratio * dx;
  }
  return sum;
}

}  // namespace

TEST_CASE("fully connected layer with identity weights passes input through") {
  Tape<float> t;
  Tensor<float> eye({3, 3});
  for (int i = 0; i < 3; ++i) eye.data[i * 3 + i] = 1.0f;
  auto x = t.constant(Tensor<float>({2, 3}, {1, -2, 3, 0.5f, 0, -7}));
  auto y = linear(t, x, t.constant(eye), t.constant(Tensor<float>({3})));
  CHECK(t.value(y).data == t.value(x).data);
}

TEST_CASE("relu clamps negatives") {
  Tape<float> t;
  auto y = relu(t, t.constant(Tensor<float>({1, 3}, {-1, 0, 2})));
  CHECK(t.value(y) == Tensor<float>({1, 3}, {0, 0, 2}));
}

TEST_CASE("conv shapes: 64 -> 31 and back to 64") {
  CHECK(conv_out(64) == 31);
  CHECK(conv_transpose_out(31) == 64);
  Tape<float> t;
  Rng rng(1, 0);
  ParameterSet<float> ps;
  auto conv = Conv<float>::make(ps, "c", 3, 8, rng);
  auto deconv = ConvTranspose<float>::make(ps, "d", 8, 3, rng);
  auto x = t.constant(Tensor<float>({2, 3, 64, 64}, 0.5f));
  auto h = conv(t, x);
  CHECK(t.shape(h) == Shape{2, 8, 31, 31});
  CHECK(t.shape(deconv(t, h)) == Shape{2, 3, 64, 64});
}

TEST_CASE("shape mismatches are rejected") {
  Tape<float> t;
  auto a = t.constant(Tensor<float>({2, 3}));
  auto b = t.constant(Tensor<float>({2, 4}));
  CHECK_THROWS_AS(mse(t, a, b), ShapeError);
  CHECK_THROWS_AS(linear(t, a, t.constant(Tensor<float>({4, 4})), t.constant(Tensor<float>({4}))), ShapeError);
  CHECK_THROWS_AS(reparameterize(t, a, a, Tensor<float>({2, 2})), ShapeError);
  CHECK_THROWS_AS(Tensor<float>({2, 2}, std::vector<float>{1, 2, 3}), ShapeError);
}

TEST_CASE("mse examples") {
  Tape64 t;
  auto x = t.constant(Tensor64({2}, {1, 0}));
  auto y = t.constant(Tensor64({2}, {0, 1}));
  CHECK(t.value(mse(t, x, x)).data[0] == 0.0);
  CHECK(t.value(mse(t, x, y)).data[0] == doctest::Approx(1.0).epsilon(1e-12));
  Rng rng(3, 0);
  auto a = t.constant(softsense::testing::random_tensor({4, 5}, rng));
  auto b = t.constant(softsense::testing::random_tensor({4, 5}, rng));
  CHECK(t.value(mse(t, a, b)).data[0] == t.value(mse(t, b, a)).data[0]);
}

TEST_CASE("gradient of mse at its minimum is zero") {
  Tape64 t;
  auto x = t.variable(Tensor64({3}, {0.3, -1, 2}));
  auto c = t.constant(Tensor64({3}, {0.3, -1, 2}));
  t.backward(mse(t, x, c));
  for (double g : t.grad(x).data) CHECK(g == 0.0);
}

TEST_CASE("kl examples against closed form and quadrature") {
  CHECK(kl_value({0, 0}, {0, 0}) == 0.0);
  CHECK(kl_value({1}, {0}) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(kl_value({0}, {std::log(4.0)}) == doctest::Approx(1.5 - std::log(2.0)).epsilon(1e-12));
  CHECK(std::abs(kl_quadrature(1, 1) - 0.5) < 1e-3);
  CHECK(std::abs(kl_quadrature(0, 2) - kl_value({0}, {std::log(4.0)})) < 1e-3);
}

TEST_CASE("kl is non-negative for random inputs") {
  Rng rng(11, 0);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> mu(5), lv(5);
    for (auto& v : mu) v = rng.uniform(-5, 5);
    for (auto& v : lv) v = rng.uniform(-8, 8);
    CHECK(kl_value(mu, lv) >= 0.0);
  }
}

TEST_CASE("reparameterize") {
  Tape64 t;
  auto mu = t.constant(Tensor64({1, 3}, {0.5, -1, 2}));
  SUBCASE("zero noise returns mu") {
    auto z = reparameterize(t, mu, t.constant(Tensor64({1, 3}, 0.7)), Tensor64({1, 3}));
    CHECK(t.value(z).data == t.value(mu).data);
  }
  SUBCASE("vanishing variance") {
    auto z = reparameterize(t, mu, t.constant(Tensor64({1, 3}, -40.0)), Tensor64({1, 3}, 1.0));
    for (int i = 0; i < 3; ++i) CHECK(std::abs(t.value(z).data[i] - t.value(mu).data[i]) < 1e-6);
  }
  SUBCASE("sample moments") {
    const int n = 100000;
    Rng rng(5, 0);
    Tensor64 eps({n, 1});
    for (auto& v : eps.data) v = rng.normal();
    auto m = t.constant(Tensor64({n, 1}, 1.5));
    auto lv = t.constant(Tensor64({n, 1}, std::log(0.25)));
    const auto& z = t.value(reparameterize(t, m, lv, eps)).data;
    double mean = 0, var = 0;
    for (double v : z) mean += v / n;
    for (double v : z) var += (v - mean) * (v - mean) / n;
    CHECK(std::abs(mean - 1.5) < 0.02 * 1.5);
    CHECK(std::abs(std::sqrt(var) - 0.5) < 0.02 * 0.5);
  }
}

TEST_CASE("finite-difference gradient checks over 20 seeds") {
  for (const auto& c : softsense::testing::grad_cases()) {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
      const auto r = c.run(seed);
      INFO(c.name << " seed " << seed << " " << r.worst);
      CHECK(r.max_rel_error < 1e-4);
    }
  }
}

TEST_CASE("parameter gradients of a small network match finite differences") {
  ParameterSet<double> ps;
  Rng rng(17, 0);
  auto conv = Conv<double>::make(ps, "conv", 2, 3, rng);
  auto fc1 = Dense<double>::make(ps, "fc1", 3 * 3 * 3 + 4, 6, rng);
  auto fc2 = Dense<double>::make(ps, "fc2", 6, 2, rng);
  const auto image = softsense::testing::random_tensor({2, 2, 8, 8}, rng);
  const auto side = softsense::testing::random_tensor({2, 4}, rng);
  const auto target = softsense::testing::random_tensor({2, 2}, rng);
  auto loss_of = [&](Tape64& t) {
    auto h = relu(t, conv(t, t.constant(image)));
    h = reshape(t, h, {2, 27});
    h = concat(t, h, t.constant(side));
    auto y = fc2(t, relu(t, fc1(t, h)));
    return mse(t, y, t.constant(target));
  };
  Tape64 tape;
  tape.backward(loss_of(tape));
  for (auto& p : ps.all()) {
    double diff2 = 0, norm = 0;
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double saved = p.value.data[i];
      p.value.data[i] = saved + 1e-6;
      Tape64 up;
      const double fu = up.value(loss_of(up)).data[0];
      p.value.data[i] = saved - 1e-6;
      Tape64 down;
      const double fd = down.value(loss_of(down)).data[0];
      p.value.data[i] = saved;
      const double num = (fu - fd) / 2e-6;
      diff2 += (num - p.grad.data[i]) * (num - p.grad.data[i]);
      norm += std::abs(num) + std::abs(p.grad.data[i]);
    }
    INFO(p.name);
    CHECK(std::sqrt(diff2) < 1e-4 * std::max(norm, 1e-12));
  }
}

TEST_CASE("scaling the loss scales every gradient") {
  ParameterSet<double> ps;
  Rng rng(2, 0);
  auto fc = Dense<double>::make(ps, "fc", 3, 2, rng);
  const auto x = softsense::testing::random_tensor({4, 3}, rng);
  const auto y = softsense::testing::random_tensor({4, 2}, rng);
  Tape64 a;
  a.backward(mse(a, fc(a, a.constant(x)), a.constant(y)));
  const auto g1 = fc.weight->grad;
  ps.zero_grad();
  Tape64 b;
  b.backward(scale(b, mse(b, fc(b, b.constant(x)), b.constant(y)), 3.0));
  for (std::size_t i = 0; i < g1.size(); ++i) CHECK(fc.weight->grad.data[i] == doctest::Approx(3 * g1.data[i]));
}

TEST_CASE("stale tapes are rejected") {
  ParameterSet<double> ps;
  Rng rng(4, 0);
  auto fc = Dense<double>::make(ps, "fc", 2, 1, rng);
  SUBCASE("double backward") {
    Tape64 t;
    auto loss = mse(t, fc(t, t.constant(Tensor64({1, 2}, 1.0))), t.constant(Tensor64({1, 1})));
    t.backward(loss);
    CHECK_THROWS_AS(t.backward(loss), StaleTapeError);
  }
  SUBCASE("parameters updated after forward") {
    Tape64 t;
    auto loss = mse(t, fc(t, t.constant(Tensor64({1, 2}, 1.0))), t.constant(Tensor64({1, 1})));
    Adam<double> opt({fc.weight, fc.bias}, {});
    opt.step();
    CHECK_THROWS_AS(t.backward(loss), StaleTapeError);
  }
}

TEST_CASE("non-finite loss is reported") {
  Tape64 t;
  auto a = t.constant(Tensor64({1}, std::numeric_limits<double>::infinity()));
  CHECK_THROWS_AS(mse(t, a, t.constant(Tensor64({1}))), NonFiniteError);
}

TEST_CASE("adam") {
  ParameterSet<double> ps;
  SUBCASE("zero gradient is a fixed point") {
    auto& p = ps.add("w", Tensor64({3}, {1, 2, 3}));
    Adam<double> opt({&p}, {});
    for (int i = 0; i < 5; ++i) opt.step();
    CHECK(p.value == Tensor<double>({3}, {1, 2, 3}));
  }
  SUBCASE("one step on w^2 decreases |w|") {
    auto& p = ps.add("w", Tensor64({1}, 1.0));
    Adam<double> opt({&p}, {});
    p.grad.data[0] = 2.0;
    opt.step();
    CHECK(std::abs(p.value.data[0]) < 1.0);
  }
  SUBCASE("convex quadratic reaches its minimum") {
    // f(w) = (w0 - 1)^2 + 2 (w1 + 0.5)^2 + w0 w1, minimum at solve([[2,1],[1,4]] w = [2,-2])
    auto& p = ps.add("w", Tensor64({2}, {0.1, 0.1}));
    Adam<double> opt({&p}, {.learning_rate = 0.05});
    for (int i = 0; i < 200; ++i) {
      const double w0 = p.value.data[0], w1 = p.value.data[1];
      p.grad.data = {2 * (w0 - 1) + w1, 4 * (w1 + 0.5) + w0};
      opt.step();
    }
    const double det = 2 * 4 - 1;
    CHECK(std::abs(p.value.data[0] - (2 * 4 - 1 * -2) / det) < 1e-3);
    CHECK(std::abs(p.value.data[1] - (2 * -2 - 1 * 2) / det) < 1e-3);
  }
}
