#include <doctest.h>

#include <functional>

#include "falcon/autodiff.hpp"
#include "falcon/rng.hpp"

using namespace falcon;
using namespace falcon::ad;
using DT = BasicTensor<double>;

namespace {

// Values bounded away from 0 so relu kinks never sit inside the stencil.
DT random_param(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(numel(shape));
  for (double& x : v) {
    do x = rng.uniform(lo, hi);
    while (std::abs(x) < 0.02);
  }
  return DT::parameter(std::move(shape), std::move(v));
}

DT random_const(Shape shape, Rng& rng) {
  std::vector<double> v(numel(shape));
  for (double& x : v) x = rng.uniform(-1, 1);
  return DT::constant(std::move(shape), std::move(v));
}

// Reduces a tensor to a scalar with fixed random weights so every output
// element contributes a distinct upstream gradient.
DT weighted_sum(const DT& t, std::uint64_t seed = 77) {
  Rng rng(seed);
  return sum(mul(t, random_const(t.shape(), rng)));
}

/// Max relative error between analytic and central-difference gradients.
double gradcheck(std::vector<DT> inputs, const std::function<DT(const std::vector<DT>&)>& f) {
  const double eps = 1e-4;
  const DT loss = f(inputs);
  backward(loss);
  double worst = 0.0;
  for (DT& x : inputs) {
    if (!x.requires_grad()) continue;
    const std::vector<double> analytic(x.grad().begin(), x.grad().end());
    auto v = x.mutable_value();
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double orig = v[i];
      v[i] = orig + eps;
      const double fp = f(inputs).value()[0];
      v[i] = orig - eps;
      const double fm = f(inputs).value()[0];
      v[i] = orig;
      const double numeric = (fp - fm) / (2 * eps);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-6});
      worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("relu forward/backward example") {
  DT x = DT::parameter({2}, {-1.0, 2.0});
  DT y = relu(x);
  CHECK(y.value()[0] == 0.0);
  CHECK(y.value()[1] == 2.0);
  backward(sum(y));
  CHECK(x.grad()[0] == 0.0);
  CHECK(x.grad()[1] == 1.0);
}

TEST_CASE("matmul with identity") {
  Rng rng(1);
  DT a = random_param({3, 4}, rng);
  DT eye = DT::constant({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  DT r = matmul(eye, a);
  for (std::size_t i = 0; i < a.numel(); ++i) CHECK(r.value()[i] == a.value()[i]);
}

TEST_CASE("sum and l2 gradients") {
  Rng rng(2);
  DT w = random_param({2, 3}, rng);
  backward(sum(w));
  for (double g : w.grad()) CHECK(g == 1.0);

  DT w2 = random_param({5}, rng);
  DT zero = DT::zeros({5});
  backward(l2_loss(w2, zero));
  for (std::size_t i = 0; i < 5; ++i) CHECK(w2.grad()[i] == doctest::Approx(2 * w2.value()[i]));
}

TEST_CASE("backward errors") {
  Rng rng(3);
  DT w = random_param({3}, rng);
  CHECK_THROWS_AS(backward(relu(w)), NotScalar);
  DT c = random_const({3}, rng);
  CHECK_THROWS_AS(backward(sum(c)), DetachedGraph);
  DT loss = sum(w);
  backward(loss);
  CHECK_THROWS_AS(backward(loss), RepeatedBackward);
  reset_backward(loss);
  w.zero_grad();
  CHECK_NOTHROW(backward(loss));
  for (double g : w.grad()) CHECK(g == 1.0);
}

TEST_CASE("shape errors name the shapes") {
  Rng rng(4);
  DT a = random_param({2, 3}, rng), b = random_param({3, 2}, rng);
  CHECK_THROWS_AS(add(a, b), ShapeMismatch);
  CHECK_THROWS_AS(matmul(a, a), ShapeMismatch);
  CHECK_THROWS_AS(concat(random_param({1, 2, 4, 4}, rng), random_param({1, 2, 3, 4}, rng)), ShapeMismatch);
  try {
    conv2d(random_param({1, 2, 5, 5}, rng), random_param({4, 3, 3, 3}, rng), random_param({4}, rng), 1, 1);
    FAIL("expected ShapeMismatch");
  } catch (const ShapeMismatch& e) {
    CHECK(std::string(e.what()).find("[1,2,5,5]") != std::string::npos);
  }
}

TEST_CASE("gradcheck: elementwise primitives") {
  Rng rng(10);
  CHECK(gradcheck({random_param({2, 3, 4}, rng)}, [](const auto& in) { return weighted_sum(relu(in[0])); }) < 1e-4);
  CHECK(gradcheck({random_param({2, 3, 4}, rng, -3, 3)}, [](const auto& in) { return weighted_sum(sigmoid(in[0])); }) <
        1e-4);
  CHECK(gradcheck({random_param({3, 4, 2}, rng)}, [](const auto& in) { return weighted_sum(scale(in[0], -2.5)); }) <
        1e-4);
  CHECK(gradcheck({random_param({2, 3, 4}, rng), random_param({2, 3, 4}, rng)},
                  [](const auto& in) { return weighted_sum(add(in[0], in[1])); }) < 1e-4);
  CHECK(gradcheck({random_param({2, 3, 4}, rng), random_param({3, 4}, rng)},
                  [](const auto& in) { return weighted_sum(add(in[0], in[1])); }) < 1e-4);
  CHECK(gradcheck({random_param({2, 3, 4, 2}, rng), random_param({2, 3, 4, 2}, rng)},
                  [](const auto& in) { return weighted_sum(mul(in[0], in[1])); }) < 1e-4);
  CHECK(gradcheck({random_param({2, 3, 4, 2}, rng), random_param({4, 2}, rng)},
                  [](const auto& in) { return weighted_sum(mul(in[0], in[1])); }) < 1e-4);
  CHECK(gradcheck({random_param({2, 3, 4}, rng)}, [](const auto& in) { return sum(in[0]); }) < 1e-4);
}

TEST_CASE("gradcheck: spatial primitives") {
  Rng rng(11);
  for (int stride : {1, 2})
    for (int pad : {0, 1}) {
      CAPTURE(stride);
      CAPTURE(pad);
      CHECK(gradcheck({random_param({2, 3, 7, 6}, rng), random_param({4, 3, 3, 3}, rng), random_param({4}, rng)},
                      [&](const auto& in) { return weighted_sum(conv2d(in[0], in[1], in[2], stride, pad)); }) < 1e-4);
    }
  CHECK(gradcheck({random_param({2, 3, 1, 1}, rng), random_param({5, 3, 1, 1}, rng), random_param({5}, rng)},
                  [](const auto& in) { return weighted_sum(conv2d(in[0], in[1], in[2], 1, 0)); }) < 1e-4);
  CHECK(gradcheck({random_param({2, 3, 4, 5}, rng)},
                  [](const auto& in) { return weighted_sum(global_avg_pool(in[0])); }) < 1e-4);
  CHECK(gradcheck({random_param({2, 3, 3, 4}, rng)},
                  [](const auto& in) { return weighted_sum(nearest_upsample2x(in[0])); }) < 1e-4);
  CHECK(gradcheck({random_param({2, 3, 4, 4}, rng), random_param({2, 2, 4, 4}, rng)},
                  [](const auto& in) { return weighted_sum(concat(in[0], in[1])); }) < 1e-4);
  CHECK(gradcheck({random_param({3, 4}, rng), random_param({4, 5}, rng)},
                  [](const auto& in) { return weighted_sum(matmul(in[0], in[1])); }) < 1e-4);
}

TEST_CASE("gradcheck: losses") {
  Rng rng(12);
  std::vector<double> p(24), y(24);
  for (double& v : p) v = rng.uniform(0.05, 0.95);
  for (double& v : y) v = rng.uniform() < 0.5 ? 0.0 : 1.0;
  CHECK(gradcheck({DT::parameter({2, 3, 4}, p), DT::constant({2, 3, 4}, y)},
                  [](const auto& in) { return bce_loss(in[0], in[1]); }) < 1e-4);
  std::vector<double> ysoft(24);
  for (double& v : ysoft) v = rng.uniform();
  CHECK(gradcheck({DT::parameter({2, 3, 4}, p), DT::parameter({2, 3, 4}, ysoft)},
                  [](const auto& in) { return bce_loss(in[0], in[1]); }) < 1e-4);
  CHECK(gradcheck({random_param({3, 2, 2}, rng), random_param({3, 2, 2}, rng)},
                  [](const auto& in) { return l2_loss(in[0], in[1]); }) < 1e-4);
}

TEST_CASE("bce minimum at the target") {
  std::vector<double> y = {0, 1, 1, 0};
  DT t = DT::constant({4}, y);
  const double at_target = bce_loss(DT::constant({4}, {1e-9, 1 - 1e-9, 1 - 1e-9, 1e-9}), t).value()[0];
  const double off = bce_loss(DT::constant({4}, {0.1, 0.9, 0.9, 0.1}), t).value()[0];
  CHECK(at_target < 1e-6);
  CHECK(off > at_target);
}

TEST_CASE("gradcheck: composite conv-relu-pool-matmul net") {
  Rng rng(13);
  std::vector<DT> in = {random_const({2, 3, 8, 8}, rng), random_param({4, 3, 3, 3}, rng), random_param({4}, rng),
                        random_param({4, 5}, rng), random_param({5}, rng)};
  const double err = gradcheck(in, [](const auto& v) {
    const DT h = relu(conv2d(v[0], v[1], v[2], 2, 1));
    return weighted_sum(add(matmul(global_avg_pool(h), v[3]), v[4]));
  });
  CHECK(err < 1e-4);
}

TEST_CASE("backward is deterministic") {
  auto run = [] {
    Rng rng(21);
    DT x = random_const({2, 3, 8, 8}, rng), w = random_param({4, 3, 3, 3}, rng), b = random_param({4}, rng);
    backward(weighted_sum(relu(conv2d(x, w, b, 2, 1))));
    return std::vector<double>(w.grad().begin(), w.grad().end());
  };
  CHECK(run() == run());
}
