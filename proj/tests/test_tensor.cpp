#include <doctest.h>

#include <cmath>
#include <random>

#include "ddf2pol/errors.hpp"
#include "ddf2pol/tensor.hpp"
#include "gradcheck.hpp"

using namespace ddf2pol;
using ddf2pol::testing::check_gradients;
using ddf2pol::testing::random_away_from_zero;
using ddf2pol::testing::random_tensor;

namespace {

std::vector<double> vec(const Tensor& t) { return {t.values().begin(), t.values().end()}; }
std::vector<double> grad(const Tensor& t) { return {t.grad().begin(), t.grad().end()}; }

// Random shape of rank 1..4 with at most 200 elements.
Shape random_shape(std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> rank_dist(1, 4);
  std::uniform_int_distribution<std::size_t> ext(1, 5);
  for (;;) {
    std::vector<std::size_t> dims(rank_dist(rng));
    for (auto& d : dims) d = ext(rng);
    Shape s(dims);
    if (s.numel() <= 200) return s;
  }
}

// sum(f(x) * w) with a fixed random weight gives every output a distinct upstream gradient.
Tensor weighted_sum(const Tensor& y, const Tensor& w) { return sum(mul(y, w)); }

}  // namespace

TEST_CASE("shape invariants") {
  CHECK(Shape{2, 3, 4}.numel() == 24);
  CHECK(Shape{}.numel() == 1);
  CHECK_THROWS_AS(Shape({2, 0}), ShapeError);
  CHECK_THROWS_AS(Tensor(Shape{2, 2}, {1.0, 2.0}), ShapeError);
}

TEST_CASE("elementwise examples") {
  const Tensor x(Shape{3}, {-1.0, 0.0, 2.0});
  CHECK(vec(relu(x)) == std::vector<double>{0.0, 0.0, 2.0});
  CHECK(sigmoid(Tensor(Shape{1}, {0.0})).values()[0] == 0.5);
  CHECK(vec(negate(x)) == std::vector<double>{1.0, -0.0, -2.0});
  CHECK(vec(scale(x, 3.0)) == std::vector<double>{-3.0, 0.0, 6.0});

  Tensor a(Shape{2}, {2.0, 3.0}, true);
  Tensor b(Shape{2}, {4.0, 5.0}, true);
  const Tensor prod = mul(a, b);
  CHECK(vec(prod) == std::vector<double>{8.0, 15.0});
  backward(sum(prod));
  CHECK(grad(a) == std::vector<double>{4.0, 5.0});
  CHECK(grad(b) == std::vector<double>{2.0, 3.0});
}

TEST_CASE("relu subgradient at zero is zero") {
  Tensor x(Shape{3}, {-1.0, 0.0, 2.0}, true);
  backward(sum(relu(x)));
  CHECK(grad(x) == std::vector<double>{0.0, 0.0, 1.0});
}

TEST_CASE("binary ops reject incompatible shapes") {
  const Tensor a = Tensor::zeros(Shape{2, 3});
  const Tensor b = Tensor::zeros(Shape{3, 2});
  CHECK_THROWS_AS(add(a, b), ShapeError);
  CHECK_THROWS_AS(mul(a, Tensor::zeros(Shape{2})), ShapeError);
  CHECK(broadcast_shape(Shape{2, 1, 4}, Shape{3, 1}) == Shape{2, 3, 4});
}

TEST_CASE("reshape is a relabeling") {
  std::mt19937_64 rng(3);
  const Tensor x = random_tensor(Shape{11, 11, 12, 32}, rng);
  const Tensor y = reshape(x, Shape{11, 11, 384});
  CHECK(y.shape() == Shape{11, 11, 384});
  CHECK(vec(y) == vec(x));
  CHECK(vec(reshape(x, x.shape())) == vec(x));
  CHECK(vec(reshape(y, x.shape())) == vec(x));
  CHECK_THROWS_AS(reshape(x, Shape{11, 11, 383}), ShapeError);
}

TEST_CASE("concat shapes, identity and gradient split") {
  const Tensor a = Tensor::full(Shape{11, 11, 256}, 1.0);
  const Tensor b = Tensor::full(Shape{11, 11, 128}, 2.0);
  CHECK(concat({a, b}, 2).shape() == Shape{11, 11, 384});
  CHECK(vec(concat({a}, 2)) == vec(a));
  CHECK_THROWS_AS(concat({a, Tensor::zeros(Shape{10, 11, 128})}, 2), ShapeError);

  Tensor x(Shape{2, 2}, {1, 2, 3, 4}, true);
  backward(sum(concat({x, x}, 1)));
  CHECK(grad(x) == std::vector<double>{2.0, 2.0, 2.0, 2.0});  // each copy contributes ones

  Tensor p(Shape{2, 3}, {1, 2, 3, 4, 5, 6}, true);
  Tensor q(Shape{2, 2}, {7, 8, 9, 10}, true);
  const Tensor joined = concat({p, q}, 1);
  CHECK(vec(joined) == std::vector<double>{1, 2, 3, 7, 8, 4, 5, 6, 9, 10});
  // concat followed by split at the recorded offsets is the identity
  CHECK(vec(slice(joined, 1, 0, 3)) == vec(p));
  CHECK(vec(slice(joined, 1, 3, 5)) == vec(q));
}

TEST_CASE("reduce_mean examples and brute-force oracle") {
  CHECK(reduce_mean(Tensor(Shape{4}, {1, 2, 3, 4}), {0}).item() == doctest::Approx(2.5));

  const Tensor plane = Tensor::full(Shape{3, 5}, 7.0);
  const Tensor over_h = reduce_mean(plane, {0});
  CHECK(over_h.shape() == Shape{5});
  for (double v : over_h.values()) CHECK(v == doctest::Approx(7.0));

  std::mt19937_64 rng(11);
  const Tensor x = random_tensor(Shape{2, 2, 3}, rng);
  const Tensor m = reduce_mean(x, {0, 1});
  REQUIRE(m.shape() == Shape{3});
  for (std::size_t c = 0; c < 3; ++c) {
    double total = 0.0;
    for (std::size_t i = 0; i < 2; ++i) {
      for (std::size_t j = 0; j < 2; ++j) total += x.at({i, j, c});
    }
    CHECK(m.values()[c] == doctest::Approx(total / 4.0).epsilon(1e-14));
  }
  CHECK(reduce_mean(x, {0, 1}, true).shape() == Shape{1, 1, 3});
  CHECK(reduce_mean(x, {}).handle() == x.handle());
}

TEST_CASE("backward examples") {
  std::mt19937_64 rng(5);
  Tensor x = random_tensor(Shape{2, 3, 4}, rng);
  backward(sum(x));
  for (double g : x.grad()) CHECK(g == 1.0);

  Tensor three(Shape{1}, {3.0}, true);
  backward(sum(mul(three, three)));
  CHECK(three.grad()[0] == 6.0);

  CHECK_THROWS_AS(backward(mul(three, Tensor(Shape{2}, {1.0, 1.0}))), UsageError);
}

TEST_CASE("gradients accumulate across fan-out") {
  Tensor x(Shape{2}, {1.0, -2.0}, true);
  // y = x*x + 3x  => dy/dx = 2x + 3
  backward(sum(add(mul(x, x), scale(x, 3.0))));
  CHECK(grad(x) == std::vector<double>{5.0, -1.0});
}

TEST_CASE("composite expression matches central differences") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 5; ++trial) {
    Tensor x = random_tensor(Shape{5}, rng);
    Tensor w = random_tensor(Shape{5}, rng);
    auto f = [&] {
      const Tensor h = sigmoid(add(mul(x, w), scale(x, 0.5)));
      return sum(mul(sub(h, negate(w)), h));
    };
    const auto r = check_gradients(f, {x, w}, 5, 100 + trial);
    CHECK(r.max_rel_error < 1e-6);
  }
}

TEST_CASE("finite-difference property over every op") {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 20; ++trial) {
    const Shape s = random_shape(rng);
    Tensor a = random_tensor(s, rng);
    Tensor b = random_tensor(s, rng);
    const Tensor w = random_tensor(s, rng, -2, 2, false);
    const std::uint64_t seed = 500 + trial;

    CHECK(check_gradients([&] { return weighted_sum(add(a, b), w); }, {a, b}, 200, seed).max_rel_error < 1e-6);
    CHECK(check_gradients([&] { return weighted_sum(sub(a, b), w); }, {a, b}, 200, seed).max_rel_error < 1e-6);
    CHECK(check_gradients([&] { return weighted_sum(mul(a, b), w); }, {a, b}, 200, seed).max_rel_error < 1e-6);
    CHECK(check_gradients([&] { return weighted_sum(sigmoid(a), w); }, {a}, 200, seed).max_rel_error < 1e-6);
    CHECK(check_gradients([&] { return weighted_sum(negate(a), w); }, {a}, 200, seed).max_rel_error < 1e-6);
    CHECK(check_gradients([&] { return weighted_sum(scale(a, -1.7), w); }, {a}, 200, seed).max_rel_error < 1e-6);

    Tensor k = random_away_from_zero(s, rng);
    CHECK(check_gradients([&] { return weighted_sum(relu(k), w); }, {k}, 200, seed).max_rel_error < 1e-4);

    const std::size_t last = s.rank() - 1;
    CHECK(check_gradients(
              [&] { return sum(mul(reduce_mean(reshape(a, Shape{s.numel()}), {0}, true), reduce_mean(b, {last}, false))); },
              {a, b}, 200, seed)
              .max_rel_error < 1e-6);
    CHECK(check_gradients([&] { return weighted_sum(slice(concat({a, b}, last), last, 0, s[last]), w); }, {a, b},
                          200, seed)
              .max_rel_error < 1e-6);
  }
}

TEST_CASE("matmul gradient") {
  std::mt19937_64 rng(8);
  Tensor a = random_tensor(Shape{4, 3}, rng);
  Tensor b = random_tensor(Shape{3, 5}, rng);
  const Tensor w = random_tensor(Shape{4, 5}, rng, -2, 2, false);
  const auto r = check_gradients([&] { return sum(mul(matmul(a, b), w)); }, {a, b}, 20, 1);
  CHECK(r.max_rel_error < 1e-6);
  CHECK_THROWS_AS(matmul(a, a), ShapeError);
}

TEST_CASE("broadcast mul gradient equals explicit tiling") {
  std::mt19937_64 rng(41);
  Tensor a = random_tensor(Shape{2, 3, 4}, rng);
  Tensor b = random_tensor(Shape{1, 3, 1}, rng);
  const Tensor w = random_tensor(Shape{2, 3, 4}, rng, -2, 2, false);
  backward(sum(mul(mul(a, b), w)));

  // Oracle: tile b to (2,3,4) by hand, differentiate, then fold the copies back.
  std::vector<double> tiled(24);
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      for (std::size_t k = 0; k < 4; ++k) tiled[(i * 3 + j) * 4 + k] = b.values()[j];
    }
  }
  Tensor a2(a.shape(), vec(a), true);
  Tensor bt(Shape{2, 3, 4}, tiled, true);
  backward(sum(mul(mul(a2, bt), w)));
  std::vector<double> folded(3, 0.0);
  for (std::size_t i = 0; i < 24; ++i) folded[(i / 4) % 3] += bt.grad()[i];
  for (std::size_t j = 0; j < 3; ++j) CHECK(b.grad()[j] == doctest::Approx(folded[j]).epsilon(1e-14));
  for (std::size_t i = 0; i < 24; ++i) CHECK(a.grad()[i] == doctest::Approx(a2.grad()[i]).epsilon(1e-14));
}

TEST_CASE("complex pair requires matching parts") {
  CHECK_THROWS_AS(ComplexPair(Tensor::zeros(Shape{2}), Tensor::zeros(Shape{3})), ShapeError);
  const ComplexPair z(Tensor(Shape{2}, {1.0, 2.0}), Tensor(Shape{2}, {3.0, -4.0}));
  // conjugating twice is the identity
  const ComplexPair twice(z.re, negate(negate(z.im)));
  CHECK(vec(twice.im) == vec(z.im));
}

TEST_CASE("no-grad mode records nothing") {
  Tensor x(Shape{2}, {1.0, 2.0}, true);
  Tensor y;
  {
    NoGradGuard guard;
    y = mul(x, x);
  }
  CHECK_FALSE(y.requires_grad());
  CHECK(grad_enabled());
}
