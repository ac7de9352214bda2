#include <doctest.h>

#include <cmath>

#include "cbn/errors.hpp"
#include "cbn/ops.hpp"
#include "cbn/rng.hpp"
#include "test_util.hpp"

using namespace cbn;
using testutil::random_tensor;

TEST_CASE("tensor construction checks sizes and bounds") {
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
  Tensor t({2, 3}, 1.5);
  CHECK(t.size() == 6);
  CHECK(t.at({1, 2}) == 1.5);
  CHECK_THROWS_AS(t.at({2, 0}), ShapeError);
  CHECK_THROWS_AS(t.at({0}), ShapeError);
  CHECK_THROWS_AS(t.dim(2), ShapeError);
  CHECK_THROWS_AS(t.reshaped({4}), ShapeError);
  CHECK(t.reshaped({3, 2}).shape() == Shape{3, 2});
  t[0] = std::nan("");
  CHECK_FALSE(t.all_finite());
}

TEST_CASE("reduce_mean_over examples") {
  CHECK(reduce_mean_over(Tensor({2, 1}, {1, 3}), {0}) == Tensor({1, 1}, {2}));
  CHECK(reduce_mean_over(Tensor({1, 1}, {5}), {0}) == Tensor({1, 1}, {5}));
  CHECK_THROWS_AS(reduce_mean_over(Tensor({2, 2}), {2}), ShapeError);

  Rng rng(3);
  const Tensor t = random_tensor({2, 2, 2}, rng);
  const Tensor m = reduce_mean_over(t, {0, 2});
  REQUIRE(m.shape() == Shape{1, 2, 1});
  for (std::size_t j = 0; j < 2; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t k = 0; k < 2; ++k) s += t.at({i, j, k});
    CHECK(m.at({0, j, 0}) == doctest::Approx(s / 4).epsilon(1e-14));
  }
}

TEST_CASE("centering with reduce_mean_over leaves zero mean") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor t = random_tensor({1 + rng.below(4), 1 + rng.below(4), 1 + rng.below(4)}, rng, 3.0, 5.0);
    const std::vector<std::size_t> axes = trial % 2 ? std::vector<std::size_t>{0, 2} : std::vector<std::size_t>{1};
    const Tensor centered = elementwise(ElementwiseOp::sub, t, reduce_mean_over(t, axes));
    const Tensor residual = reduce_mean_over(centered, axes);
    for (double v : residual.data()) CHECK(std::abs(v) <= 1e-12);
  }
}

TEST_CASE("conv2d_forward examples") {
  CHECK(conv2d_forward(Tensor({1, 1, 1, 1}, {2}), Tensor({1, 1, 1, 1}, {3}), {}) == Tensor({1, 1, 1, 1}, {6}));

  Rng rng(5);
  const Tensor x = random_tensor({2, 1, 3, 3}, rng);
  CHECK(conv2d_forward(x, Tensor({1, 1, 1, 1}, {1.0}), {}) == x);

  const Tensor x3 = random_tensor({1, 1, 3, 3}, rng);
  const Tensor w2 = random_tensor({1, 1, 2, 2}, rng);
  CHECK(testutil::max_rel_err(conv2d_forward(x3, w2, {}), testutil::loop_conv(x3, w2, 1, 0), 1e-300) <= 1e-12);

  CHECK_THROWS_AS(conv2d_forward(Tensor({1, 2, 3, 3}), Tensor({1, 1, 2, 2}), {}), ShapeError);
  CHECK_THROWS_AS(conv2d_forward(Tensor({1, 1, 2, 2}), Tensor({1, 1, 3, 3}), {}), ShapeError);
}

TEST_CASE("conv2d_forward matches a nested-loop convolution on random shapes") {
  Rng rng(17);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t h = 1 + rng.below(8), w = 1 + rng.below(8), k = 1 + rng.below(3);
    const std::size_t stride = 1 + rng.below(2), pad = rng.below(2);
    if (h + 2 * pad < k || w + 2 * pad < k) continue;
    const Tensor x = random_tensor({1 + rng.below(3), 1 + rng.below(4), h, w}, rng);
    const Tensor wt = random_tensor({1 + rng.below(4), x.dim(1), k, k}, rng);
    const Tensor got = conv2d_forward(x, wt, {stride, pad});
    const Tensor want = testutil::loop_conv(x, wt, stride, pad);
    REQUIRE(got.shape() == want.shape());
    CHECK(testutil::max_rel_err(got, want, 1e-12) <= 1e-12);
  }
}

TEST_CASE("elementwise examples and broadcasting") {
  CHECK(elementwise(ElementwiseOp::max, Tensor({1}, {0.5}), Tensor({1}, {1.0})) == Tensor({1}, {1.0}));
  CHECK(elementwise(ElementwiseOp::sqrt, Tensor({1}, {4.0})) == Tensor({1}, {2.0}));
  CHECK(elementwise(ElementwiseOp::square, Tensor({2}, {-3, 2})) == Tensor({2}, {9, 4}));
  CHECK(std::isinf(elementwise(ElementwiseOp::div, Tensor({1}, {1.0}), Tensor({1}, {0.0}))[0]));

  const Tensor a({2, 2}, {1, 2, 3, 4});
  const Tensor b({1, 2}, {10, 20});
  const Tensor sum = elementwise(ElementwiseOp::add, a, b);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j) CHECK(sum.at({i, j}) == a.at({i, j}) + b.at({0, j}));

  CHECK_THROWS_AS(elementwise(ElementwiseOp::add, a, Tensor({2}, {1, 2})), ShapeError);
  CHECK_THROWS_AS(elementwise(ElementwiseOp::add, a, Tensor({3, 2})), ShapeError);
}

namespace {

// Reference xoshiro256** seeded through splitmix64, from the published algorithms.
struct RefXoshiro {
  std::uint64_t s[4];
  explicit RefXoshiro(std::uint64_t seed) {
    for (auto& w : s) {
      seed += 0x9e3779b97f4a7c15ULL;
      std::uint64_t z = seed;
      z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
      z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
      w = z ^ (z >> 31);
    }
  }
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  std::uint64_t next() {
    const std::uint64_t result = rotl(s[1] * 5, 7) * 9;
    const std::uint64_t t = s[1] << 17;
    s[2] ^= s[0];
    s[3] ^= s[1];
    s[1] ^= s[2];
    s[0] ^= s[3];
    s[2] ^= t;
    s[3] = rotl(s[3], 45);
    return result;
  }
};

}  // namespace

TEST_CASE("rng stream is the documented xoshiro256** sequence") {
  Rng rng(42);
  RefXoshiro ref(42);
  for (int i = 0; i < 1000; ++i) REQUIRE(rng.next_u64() == ref.next());

  Rng u(42);
  RefXoshiro ru(42);
  for (int i = 0; i < 100; ++i) CHECK(u.uniform() == double(ru.next() >> 11) * 0x1.0p-53);
}

TEST_CASE("rng determinism, state restore and helpers") {
  Rng a(42), b(42);
  for (int i = 0; i < 50; ++i) CHECK(a.normal() == b.normal());
  a.normal();
  const auto st = a.state();
  const double n1 = a.normal(), n2 = a.normal();
  a.restore(st);
  CHECK(a.normal() == n1);
  CHECK(a.normal() == n2);

  CHECK_THROWS_AS(a.below(0), ArgumentError);
  for (int i = 0; i < 100; ++i) CHECK(a.below(7) < 7);
  auto p = a.permutation(20);
  std::sort(p.begin(), p.end());
  for (std::size_t i = 0; i < 20; ++i) CHECK(p[i] == i);
}

TEST_CASE("rng normals have unit moments") {
  Rng rng(9);
  double s = 0.0, s2 = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double v = rng.normal();
    s += v;
    s2 += v * v;
  }
  CHECK(std::abs(s / n) < 0.01);
  CHECK(std::abs(s2 / n - 1.0) < 0.02);
}
