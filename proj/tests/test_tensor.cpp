#include <cmath>

#include "doctest.h"
#include "fir/conv.hpp"
#include "fir/gradcheck.hpp"
#include "fir/tensor.hpp"
#include "oracles.hpp"

using namespace fir;

namespace {

template <typename T>
void check_close(const std::vector<T>& got, const std::vector<double>& want, double rel_tol) {
  REQUIRE(got.size() == want.size());
  for (std::size_t i = 0; i < got.size(); ++i) {
    const double scale = std::max(1.0, std::abs(want[i]));
    CHECK(std::abs(static_cast<double>(got[i]) - want[i]) <= rel_tol * scale);
  }
}

}  // namespace

TEST_CASE("matmul: identity leaves the operand unchanged") {
  RandomStream rng(1);
  Tensor64 a = Tensor64::randn({3, 3}, rng);
  Tensor64 eye = Tensor64::from_data({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Tensor64 out = matmul(eye, a);
  CHECK(out.values() == a.values());
}

TEST_CASE("matmul: column swap") {
  Tensor64 a = Tensor64::from_data({2, 2}, {1, 2, 3, 4});
  Tensor64 swap = Tensor64::from_data({2, 2}, {0, 1, 1, 0});
  Tensor64 out = matmul(a, swap);
  CHECK(out.values() == std::vector<double>{2, 1, 4, 3});
}

TEST_CASE("matmul: random instance matches the triple-loop oracle") {
  RandomStream rng(2);
  Tensor64 a = Tensor64::randn({4, 5}, rng);
  Tensor64 b = Tensor64::randn({5, 3}, rng);
  Tensor64 out = matmul(a, b);
  const auto want = oracle::matmul(a.values(), b.values(), 4, 5, 3);
  check_close(out.values(), want, 1e-12);
}

TEST_CASE("matmul: batched matches per-slice oracle and rejects mismatches") {
  RandomStream rng(3);
  Tensor64 a = Tensor64::randn({2, 3, 4}, rng);
  Tensor64 b = Tensor64::randn({2, 4, 2}, rng);
  Tensor64 out = matmul(a, b);
  for (int g = 0; g < 2; ++g) {
    std::vector<double> as(a.values().begin() + g * 12, a.values().begin() + (g + 1) * 12);
    std::vector<double> bs(b.values().begin() + g * 8, b.values().begin() + (g + 1) * 8);
    const auto want = oracle::matmul(as, bs, 3, 4, 2);
    std::vector<double> got(out.values().begin() + g * 6, out.values().begin() + (g + 1) * 6);
    check_close(got, want, 1e-12);
  }

  Tensor64 bad = Tensor64::zeros({2, 5, 2});
  CHECK_THROWS_WITH_AS(matmul(a, bad), doctest::Contains("[2,3,4]"), ShapeError);
  CHECK_THROWS_WITH_AS(matmul(a, bad), doctest::Contains("[2,5,2]"), ShapeError);
}

TEST_CASE("matmul_nt agrees with matmul over an explicit transpose") {
  RandomStream rng(4);
  Tensor64 a = Tensor64::randn({2, 3, 4}, rng);
  Tensor64 b = Tensor64::randn({2, 5, 4}, rng);
  Tensor64 out = matmul_nt(a, b);
  Tensor64 want = matmul(a, transpose_last2(b));
  check_close(out.values(), want.values(), 1e-14);
}

TEST_CASE("softmax_last: uniform, overflow-safe and hand-computed cases") {
  Tensor64 z = softmax_last(Tensor64::zeros({4}));
  for (double v : z.values()) CHECK(v == doctest::Approx(0.25).epsilon(1e-12));

  Tensor64 big = softmax_last(Tensor64::from_data({2}, {1000.0, 1000.0}));
  for (double v : big.values()) {
    CHECK(std::isfinite(v));
    CHECK(v == doctest::Approx(0.5).epsilon(1e-12));
  }

  Tensor64 hand = softmax_last(Tensor64::from_data({2}, {0.0, std::log(3.0)}));
  CHECK(hand.values()[0] == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(hand.values()[1] == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("softmax_last: rows sum to one for magnitudes up to 1e3") {
  RandomStream rng(5);
  Tensor64 x = Tensor64::rand_uniform({6, 7}, rng, -1000.0, 1000.0);
  Tensor64 y = softmax_last(x);
  for (int r = 0; r < 6; ++r) {
    double sum = 0.0;
    for (int j = 0; j < 7; ++j) sum += y.values()[r * 7 + j];
    CHECK(std::abs(sum - 1.0) <= 1e-6);
    for (int j = 0; j < 7; ++j) {
      CHECK(std::isfinite(y.values()[r * 7 + j]));
      CHECK(y.values()[r * 7 + j] >= 0.0);
    }
  }
  // Strict positivity away from the underflow regime.
  Tensor64 m = softmax_last(Tensor64::rand_uniform({6, 7}, rng, -30.0, 30.0));
  for (double v : m.values()) CHECK(v > 0.0);
}

TEST_CASE("layer_norm: constant rows, affine bypass and hand case") {
  Tensor64 gain = Tensor64::ones({3});
  Tensor64 bias = Tensor64::zeros({3});
  Tensor64 c = layer_norm(Tensor64::full({2, 3}, 5.0), gain, bias);
  for (double v : c.values()) CHECK(v == doctest::Approx(0.0).epsilon(1e-12));

  // eps -> 0 limit of normalizing [1, 3]: mean 2, std 1.
  Tensor64 two = layer_norm(Tensor64::from_data({1, 2}, {1.0, 3.0}), Tensor64::ones({2}),
                            Tensor64::zeros({2}), 1e-12);
  CHECK(two.values()[0] == doctest::Approx(-1.0).epsilon(1e-6));
  CHECK(two.values()[1] == doctest::Approx(1.0).epsilon(1e-6));

  RandomStream rng(6);
  Tensor64 x = Tensor64::randn({4, 5}, rng);
  Tensor64 b = Tensor64::full({5}, 2.5);
  Tensor64 out = layer_norm(x, Tensor64::zeros({5}), b);
  for (double v : out.values()) CHECK(v == doctest::Approx(2.5).epsilon(1e-12));
}

TEST_CASE("layer_norm: normalized rows have mean 0 and variance 1") {
  RandomStream rng(7);
  Tensor64 x = Tensor64::randn({8, 6}, rng, 3.0);
  Tensor64 y = layer_norm(x, Tensor64::ones({6}), Tensor64::zeros({6}));
  for (int r = 0; r < 8; ++r) {
    double mean = 0.0, var = 0.0;
    for (int j = 0; j < 6; ++j) mean += y.values()[r * 6 + j];
    mean /= 6;
    for (int j = 0; j < 6; ++j) {
      const double d = y.values()[r * 6 + j] - mean;
      var += d * d;
    }
    var /= 6;
    CHECK(std::abs(mean) <= 1e-5);
    CHECK(std::abs(var - 1.0) <= 1e-5);
  }
}

TEST_CASE("conv2d: pointwise identity kernel, zero kernel with bias") {
  RandomStream rng(8);
  Tensor64 x = Tensor64::randn({1, 4, 4, 2}, rng);
  Tensor64 eye = Tensor64::from_data({1, 1, 2, 2}, {1, 0, 0, 1});
  Tensor64 out = conv2d(x, eye, Tensor64::zeros({2}));
  CHECK(out.values() == x.values());

  Tensor64 zero_w = Tensor64::zeros({3, 3, 2, 3});
  Tensor64 bias = Tensor64::from_data({3}, {0.5, -1.0, 2.0});
  Tensor64 constant = conv2d(x, zero_w, bias);
  for (int i = 0; i < 16; ++i) {
    CHECK(constant.values()[i * 3 + 0] == 0.5);
    CHECK(constant.values()[i * 3 + 1] == -1.0);
    CHECK(constant.values()[i * 3 + 2] == 2.0);
  }
}

TEST_CASE("conv2d: random instance matches the direct-loop oracle") {
  RandomStream rng(9);
  Tensor64 x = Tensor64::randn({1, 5, 5, 2}, rng);
  Tensor64 w = Tensor64::randn({3, 3, 2, 3}, rng);
  Tensor64 b = Tensor64::randn({3}, rng);
  Tensor64 out = conv2d(x, w, b);
  const auto want = oracle::conv2d_same(x.values(), w.values(), b.values(), 1, 5, 5, 2, 3, 3);
  check_close(out.values(), want, 1e-12);
}

TEST_CASE("conv2d: stride-2 same padding takes the even taps") {
  Tensor64 x = Tensor64::arange({1, 4, 4, 1});
  Tensor64 eye = Tensor64::from_data({1, 1, 1, 1}, {1.0});
  Tensor64 out = conv2d(x, eye, Tensor64::zeros({1}), 2);
  CHECK(out.shape() == Shape{1, 2, 2, 1});
  CHECK(out.values() == std::vector<double>{0, 2, 8, 10});
}

TEST_CASE("conv2d: unsupported kernel or stride is a configuration error") {
  Tensor64 x = Tensor64::zeros({1, 4, 4, 1});
  CHECK_THROWS_AS(conv2d(x, Tensor64::zeros({5, 5, 1, 1}), Tensor64::zeros({1})), ConfigError);
  CHECK_THROWS_AS(conv2d(x, Tensor64::zeros({3, 3, 1, 1}), Tensor64::zeros({1}), 3), ConfigError);
}

TEST_CASE("pixel_shuffle: unit factor, sub-pixel order and round trip") {
  RandomStream rng(10);
  Tensor64 x = Tensor64::randn({1, 3, 3, 4}, rng);
  CHECK(pixel_shuffle(x, 1).values() == x.values());

  Tensor64 quad = Tensor64::from_data({1, 1, 1, 4}, {1.0, 2.0, 3.0, 4.0});
  Tensor64 up = pixel_shuffle(quad, 2);
  CHECK(up.shape() == Shape{1, 2, 2, 1});
  CHECK(up.values() == std::vector<double>{1, 2, 3, 4});

  Tensor64 big = Tensor64::randn({2, 2, 3, 12}, rng);
  Tensor64 round = pixel_unshuffle(pixel_shuffle(big, 2), 2);
  CHECK(round.values() == big.values());

  CHECK_THROWS_AS(pixel_shuffle(Tensor64::zeros({1, 2, 2, 3}), 2), ShapeError);
}

TEST_CASE("reshape and permute round trips are bit-exact") {
  RandomStream rng(11);
  Tensor64 x = Tensor64::randn({2, 3, 4, 5}, rng);
  Tensor64 r = reshape(reshape(x, {6, 20}), {2, 3, 4, 5});
  CHECK(r.values() == x.values());
  Tensor64 p = permute(permute(x, {3, 1, 0, 2}), {2, 1, 3, 0});
  CHECK(p.shape() == x.shape());
  CHECK(p.values() == x.values());
}

TEST_CASE("backward: sum and square-sum gradients") {
  RandomStream rng(12);
  Tensor64 x = Tensor64::randn({3, 4}, rng);
  x.set_requires_grad(true);

  backward(sum_all(x));
  for (double g : x.grad()) CHECK(g == 1.0);

  backward(sum_all(mul(x, x)));
  for (int i = 0; i < 12; ++i) {
    CHECK(x.grad()[i] == doctest::Approx(2.0 * x.values()[i]).epsilon(1e-12));
  }
}

TEST_CASE("backward: a tensor with several consumers sums the contributions") {
  Tensor64 x = Tensor64::from_data({3}, {1.0, 2.0, 3.0});
  x.set_requires_grad(true);
  // y = x + x, z = sum(y * x) = 2 sum(x^2) so dz/dx = 4x.
  Tensor64 y = add(x, x);
  backward(sum_all(mul(y, x)));
  for (int i = 0; i < 3; ++i) {
    CHECK(x.grad()[i] == doctest::Approx(4.0 * x.values()[i]).epsilon(1e-12));
  }
}

TEST_CASE("backward: non-scalar loss is a usage error") {
  Tensor64 x = Tensor64::zeros({2, 2});
  x.set_requires_grad(true);
  Tensor64 y = add(x, x);
  CHECK_THROWS_AS(backward(y), UsageError);
}

TEST_CASE("no-grad mode records nothing") {
  Tensor64 x = Tensor64::ones({2});
  x.set_requires_grad(true);
  NoGradGuard guard;
  Tensor64 y = sum_all(mul(x, x));
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("finite_diff_check: exact for a linear map at a dyadic step") {
  Tensor64 x = Tensor64::from_data({4}, {0.5, 1.0, 1.5, 2.0});
  const double err = finite_diff_check<double>([&] { return sum_all(x); }, {x}, 0.25);
  CHECK(err == 0.0);
}

TEST_CASE("finite_diff_check: softmax on a 6-vector") {
  RandomStream rng(13);
  Tensor64 x = Tensor64::randn({6}, rng);
  Tensor64 probe = Tensor64::randn({6}, rng);
  const double err = finite_diff_check<double>(
      [&] { return sum_all(mul(softmax_last(x), probe)); }, {x});
  CHECK(err <= 1e-6);
}

TEST_CASE("forward operations keep finite inputs finite") {
  RandomStream rng(14);
  Tensor64 x = Tensor64::rand_uniform({4, 8}, rng, -1000.0, 1000.0);
  for (const auto& t :
       {softmax_last(x), gelu(x), l2_normalize_last(x),
        layer_norm(x, Tensor64::ones({8}), Tensor64::zeros({8}))}) {
    for (double v : t.values()) CHECK(std::isfinite(v));
  }
}
