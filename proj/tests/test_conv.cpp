#include <gtest/gtest.h>

#include <random>

#include "hxbcos/conv.hpp"
#include "hxbcos/ops.hpp"
#include "oracles.hpp"

using namespace hxb;

namespace {

std::vector<double> vec(std::span<const double> s) { return {s.begin(), s.end()}; }

struct Case {
  std::size_t n, cin, cout, h, w, k, stride, pad;
};

const Case kCases[] = {
    {1, 1, 1, 5, 5, 3, 1, 1}, {2, 3, 4, 7, 6, 3, 2, 1}, {1, 6, 8, 9, 9, 3, 1, 0},
    {3, 2, 5, 4, 4, 1, 1, 0}, {1, 4, 3, 8, 5, 3, 2, 0}, {2, 5, 2, 6, 7, 2, 1, 1},
};

}  // namespace

TEST(Conv, OutExtent) {
  ConvGeometry g{3, 3, 2, 1};
  EXPECT_EQ(g.out_h(64), 32u);
  EXPECT_EQ(g.out_w(7), 4u);
  ConvGeometry tight{5, 5, 1, 0};
  EXPECT_THROW(tight.out_h(3), ShapeError);
}

TEST(Conv, MatchesLoopOracle) {
  for (const auto& c : kCases) {
    std::mt19937_64 rng(c.cin * 31 + c.cout);
    const auto x = oracle::random_vec(c.n * c.cin * c.h * c.w, rng);
    const auto w = oracle::random_vec(c.cout * c.cin * c.k * c.k, rng);
    Tensor y = conv2d(Tensor({c.n, c.cin, c.h, c.w}, x), Tensor({c.cout, c.cin, c.k, c.k}, w), c.stride, c.pad);
    const auto ref = oracle::conv2d(x, c.n, c.cin, c.h, c.w, w, c.cout, c.k, c.k, c.stride, c.pad);
    ASSERT_EQ(y.numel(), ref.size());
    EXPECT_EQ(y.shape()[2], oracle::out_extent(c.h, c.k, c.stride, c.pad));
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y.data()[i], ref[i], 1e-12);
  }
}

TEST(Conv, RejectsChannelMismatch) {
  EXPECT_THROW(conv2d(Tensor({1, 3, 4, 4}), Tensor({2, 4, 3, 3}), 1, 1), ShapeError);
  EXPECT_THROW(conv2d(Tensor({3, 4, 4}), Tensor({2, 3, 3, 3}), 1, 1), ShapeError);
}

TEST(Conv, PatchNormsMatchLoopOracle) {
  for (const auto& c : kCases) {
    std::mt19937_64 rng(c.h * 7 + c.w);
    const auto x = oracle::random_vec(c.n * c.cin * c.h * c.w, rng);
    Tensor y = patch_norms(Tensor({c.n, c.cin, c.h, c.w}, x), ConvGeometry{c.k, c.k, c.stride, c.pad});
    const auto ref = oracle::patch_norms(x, c.n, c.cin, c.h, c.w, c.k, c.k, c.stride, c.pad);
    ASSERT_EQ(y.numel(), ref.size());
    EXPECT_EQ(y.shape()[1], 1u);
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y.data()[i], ref[i], 1e-12);
  }
}

TEST(Conv, GradientsMatchFiniteDifferences) {
  const Case c{2, 3, 4, 5, 6, 3, 2, 1};
  std::mt19937_64 rng(5);
  const auto x0 = oracle::random_vec(c.n * c.cin * c.h * c.w, rng);
  const auto w0 = oracle::random_vec(c.cout * c.cin * c.k * c.k, rng);
  const std::size_t oh = oracle::out_extent(c.h, c.k, c.stride, c.pad);
  const std::size_t ow = oracle::out_extent(c.w, c.k, c.stride, c.pad);
  const auto r = oracle::random_vec(c.n * c.cout * oh * ow, rng);
  const Shape xs{c.n, c.cin, c.h, c.w}, ws{c.cout, c.cin, c.k, c.k}, ys{c.n, c.cout, oh, ow};

  Tensor x = Tensor(xs, x0).set_requires_grad(true);
  Tensor w = Tensor(ws, w0).set_requires_grad(true);
  sum(mul(conv2d(x, w, c.stride, c.pad), Tensor(ys, r))).backward();

  auto fx = [&](const oracle::Vec& p) {
    NoGradGuard g;
    return sum(mul(conv2d(Tensor(xs, p), Tensor(ws, w0), c.stride, c.pad), Tensor(ys, r))).item();
  };
  auto fw = [&](const oracle::Vec& p) {
    NoGradGuard g;
    return sum(mul(conv2d(Tensor(xs, x0), Tensor(ws, p), c.stride, c.pad), Tensor(ys, r))).item();
  };
  EXPECT_LE(oracle::max_relative_error(vec(x.grad()), oracle::finite_difference(fx, x0)), 1e-6);
  EXPECT_LE(oracle::max_relative_error(vec(w.grad()), oracle::finite_difference(fw, w0)), 1e-6);
}

TEST(Conv, PatchNormGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(9);
  const Shape xs{1, 3, 5, 5};
  const auto x0 = oracle::random_vec(numel(xs), rng, 0.1, 1.0);
  const ConvGeometry g{3, 3, 1, 1};
  const auto r = oracle::random_vec(25, rng);
  Tensor x = Tensor(xs, x0).set_requires_grad(true);
  sum(mul(patch_norms(x, g), Tensor({1, 1, 5, 5}, r))).backward();
  auto f = [&](const oracle::Vec& p) {
    NoGradGuard guard;
    return sum(mul(patch_norms(Tensor(xs, p), g), Tensor({1, 1, 5, 5}, r))).item();
  };
  EXPECT_LE(oracle::max_relative_error(vec(x.grad()), oracle::finite_difference(f, x0)), 1e-3);
}
