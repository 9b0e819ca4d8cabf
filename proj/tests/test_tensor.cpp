#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "hxbcos/ops.hpp"
#include "oracles.hpp"

using namespace hxb;

namespace {

Tensor leaf(Shape s, std::vector<double> v) { return Tensor(std::move(s), std::move(v)).set_requires_grad(true); }

std::vector<double> vec(std::span<const double> s) { return {s.begin(), s.end()}; }

}  // namespace

TEST(Tensor, ConstructionValidatesSize) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), ShapeError);
  Tensor t({2, 3}, 1.5);
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_DOUBLE_EQ(t.at({1, 2}), 1.5);
}

TEST(Tensor, AbsValueAndGradient) {
  Tensor x = leaf({1}, {-3.0});
  Tensor y = sum(abs(x));
  EXPECT_DOUBLE_EQ(y.item(), 3.0);
  y.backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], -1.0);
}

TEST(Tensor, AbsSubgradientAtZeroIsZero) {
  Tensor x = leaf({1}, {0.0});
  sum(abs(x)).backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 0.0);
}

TEST(Tensor, PowOneIsIdentity) {
  Tensor c = leaf({3}, {-2.0, 0.0, 5.5});
  Tensor y = pow_const(c, 1.0);
  EXPECT_EQ(vec(y.data()), vec(c.data()));
  sum(y).backward();
  for (double g : c.grad()) EXPECT_DOUBLE_EQ(g, 1.0);
}

TEST(Tensor, MulByScalarZero) {
  Tensor a = leaf({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor z = leaf({1}, {0.0});
  Tensor y = mul(a, z);
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
  sum(y).backward();
  EXPECT_DOUBLE_EQ(z.grad()[0], 21.0);
  for (double g : a.grad()) EXPECT_DOUBLE_EQ(g, 0.0);
}

TEST(Tensor, SignHasZeroGradient) {
  Tensor x = leaf({3}, {-2.0, 0.0, 4.0});
  Tensor y = sign(x);
  EXPECT_EQ(vec(y.data()), (std::vector<double>{-1.0, 0.0, 1.0}));
  sum(mul(y, x)).backward();
  EXPECT_EQ(vec(x.grad()), (std::vector<double>{-1.0, 0.0, 1.0}));
}

TEST(Tensor, BroadcastTrailingSingletonAndScalar) {
  Tensor a({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor b({2, 1}, {10, 20});
  EXPECT_EQ(vec(add(a, b).data()), (std::vector<double>{11, 12, 13, 24, 25, 26}));
  EXPECT_EQ(vec(mul(a, Tensor::scalar(2.0)).data()), (std::vector<double>{2, 4, 6, 8, 10, 12}));
}

TEST(Tensor, BroadcastMismatchNamesBothShapes) {
  Tensor a({2, 3});
  Tensor b({3, 2});
  try {
    add(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2,3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[3,2]"), std::string::npos) << msg;
  }
}

TEST(Tensor, Reductions) {
  Tensor t({3}, {1, 2, 3});
  EXPECT_DOUBLE_EQ(sum(t).item(), 6.0);
  EXPECT_DOUBLE_EQ(mean(t).item(), 2.0);
  EXPECT_DOUBLE_EQ(l2_norm(Tensor({2}, {3, 4}), {0}).item(), 5.0);
  EXPECT_THROW(sum(t, {}), ShapeError);
  EXPECT_THROW(sum(t, {1}), ShapeError);
}

TEST(Tensor, MaxOverAxisTieGoesToFirst) {
  Tensor x = leaf({2}, {5, 5});
  Tensor m = max_over_axis(x, 0);
  EXPECT_DOUBLE_EQ(m.item(), 5.0);
  sum(m).backward();
  EXPECT_EQ(vec(x.grad()), (std::vector<double>{1.0, 0.0}));
}

TEST(Tensor, DetachFreezesFactor) {
  Tensor x = leaf({1}, {3.0});
  Tensor y = mul(detach(x), x);
  EXPECT_DOUBLE_EQ(y.item(), 9.0);
  y.backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 3.0);
}

TEST(Tensor, DetachIsIdempotent) {
  Tensor x = leaf({2}, {1.0, -2.0});
  Tensor a = detach(x), b = detach(detach(x));
  EXPECT_EQ(vec(a.data()), vec(b.data()));
  EXPECT_TRUE(b.is_detached());
  EXPECT_FALSE(b.requires_grad());
}

TEST(Tensor, LossFromDetachedValuesGivesNoGradient) {
  Tensor x = leaf({3}, {1, 2, 3});
  Tensor loss = sum(mul(detach(x), detach(x)));
  loss.backward();
  EXPECT_FALSE(x.has_grad() && std::any_of(x.grad().begin(), x.grad().end(), [](double g) { return g != 0.0; }));
}

TEST(Tensor, DetachDoesNotChangeForwardValues) {
  std::mt19937_64 rng(3);
  Tensor x = Tensor::randn({4, 5}, rng);
  auto f = [](const Tensor& a, bool d) {
    Tensor u = mul(a, a);
    if (d) u = detach(u);
    return sqrt(add(abs(sub(u, a)), 1.0));
  };
  EXPECT_EQ(vec(f(x, false).data()), vec(f(x, true).data()));
}

TEST(Tensor, BackwardSquare) {
  Tensor x = leaf({1}, {3.0});
  sum(mul(x, x)).backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
}

TEST(Tensor, BackwardFanOutAccumulates) {
  Tensor x = leaf({1}, {1.0});
  sum(add(x, x)).backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 2.0);
}

TEST(Tensor, BackwardRejectsNonScalar) {
  Tensor x = leaf({2}, {1.0, 2.0});
  EXPECT_THROW(mul(x, x).backward(), ShapeError);
}

TEST(Tensor, GradReturnsRequestedInputsOnly) {
  Tensor a = leaf({2}, {1.0, 2.0});
  Tensor b = leaf({2}, {3.0, 4.0});
  Tensor y = sum(mul(a, b));
  auto g = grad(y, {a});
  EXPECT_EQ(vec(g[0].data()), (std::vector<double>{3.0, 4.0}));
  EXPECT_FALSE(a.has_grad());
  EXPECT_FALSE(b.has_grad());
}

TEST(Tensor, NoGradGuardSkipsGraph) {
  Tensor a = leaf({2}, {1.0, 2.0});
  NoGradGuard g;
  EXPECT_FALSE(mul(a, a).requires_grad());
}

// Random six-operation expression checked against central differences at
// points away from kinks.
TEST(Tensor, RandomExpressionMatchesFiniteDifferences) {
  for (int seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(static_cast<std::uint64_t>(seed));
    const auto a0 = oracle::random_vec(6, rng, 0.2, 1.5);
    const auto b0 = oracle::random_vec(6, rng, -1.5, 1.5);
    auto build = [](const Tensor& a, const Tensor& b) {
      Tensor u = mul(a, b);                       // 1
      Tensor v = div(u, add(a, 1.0));             // 2
      Tensor w = sigmoid(v);                      // 3
      Tensor z = mul(pow_const(a, 1.5), w);       // 4
      Tensor e = add(exp(mul(b, 0.5)), log(a));   // 5
      return sum(mul(sqrt(add(mul(z, z), 0.1)), e));  // 6
    };
    Tensor a = leaf({6}, a0), b = leaf({6}, b0);
    build(a, b).backward();
    std::vector<double> joint = a0;
    joint.insert(joint.end(), b0.begin(), b0.end());
    auto f = [&](const oracle::Vec& p) {
      NoGradGuard g;
      return build(Tensor({6}, {p.begin(), p.begin() + 6}), Tensor({6}, {p.begin() + 6, p.end()})).item();
    };
    auto numeric = oracle::finite_difference(f, joint);
    auto analytic = vec(a.grad());
    analytic.insert(analytic.end(), b.grad().begin(), b.grad().end());
    EXPECT_LE(oracle::max_relative_error(analytic, numeric), 1e-3) << "seed " << seed;
  }
}

TEST(Tensor, UnaryOpsMatchFiniteDifferences) {
  using Op = Tensor (*)(const Tensor&);
  const std::vector<std::pair<const char*, Op>> ops = {
      {"abs", [](const Tensor& x) { return abs(x); }},       {"sqrt", [](const Tensor& x) { return sqrt(abs(x)); }},
      {"sigmoid", [](const Tensor& x) { return sigmoid(x); }}, {"log", [](const Tensor& x) { return log(abs(x)); }},
      {"exp", [](const Tensor& x) { return exp(x); }},       {"pow", [](const Tensor& x) { return pow_const(abs(x), 2.5); }},
      {"max2", [](const Tensor& x) { return max2(x, 0.1); }}};
  for (const auto& [name, op] : ops) {
    for (int seed = 0; seed < 100; ++seed) {
      std::mt19937_64 rng(static_cast<std::uint64_t>(seed));
      auto x0 = oracle::random_vec(5, rng, -2.0, 2.0);
      for (auto& v : x0) {
        if (std::abs(v) < 0.05) v += 0.2;
        if (std::abs(v - 0.1) < 0.05) v += 0.2;
      }
      const auto r = oracle::random_vec(5, rng);
      Tensor x = leaf({5}, x0);
      sum(mul(op(x), Tensor({5}, r))).backward();
      auto f = [&](const oracle::Vec& p) {
        NoGradGuard g;
        return sum(mul(op(Tensor({5}, p)), Tensor({5}, r))).item();
      };
      EXPECT_LE(oracle::max_relative_error(vec(x.grad()), oracle::finite_difference(f, x0)), 1e-3)
          << name << " seed " << seed;
    }
  }
}

TEST(Tensor, ReductionsAndStructuralOpsMatchFiniteDifferences) {
  std::mt19937_64 rng(11);
  const auto x0 = oracle::random_vec(24, rng);
  const auto r = oracle::random_vec(12, rng);
  auto build = [&](const Tensor& x) {
    Tensor t = x.reshape({2, 3, 4});
    Tensor a = l2_norm(t, {2});                          // [2,3,1]
    Tensor b = mean(t, {1, 2});                          // [2,1,1]
    Tensor c = max_over_axis(t, 2);                      // [2,3,1]
    Tensor d = concat({mul(a, b), c}, 1).reshape({12});  // [2,6,1]
    return add(sum(mul(d, Tensor({12}, r))), sum(global_avg_pool(t.reshape({1, 2, 3, 4}))));
  };
  Tensor x = leaf({24}, x0);
  build(x).backward();
  auto f = [&](const oracle::Vec& p) {
    NoGradGuard g;
    return build(Tensor({24}, p)).item();
  };
  EXPECT_LE(oracle::max_relative_error(vec(x.grad()), oracle::finite_difference(f, x0)), 1e-3);
}
