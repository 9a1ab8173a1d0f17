#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "dscomp/parameter.hpp"
#include "test_support.hpp"

using namespace dscomp;
using dscomp::testing::check_with_redraw;
using dscomp::testing::op_cases;
using dscomp::testing::random_tensor;
using dscomp::testing::weighted_sum;

namespace {

Tensor64 make(Shape s, std::vector<double> v) {
  Tensor64 t(std::move(s));
  for (std::size_t i = 0; i < v.size(); ++i) t[i] = v[i];
  return t;
}

Var<double> V(const Tensor64& t) { return constant(t); }

Tensor64 matmul_oracle(const Tensor64& a, const Tensor64& b) {
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor64 c({m, n});
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = 0; j < n; ++j) {
      double s = 0;
      for (std::int64_t p = 0; p < k; ++p) s += a.at(i, p) * b.at(p, j);
      c.at(i, j) = s;
    }
  return c;
}

Tensor64 conv_oracle(const Tensor64& x, const Tensor64& k) {
  const auto c = x.dim(0), h = x.dim(1), w = x.dim(2), co = k.dim(0);
  Tensor64 y({co, h, w});
  for (std::int64_t o = 0; o < co; ++o)
    for (std::int64_t i = 0; i < h; ++i)
      for (std::int64_t j = 0; j < w; ++j) {
        double s = 0;
        for (std::int64_t ci = 0; ci < c; ++ci)
          for (int di = -1; di <= 1; ++di)
            for (int dj = -1; dj <= 1; ++dj) {
              const auto ii = i + di, jj = j + dj;
              if (ii < 0 || jj < 0 || ii >= h || jj >= w) continue;
              s += x.at(ci, ii, jj) * k[((o * c + ci) * 3 + di + 1) * 3 + dj + 1];
            }
        y.at(o, i, j) = s;
      }
  return y;
}

}  // namespace

TEST(Tensor, RejectsNonPositiveExtents) {
  EXPECT_THROW(Tensor64({2, 0}), ShapeError);
  EXPECT_THROW(Tensor64({-1}), ShapeError);
  Tensor64 t({2, 3, 4});
  EXPECT_EQ(t.numel(), 24u);
}

TEST(Matmul, IdentityAndScalar) {
  std::mt19937_64 rng(1);
  auto a = random_tensor({3, 3}, rng);
  auto eye = make({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  EXPECT_EQ(matmul(V(a), V(eye)).value(), a);
  EXPECT_EQ(matmul(V(make({1, 1}, {2})), V(make({1, 1}, {3}))).value()[0], 6.0);
}

TEST(Matmul, MatchesTripleLoop) {
  std::mt19937_64 rng(2);
  for (int rep = 0; rep < 10; ++rep) {
    auto a = random_tensor({5, 4}, rng), b = random_tensor({4, 6}, rng);
    EXPECT_LE(max_abs_diff(matmul(V(a), V(b)).value(), matmul_oracle(a, b)), 1e-12);
  }
}

TEST(Matmul, ShapeErrorNamesBothShapes) {
  try {
    matmul(V(Tensor64({2, 3})), V(Tensor64({4, 5})));
    FAIL();
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[4x5]"), std::string::npos) << msg;
  }
}

TEST(Softmax, KnownValues) {
  auto y = softmax(V(make({2}, {0, 0})), 0).value();
  EXPECT_DOUBLE_EQ(y[0], 0.5);
  y = softmax(V(make({2}, {1, 3})), 0).value();
  const double e1 = std::exp(1.0), e3 = std::exp(3.0);
  EXPECT_NEAR(y[0], e1 / (e1 + e3), 1e-12);
  EXPECT_NEAR(y[0], 0.11920, 1e-5);
  EXPECT_NEAR(y[1], 0.88080, 1e-5);
}

TEST(Softmax, ShiftInvariantAndNormalized) {
  std::mt19937_64 rng(3);
  for (int rep = 0; rep < 20; ++rep) {
    auto x = random_tensor({4, 7}, rng, 5.0);
    auto y = softmax(V(x), 1).value();
    auto ys = softmax(add_scalar(V(x), 123.0), 1).value();
    EXPECT_LE(max_abs_diff(y, ys), 1e-12);
    for (int i = 0; i < 4; ++i) {
      double s = 0;
      for (int j = 0; j < 7; ++j) {
        EXPECT_GE(y.at(i, j), 0.0);
        s += y.at(i, j);
      }
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
    auto y0 = softmax(V(x), 0).value();
    for (int j = 0; j < 7; ++j) {
      double s = 0;
      for (int i = 0; i < 4; ++i) s += y0.at(i, j);
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
  }
}

TEST(Softmax, LargeInputsStayFinite) {
  auto y = softmax(V(make({3}, {1000, 1001, -1000})), 0).value();
  EXPECT_TRUE(y.all_finite());
  EXPECT_NEAR(y[0] + y[1] + y[2], 1.0, 1e-12);
}

TEST(LayerNorm, KnownValues) {
  auto y = layer_norm(V(make({1, 3}, {1, 2, 3}))).value();
  EXPECT_NEAR(y[0], -1.22474, 1e-4);
  EXPECT_NEAR(y[1], 0.0, 1e-4);
  EXPECT_NEAR(y[2], 1.22474, 1e-4);
  const double oracle = 1.0 / std::sqrt(2.0 / 3.0 + 1e-5);
  EXPECT_NEAR(y[2], oracle, 1e-12);
  auto c = layer_norm(V(make({1, 4}, {5, 5, 5, 5})), V(Tensor64::ones({4})), V(Tensor64::zeros({4}))).value();
  for (double v : c.data()) EXPECT_EQ(v, 0.0);
}

TEST(LayerNorm, StandardizesRows) {
  std::mt19937_64 rng(4);
  for (int rep = 0; rep < 20; ++rep) {
    auto x = random_tensor({3, 32}, rng, 4.0);
    auto y = layer_norm(V(x), V(Tensor64::ones({32})), V(Tensor64::zeros({32}))).value();
    for (int i = 0; i < 3; ++i) {
      double m = 0, v = 0;
      for (int j = 0; j < 32; ++j) m += y.at(i, j);
      m /= 32;
      for (int j = 0; j < 32; ++j) v += (y.at(i, j) - m) * (y.at(i, j) - m);
      v /= 32;
      EXPECT_LE(std::abs(m), 1e-6);
      EXPECT_NEAR(v, 1.0, 1e-4);
    }
  }
}

TEST(Gelu, KnownValues) {
  auto y = gelu(V(make({3}, {0, 10, 1}))).value();
  EXPECT_EQ(y[0], 0.0);
  EXPECT_NEAR(y[1], 10.0, 1e-6);
  EXPECT_NEAR(y[2], 0.84134, 1e-4);
  EXPECT_NEAR(y[2], 0.5 * (1 + std::erf(1 / std::sqrt(2.0))), 1e-12);
}

TEST(Gelu, GradientAtZeroIsHalf) {
  Var<double> x(make({1}, {0}), true);
  sum(gelu(x)).backward();
  EXPECT_NEAR(x.grad()[0], 0.5, 1e-6);
}

TEST(Relu, ValuesAndIdempotence) {
  auto y = relu(V(make({3}, {-1, 0, 2}))).value();
  EXPECT_EQ(y, make({3}, {0, 0, 2}));
  std::mt19937_64 rng(5);
  auto x = random_tensor({10}, rng);
  EXPECT_EQ(relu(relu(V(x))).value(), relu(V(x)).value());
}

TEST(Relu, GradientByCentralDifferences) {
  ScalarFn f = [](const std::vector<Var<double>>& in) { return sum(relu(in[0])); };
  for (double x0 : {3.0, -3.0}) {
    auto r = check_gradients(f, {make({1}, {x0})});
    ASSERT_TRUE(r.passed) << r.message;
    EXPECT_NEAR(r.worst_analytic, x0 > 0 ? 1.0 : 0.0, 1e-6);
    EXPECT_NEAR(r.worst_numeric, x0 > 0 ? 1.0 : 0.0, 1e-6);
  }
}

TEST(Conv2d, DeltaKernelIsIdentity) {
  std::mt19937_64 rng(6);
  auto x = random_tensor({1, 5, 6}, rng);
  Tensor64 k({1, 1, 3, 3});
  k[4] = 1;
  EXPECT_EQ(conv2d(V(x), V(k)).value(), x);
}

TEST(Conv2d, OnesKernelOnConstantImage) {
  Tensor64 x({1, 5, 5}, 2.5);
  auto y = conv2d(V(x), V(Tensor64::ones({1, 1, 3, 3}))).value();
  for (int i = 1; i < 4; ++i)
    for (int j = 1; j < 4; ++j) EXPECT_DOUBLE_EQ(y.at(0, i, j), 22.5);
  EXPECT_DOUBLE_EQ(y.at(0, 0, 0), 10.0);
}

TEST(Conv2d, MatchesLoopOracle) {
  std::mt19937_64 rng(7);
  for (int rep = 0; rep < 10; ++rep) {
    auto x = random_tensor({2, 5, 5}, rng), k = random_tensor({3, 2, 3, 3}, rng);
    EXPECT_LE(max_abs_diff(conv2d(V(x), V(k)).value(), conv_oracle(x, k)), 1e-10);
  }
}

TEST(Conv2d, ChannelMismatchThrows) {
  EXPECT_THROW(conv2d(V(Tensor64({2, 4, 4})), V(Tensor64({1, 3, 3, 3}))), ShapeError);
}

TEST(Concat, SingletonShapesAndRoundTrip) {
  std::mt19937_64 rng(8);
  auto a = random_tensor({3, 2}, rng), b = random_tensor({5, 2}, rng);
  EXPECT_EQ(concat<double>({V(a)}, 0).value(), a);
  auto c = concat<double>({V(a), V(b)}, 0);
  EXPECT_EQ(c.shape(), (Shape{8, 2}));
  EXPECT_EQ(slice(c, 0, 0, 3).value(), a);
  EXPECT_EQ(slice(c, 0, 3, 8).value(), b);
  EXPECT_THROW(concat<double>({V(a), V(random_tensor({5, 3}, rng))}, 0), ShapeError);
}

TEST(GradCheck, SquareAtThree) {
  ScalarFn f = [](const std::vector<Var<double>>& in) { return sum(square(in[0])); };
  auto r = check_gradients(f, {make({1}, {3})});
  EXPECT_TRUE(r.passed);
  EXPECT_LT(r.max_rel_error, 1e-8);
  EXPECT_DOUBLE_EQ(r.worst_analytic, 6.0);
}

TEST(GradCheck, ReportsNonFiniteValue) {
  ScalarFn f = [](const std::vector<Var<double>>& in) { return sum(scale(in[0], 1e308 * 10)); };
  auto r = check_gradients(f, {make({1}, {1})});
  EXPECT_FALSE(r.passed);
  EXPECT_FALSE(r.finite);
}

TEST(GradCheck, FlagsWrongGradient) {
  // Detaches half of the product so the analytic gradient is wrong.
  ScalarFn f = [](const std::vector<Var<double>>& in) { return sum(mul(in[0], constant(in[0].value()))); };
  auto r = check_gradients(f, {make({2}, {1.5, -2})});
  EXPECT_FALSE(r.passed);
  EXPECT_GT(r.max_rel_error, 0.4);
}

TEST(Autograd, NoGradGuardSkipsRecording) {
  Var<double> x(make({2}, {1, 2}), true);
  {
    NoGradGuard guard;
    EXPECT_FALSE(grad_enabled());
    EXPECT_FALSE(square(x).requires_grad());
  }
  EXPECT_TRUE(grad_enabled());
  EXPECT_TRUE(square(x).requires_grad());
}

TEST(Autograd, SharedSubexpressionAccumulates) {
  Var<double> x(make({1}, {2}), true);
  auto y = mul(x, x);
  sum(add(y, y)).backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 8.0);
}

TEST(Parameter, ZeroGradAndShapes) {
  std::mt19937_64 rng(9);
  Parameter<double> p("w", random_tensor({3, 2}, rng));
  sum(square(p.var)).backward();
  EXPECT_EQ(p.grad().shape(), p.shape());
  const auto before = p.grad();
  bool nonzero = false;
  for (double g : before.data()) nonzero |= g != 0;
  EXPECT_TRUE(nonzero);
  p.zero_grad();
  const auto after = p.grad();
  for (double g : after.data()) EXPECT_EQ(g, 0.0);
  auto c = p.clone();
  c.mutable_value()[0] += 1;
  EXPECT_NE(c.value()[0], p.value()[0]);
}

class OpGradient : public ::testing::TestWithParam<std::size_t> {};

TEST_P(OpGradient, HundredRandomInstances) {
  const auto cases = op_cases();
  const auto& c = cases[GetParam()];
  std::mt19937_64 rng(1000 + GetParam());
  for (int rep = 0; rep < 100; ++rep) {
    auto r = check_with_redraw(c.fn, c.draw, rng);
    ASSERT_TRUE(r.passed) << c.name << " instance " << rep << ": " << r.message;
  }
}

INSTANTIATE_TEST_SUITE_P(AllOps, OpGradient, ::testing::Range<std::size_t>(0, 16),
                         [](const auto& info) { return std::string(op_cases()[info.param].name); });

TEST(Finiteness, ForwardOpsOnFiniteInputs) {
  std::mt19937_64 rng(11);
  for (const auto& c : op_cases()) {
    auto inputs = c.draw(rng);
    std::vector<Var<double>> vars;
    for (auto& t : inputs) vars.emplace_back(t, false);
    EXPECT_TRUE(c.fn(vars).value().all_finite()) << c.name;
  }
}
