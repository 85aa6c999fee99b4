#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <cstring>
#include <random>

#include "cyclecap/autodiff/grad_check.hpp"
#include "cyclecap/autodiff/ops.hpp"
#include "test_util.hpp"

using namespace cyclecap;
using ad::Shape;
using ad::Tensor;
using test_support::probe_weights;
using test_support::random_tensor;
using test_support::weighted_sum;

namespace {

constexpr double kTol = 1e-4;

std::size_t pick(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

// One gradient-check case: builds a random input and the scalar function to
// probe. Fixed operands and probe weights are captured by value.
struct Case {
  Tensor<double> x;
  ad::ScalarFn f;
};

using CaseFactory = std::function<Case(std::mt19937_64&)>;

Case unary_case(std::mt19937_64& rng, std::function<Tensor<double>(const Tensor<double>&)> op,
                double lo = -2.0, double hi = 2.0) {
  Shape shape{pick(rng, 1, 4), pick(rng, 1, 5)};
  auto x = random_tensor<double>(shape, rng, lo, hi);
  auto w = probe_weights(shape, rng);
  return {x, [op, w](const Tensor<double>& v) { return weighted_sum(op(v), w); }};
}

std::vector<std::pair<std::string, CaseFactory>> primitive_cases() {
  std::vector<std::pair<std::string, CaseFactory>> cases;
  auto binary = [](auto op, double lo, double hi, bool broadcast_rhs, bool probe_rhs) {
    return [=](std::mt19937_64& rng) {
      Shape shape{pick(rng, 1, 4), pick(rng, 2, 5)};
      Shape other = broadcast_rhs ? Shape{shape[1]} : shape;
      auto a = random_tensor<double>(shape, rng, lo, hi);
      auto b = random_tensor<double>(other, rng, lo, hi);
      auto w = probe_weights(shape, rng);
      if (probe_rhs) {
        return Case{b, [=](const Tensor<double>& v) { return weighted_sum(op(a, v), w); }};
      }
      return Case{a, [=](const Tensor<double>& v) { return weighted_sum(op(v, b), w); }};
    };
  };
  auto add = [](const Tensor<double>& a, const Tensor<double>& b) { return ad::add(a, b); };
  auto mul = [](const Tensor<double>& a, const Tensor<double>& b) { return ad::mul(a, b); };
  auto sub = [](const Tensor<double>& a, const Tensor<double>& b) { return ad::sub(a, b); };
  auto div = [](const Tensor<double>& a, const Tensor<double>& b) { return ad::div(a, b); };
  cases.emplace_back("add", binary(add, -1.0, 1.0, false, false));
  cases.emplace_back("add_broadcast_rhs", binary(add, -1.0, 1.0, true, true));
  cases.emplace_back("sub_rhs", binary(sub, -1.0, 1.0, false, true));
  cases.emplace_back("mul_lhs", binary(mul, -1.0, 1.0, false, false));
  cases.emplace_back("mul_broadcast_rhs", binary(mul, -1.0, 1.0, true, true));
  cases.emplace_back("div_rhs", binary(div, 0.5, 2.0, false, true));
  cases.emplace_back("matmul_lhs", [](std::mt19937_64& rng) {
    const auto m = pick(rng, 1, 4), k = pick(rng, 1, 5), n = pick(rng, 1, 4);
    auto b = random_tensor<double>({k, n}, rng);
    auto w = probe_weights({m, n}, rng);
    return Case{random_tensor<double>({m, k}, rng),
                [=](const Tensor<double>& v) { return weighted_sum(ad::matmul(v, b), w); }};
  });
  cases.emplace_back("matmul_rhs", [](std::mt19937_64& rng) {
    const auto m = pick(rng, 1, 4), k = pick(rng, 1, 5), n = pick(rng, 1, 4);
    auto a = random_tensor<double>({m, k}, rng);
    auto w = probe_weights({m, n}, rng);
    return Case{random_tensor<double>({k, n}, rng),
                [=](const Tensor<double>& v) { return weighted_sum(ad::matmul(a, v), w); }};
  });
  cases.emplace_back("conv2d_input", [](std::mt19937_64& rng) {
    const auto c = pick(rng, 1, 3), o = pick(rng, 1, 3), k = pick(rng, 1, 3);
    const auto stride = pick(rng, 1, 2), pad = pick(rng, 0, 1);
    const auto h = pick(rng, k, 6);
    auto wt = random_tensor<double>({o, c, k, k}, rng);
    auto bias = random_tensor<double>({o}, rng);
    const ad::Conv2dOptions opts{stride, pad};
    auto x = random_tensor<double>({2, c, h, h + 1}, rng);
    auto probe = probe_weights(ad::conv2d<double>(x, wt, bias, opts).shape(), rng);
    return Case{x, [=](const Tensor<double>& v) {
                  return weighted_sum(ad::conv2d<double>(v, wt, bias, opts), probe);
                }};
  });
  cases.emplace_back("conv2d_weight", [](std::mt19937_64& rng) {
    const auto c = pick(rng, 1, 3), o = pick(rng, 1, 3), k = pick(rng, 1, 3);
    const ad::Conv2dOptions opts{pick(rng, 1, 2), pick(rng, 0, 1)};
    auto x = random_tensor<double>({2, c, 5, 5}, rng);
    auto wt = random_tensor<double>({o, c, k, k}, rng);
    auto probe = probe_weights(ad::conv2d<double>(x, wt, std::nullopt, opts).shape(), rng);
    return Case{wt, [=](const Tensor<double>& v) {
                  return weighted_sum(ad::conv2d<double>(x, v, std::nullopt, opts), probe);
                }};
  });
  cases.emplace_back("conv2d_bias", [](std::mt19937_64& rng) {
    auto x = random_tensor<double>({2, 2, 4, 4}, rng);
    auto wt = random_tensor<double>({3, 2, 3, 3}, rng);
    const ad::Conv2dOptions opts{1, 1};
    auto probe = probe_weights({2, 3, 4, 4}, rng);
    return Case{random_tensor<double>({3}, rng), [=](const Tensor<double>& v) {
                  return weighted_sum(ad::conv2d<double>(x, wt, v, opts), probe);
                }};
  });
  cases.emplace_back("conv2d_transpose_input", [](std::mt19937_64& rng) {
    const auto c = pick(rng, 1, 3), o = pick(rng, 1, 3);
    const ad::Conv2dOptions opts{2, 1};
    auto wt = random_tensor<double>({c, o, 4, 4}, rng);
    auto bias = random_tensor<double>({o}, rng);
    auto x = random_tensor<double>({2, c, pick(rng, 1, 4), pick(rng, 1, 4)}, rng);
    auto probe = probe_weights(ad::conv2d_transpose<double>(x, wt, bias, opts).shape(), rng);
    return Case{x, [=](const Tensor<double>& v) {
                  return weighted_sum(ad::conv2d_transpose<double>(v, wt, bias, opts), probe);
                }};
  });
  cases.emplace_back("conv2d_transpose_weight", [](std::mt19937_64& rng) {
    const auto c = pick(rng, 1, 3), o = pick(rng, 1, 3), k = pick(rng, 2, 4);
    const ad::Conv2dOptions opts{pick(rng, 1, 2), pick(rng, 0, 1)};
    auto x = random_tensor<double>({2, c, 3, 3}, rng);
    auto wt = random_tensor<double>({c, o, k, k}, rng);
    auto probe = probe_weights(ad::conv2d_transpose<double>(x, wt, std::nullopt, opts).shape(), rng);
    return Case{wt, [=](const Tensor<double>& v) {
                  return weighted_sum(ad::conv2d_transpose<double>(x, v, std::nullopt, opts), probe);
                }};
  });
  cases.emplace_back("max_pool2d", [](std::mt19937_64& rng) {
    const auto window = pick(rng, 1, 3);
    auto x = random_tensor<double>({2, pick(rng, 1, 3), window * pick(rng, 1, 3), window * 2 + 1}, rng);
    auto probe = probe_weights(ad::max_pool2d(x, window).shape(), rng);
    return Case{x, [=](const Tensor<double>& v) {
                  return weighted_sum(ad::max_pool2d(v, window), probe);
                }};
  });
  cases.emplace_back("mean", [](std::mt19937_64& rng) {
    auto x = random_tensor<double>({pick(rng, 1, 4), pick(rng, 1, 4)}, rng);
    return Case{x, [](const Tensor<double>& v) { return ad::mean(v); }};
  });
  cases.emplace_back("sum_axis", [](std::mt19937_64& rng) {
    auto x = random_tensor<double>({pick(rng, 1, 3), pick(rng, 1, 4), pick(rng, 1, 3)}, rng);
    const auto axis = pick(rng, 0, 2);
    auto probe = probe_weights(ad::sum(x, axis).shape(), rng);
    return Case{x, [=](const Tensor<double>& v) { return weighted_sum(ad::sum(v, axis), probe); }};
  });
  cases.emplace_back("mean_axis", [](std::mt19937_64& rng) {
    auto x = random_tensor<double>({pick(rng, 1, 3), pick(rng, 1, 4)}, rng);
    const auto axis = pick(rng, 0, 1);
    auto probe = probe_weights(ad::mean(x, axis).shape(), rng);
    return Case{x, [=](const Tensor<double>& v) { return weighted_sum(ad::mean(v, axis), probe); }};
  });
  cases.emplace_back("concat", [](std::mt19937_64& rng) {
    const auto axis = pick(rng, 0, 1);
    Shape s{pick(rng, 1, 3), pick(rng, 1, 3)};
    Shape t = s;
    t[axis] = pick(rng, 1, 3);
    auto other = random_tensor<double>(t, rng);
    auto x = random_tensor<double>(s, rng);
    auto probe = probe_weights(ad::concat<double>({other, x, x}, axis).shape(), rng);
    return Case{x, [=](const Tensor<double>& v) {
                  return weighted_sum(ad::concat<double>({other, v, v}, axis), probe);
                }};
  });
  cases.emplace_back("reshape", [](std::mt19937_64& rng) {
    auto x = random_tensor<double>({pick(rng, 1, 3), 4}, rng);
    auto probe = probe_weights({2, x.dim(0) * 2}, rng);
    return Case{x, [=](const Tensor<double>& v) {
                  return weighted_sum(ad::reshape(v, {2, v.dim(0) * 2}), probe);
                }};
  });
  cases.emplace_back("slice", [](std::mt19937_64& rng) {
    auto x = random_tensor<double>({pick(rng, 1, 3), 6, 2}, rng);
    const auto b = pick(rng, 0, 3), e = pick(rng, b + 1, 6);
    auto probe = probe_weights(ad::slice(x, 1, b, e).shape(), rng);
    return Case{x, [=](const Tensor<double>& v) { return weighted_sum(ad::slice(v, 1, b, e), probe); }};
  });
  cases.emplace_back("select_columns", [](std::mt19937_64& rng) {
    const auto n = pick(rng, 1, 4), k = pick(rng, 2, 5);
    std::vector<std::size_t> idx(n);
    for (auto& i : idx) i = pick(rng, 0, k - 1);
    auto probe = probe_weights({n}, rng);
    return Case{random_tensor<double>({n, k}, rng), [=](const Tensor<double>& v) {
                  return weighted_sum(ad::select_columns(v, idx), probe);
                }};
  });
  cases.emplace_back("relu", [](std::mt19937_64& rng) {
    auto x = test_support::away_from_zero({3, 4}, rng, 0.1, 2.0);
    auto w = probe_weights({3, 4}, rng);
    return Case{x, [=](const Tensor<double>& v) { return weighted_sum(ad::relu(v), w); }};
  });
  cases.emplace_back("leaky_relu", [](std::mt19937_64& rng) {
    auto x = test_support::away_from_zero({3, 4}, rng, 0.1, 2.0);
    auto w = probe_weights({3, 4}, rng);
    return Case{x, [=](const Tensor<double>& v) { return weighted_sum(ad::leaky_relu(v, 0.2), w); }};
  });
  cases.emplace_back("abs", [](std::mt19937_64& rng) {
    auto x = test_support::away_from_zero({2, 5}, rng, 0.1, 2.0);
    auto w = probe_weights({2, 5}, rng);
    return Case{x, [=](const Tensor<double>& v) { return weighted_sum(ad::abs(v), w); }};
  });
  cases.emplace_back("sigmoid", [](std::mt19937_64& rng) {
    return unary_case(rng, [](const Tensor<double>& v) { return ad::sigmoid(v); }, -4, 4);
  });
  cases.emplace_back("tanh", [](std::mt19937_64& rng) {
    return unary_case(rng, [](const Tensor<double>& v) { return ad::tanh(v); });
  });
  cases.emplace_back("exp", [](std::mt19937_64& rng) {
    return unary_case(rng, [](const Tensor<double>& v) { return ad::exp(v); });
  });
  cases.emplace_back("log", [](std::mt19937_64& rng) {
    return unary_case(rng, [](const Tensor<double>& v) { return ad::log(v); }, 0.2, 3.0);
  });
  cases.emplace_back("square", [](std::mt19937_64& rng) {
    return unary_case(rng, [](const Tensor<double>& v) { return ad::square(v); });
  });
  cases.emplace_back("scale_add_scalar", [](std::mt19937_64& rng) {
    return unary_case(rng, [](const Tensor<double>& v) { return ad::add_scalar(ad::scale(v, -1.7), 0.3); });
  });
  cases.emplace_back("clamp", [](std::mt19937_64& rng) {
    auto x = test_support::away_from_zero({3, 3}, rng, 0.05, 0.45);
    auto w = probe_weights({3, 3}, rng);
    return Case{x, [=](const Tensor<double>& v) { return weighted_sum(ad::clamp(v, -0.5, 0.5), w); }};
  });
  cases.emplace_back("softmax", [](std::mt19937_64& rng) {
    Shape s{pick(rng, 1, 3), pick(rng, 2, 5), pick(rng, 1, 3)};
    const auto axis = pick(rng, 0, 2);
    auto x = random_tensor<double>(s, rng, -2, 2);
    auto w = probe_weights(s, rng);
    return Case{x, [=](const Tensor<double>& v) { return weighted_sum(ad::softmax(v, axis), w); }};
  });
  cases.emplace_back("log_softmax", [](std::mt19937_64& rng) {
    Shape s{pick(rng, 1, 3), pick(rng, 2, 5)};
    const auto axis = pick(rng, 0, 1);
    auto x = random_tensor<double>(s, rng, -2, 2);
    auto w = probe_weights(s, rng);
    return Case{x, [=](const Tensor<double>& v) { return weighted_sum(ad::log_softmax(v, axis), w); }};
  });
  return cases;
}

}  // namespace

TEST(Primitives, SigmoidAtZero) {
  Tensor<double> x({1}, {0.0}, true);
  auto y = ad::sigmoid(x);
  EXPECT_DOUBLE_EQ(y.item(), 0.5);
  ad::backward(ad::sum(y));
  EXPECT_DOUBLE_EQ(x.grad()[0], 0.25);
}

TEST(Primitives, SoftmaxOfEqualLogitsIsUniform) {
  for (std::size_t k : {1u, 3u, 7u}) {
    auto y = ad::softmax(Tensor<double>::full({2, k}, 0.37), 1);
    for (double v : y.data()) EXPECT_NEAR(v, 1.0 / static_cast<double>(k), 1e-15);
  }
}

TEST(Primitives, ShapeMismatchNamesBothShapes) {
  Tensor<double> a = Tensor<double>::zeros({2, 3});
  Tensor<double> b = Tensor<double>::zeros({4, 5});
  try {
    ad::matmul(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ad::ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2, 3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[4, 5]"), std::string::npos) << msg;
  }
  try {
    ad::add(a, Tensor<double>::zeros({2, 4}));
    FAIL() << "expected ShapeError";
  } catch (const ad::ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2, 3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[2, 4]"), std::string::npos) << msg;
  }
  EXPECT_THROW(ad::conv2d<double>(Tensor<double>::zeros({1, 2, 5, 5}), Tensor<double>::zeros({3, 1, 3, 3}),
                                  std::nullopt, {}),
               ad::ShapeError);
  EXPECT_THROW(ad::reshape(a, {5}), ad::ShapeError);
  EXPECT_THROW(ad::slice(a, 1, 2, 4), ad::ShapeError);
  EXPECT_THROW(ad::softmax(a, 2), ad::ShapeError);
}

TEST(Primitives, ConvOutputSizes) {
  auto y = ad::conv2d<double>(Tensor<double>::zeros({2, 3, 8, 8}), Tensor<double>::zeros({4, 3, 4, 4}),
                              std::nullopt, {2, 1});
  EXPECT_EQ(y.shape(), (Shape{2, 4, 4, 4}));
  auto z = ad::conv2d_transpose<double>(Tensor<double>::zeros({2, 4, 4, 4}), Tensor<double>::zeros({4, 3, 4, 4}),
                                        std::nullopt, {2, 1});
  EXPECT_EQ(z.shape(), (Shape{2, 3, 8, 8}));
}

TEST(Primitives, ConvMatchesDirectSum) {
  std::mt19937_64 rng(3);
  auto x = random_tensor<double>({1, 2, 5, 5}, rng);
  auto w = random_tensor<double>({3, 2, 3, 3}, rng);
  auto b = random_tensor<double>({3}, rng);
  auto y = ad::conv2d<double>(x, w, b, {2, 1});
  ASSERT_EQ(y.shape(), (Shape{1, 3, 3, 3}));
  for (std::size_t o = 0; o < 3; ++o)
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 3; ++j) {
        double acc = b.at(o);
        for (std::size_t c = 0; c < 2; ++c)
          for (std::size_t ki = 0; ki < 3; ++ki)
            for (std::size_t kj = 0; kj < 3; ++kj) {
              const int r = static_cast<int>(i * 2 + ki) - 1, s = static_cast<int>(j * 2 + kj) - 1;
              if (r < 0 || s < 0 || r >= 5 || s >= 5) continue;
              acc += w.at(((o * 2 + c) * 3 + ki) * 3 + kj) * x.at((c * 5 + r) * 5 + s);
            }
        EXPECT_NEAR(y.at((o * 3 + i) * 3 + j), acc, 1e-12);
      }
}

TEST(Primitives, ConvTransposeIsAdjointOfConv) {
  // <conv(x), y> == <x, conv_t(y)> with the same kernel.
  std::mt19937_64 rng(5);
  auto x = random_tensor<double>({2, 3, 8, 8}, rng);
  auto w = random_tensor<double>({4, 3, 4, 4}, rng);
  auto y = random_tensor<double>({2, 4, 4, 4}, rng);
  auto cx = ad::conv2d<double>(x, w, std::nullopt, {2, 1});
  auto ty = ad::conv2d_transpose<double>(y, w, std::nullopt, {2, 1});
  EXPECT_NEAR(ad::sum(ad::mul(cx, y)).item(), ad::sum(ad::mul(x, ty)).item(), 1e-10);
}

TEST(Primitives, ConvGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(11);
  auto x = random_tensor<double>({1, 3, 8, 8}, rng);
  auto w = random_tensor<double>({4, 3, 3, 3}, rng);
  auto b = random_tensor<double>({4}, rng);
  auto probe = probe_weights({1, 4, 8, 8}, rng);
  const double err = ad::grad_check(
      [&](const Tensor<double>& v) { return weighted_sum(ad::conv2d<double>(v, w, b, {1, 1}), probe); }, x,
      1e-5);
  EXPECT_LT(err, kTol);
}

TEST(Backward, SumGivesOnes) {
  Tensor<double> x({2, 3}, {1, 2, 3, 4, 5, 6}, true);
  ad::backward(ad::sum(x));
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, DotProduct) {
  Tensor<double> x({2}, {1.0, 2.0}, true);
  ad::backward(ad::sum(ad::mul(x, x)));
  EXPECT_DOUBLE_EQ(x.grad()[0], 2.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], 4.0);
}

TEST(Backward, RejectsNonScalarLoss) {
  Tensor<double> x({2}, {1.0, 2.0}, true);
  EXPECT_THROW(ad::backward(ad::mul(x, x)), ad::ShapeError);
}

TEST(Backward, SharedSubexpressionVisitedOnce) {
  Tensor<double> x({1}, {3.0}, true);
  auto y = ad::mul(x, x);           // 9
  auto z = ad::add(y, ad::mul(y, y));  // 9 + 81
  ad::backward(ad::sum(z));
  // dz/dx = (1 + 2y) * 2x = 19 * 6
  EXPECT_DOUBLE_EQ(x.grad()[0], 114.0);
}

TEST(Backward, LeafGradsAccumulateAcrossPasses) {
  Tensor<double> x({1}, {2.0}, true);
  ad::backward(ad::sum(ad::scale(x, 3.0)));
  ad::backward(ad::sum(ad::scale(x, 3.0)));
  EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
  x.zero_grad();
  EXPECT_DOUBLE_EQ(x.grad()[0], 0.0);
}

TEST(Backward, DetachCutsTheGraph) {
  Tensor<double> x({1}, {2.0}, true);
  auto y = ad::mul(x, x).detach();
  EXPECT_FALSE(y.requires_grad());
  auto z = ad::mul(x, y);
  ad::backward(ad::sum(z));
  EXPECT_DOUBLE_EQ(x.grad()[0], 4.0);
}

TEST(Backward, CompositeConvReluMean) {
  std::mt19937_64 rng(17);
  auto x = random_tensor<double>({2, 2, 6, 6}, rng);
  auto w = random_tensor<double>({3, 2, 3, 3}, rng);
  const double err = ad::grad_check(
      [&](const Tensor<double>& v) {
        return ad::mean(ad::relu(ad::conv2d<double>(v, w, std::nullopt, {1, 0})));
      },
      x, 1e-5);
  EXPECT_LT(err, kTol);
}

TEST(GradCheck, SumIsExact) {
  // Dyadic inputs and a power-of-two step keep every probe sum exact.
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> eighths(-16, 16);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<double> v(12);
    for (auto& e : v) e = eighths(rng) / 8.0;
    Tensor<double> x({3, 4}, v);
    EXPECT_EQ(ad::grad_check([](const Tensor<double>& t) { return ad::sum(t); }, x, std::ldexp(1.0, -17)), 0.0);
  }
}

TEST(GradCheck, MeanTanhOfLinearMap) {
  std::mt19937_64 rng(2);
  for (int seed = 0; seed < 5; ++seed) {
    auto w = random_tensor<double>({5, 4}, rng);
    auto x = random_tensor<double>({4, 3}, rng);
    EXPECT_LT(ad::grad_check([&](const Tensor<double>& v) { return ad::mean(ad::tanh(ad::matmul(w, v))); }, x),
              kTol);
  }
}

TEST(GradCheck, ReluAwayFromKink) {
  std::mt19937_64 rng(4);
  auto x = test_support::away_from_zero({4, 4}, rng, 0.1, 1.0);
  EXPECT_LT(ad::grad_check([](const Tensor<double>& v) { return ad::sum(ad::square(ad::relu(v))); }, x), kTol);
}

TEST(GradCheck, EveryPrimitiveOnTwentySeeds) {
  for (const auto& [name, factory] : primitive_cases()) {
    for (int seed = 0; seed < 20; ++seed) {
      std::mt19937_64 rng(1000 + static_cast<unsigned>(seed));
      auto c = factory(rng);
      const double err = ad::grad_check(c.f, c.x, 1e-5);
      EXPECT_LT(err, kTol) << name << " seed " << seed << " shape " << ad::to_string(c.x.shape());
    }
  }
}

TEST(Properties, GradientIsLinear) {
  for (int seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(static_cast<unsigned>(seed));
    auto w = random_tensor<double>({3, 4}, rng);
    auto x0 = random_tensor<double>({4, 2}, rng);
    const double a = 1.3, b = -0.6;
    auto f = [&](const Tensor<double>& v) { return ad::mean(ad::tanh(ad::matmul(w, v))); };
    auto g = [&](const Tensor<double>& v) { return ad::sum(ad::exp(ad::scale(v, 0.3))); };
    auto grad_of = [&](auto fn) {
      auto x = x0.clone();
      x.set_requires_grad(true);
      ad::backward(fn(x));
      return std::vector<double>(x.grad().begin(), x.grad().end());
    };
    const auto gf = grad_of(f);
    const auto gg = grad_of(g);
    const auto gc = grad_of([&](const Tensor<double>& v) { return ad::add(ad::scale(f(v), a), ad::scale(g(v), b)); });
    for (std::size_t i = 0; i < gc.size(); ++i) EXPECT_NEAR(gc[i], a * gf[i] + b * gg[i], 1e-10);
  }
}

TEST(Properties, DeterministicForwardAndBackward) {
  auto run = [] {
    std::mt19937_64 rng(77);
    auto x = random_tensor<float>({2, 3, 8, 8}, rng, -1.0F, 1.0F, true);
    auto w = random_tensor<float>({4, 3, 3, 3}, rng, -1.0F, 1.0F, true);
    auto y = ad::mean(ad::tanh(ad::conv2d<float>(x, w, std::nullopt, {1, 1})));
    ad::backward(y);
    std::vector<float> out{y.item()};
    out.insert(out.end(), x.grad().begin(), x.grad().end());
    out.insert(out.end(), w.grad().begin(), w.grad().end());
    return out;
  };
  const auto a = run();
  const auto b = run();
  ASSERT_EQ(a.size(), b.size());
  EXPECT_EQ(0, std::memcmp(a.data(), b.data(), a.size() * sizeof(float)));
}

TEST(Properties, LeafGradHasLeafShape) {
  std::mt19937_64 rng(9);
  auto x = random_tensor<double>({2, 3, 4}, rng, -1.0, 1.0, true);
  ad::backward(ad::mean(ad::softmax(x, 2)));
  EXPECT_EQ(x.grad().size(), x.numel());
}
