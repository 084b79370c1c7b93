#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "sfnet/adam.hpp"
#include "sfnet/grad_check.hpp"
#include "sfnet/ops.hpp"
#include "test_support.hpp"

namespace sfnet {
namespace {

using T = Tensor<double>;
using testing::random_tensor;

// Random weighted sum so that gradients of row-normalised ops are not
// identically zero.
Var probe(Tape<double>& tape, Var y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return weighted_sum(tape, y, random_tensor(tape.value(y).shape(), rng));
}

TEST(Tensor, ShapeMustMatchData) {
  EXPECT_THROW(T({2, 3}, std::vector<double>(5)), DimensionError);
  T t({2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t(1, 2), 6.0);
  EXPECT_EQ(t.reshaped({3, 2})(2, 1), 6.0);
}

TEST(Linear, IdentityWeights) {
  Tape<double> tape;
  const Var y = linear(tape, tape.leaf(T({1, 2}, {1, 2})), tape.leaf(T({2, 2}, {1, 0, 0, 1})),
                       tape.leaf(T({2}, {0, 0})));
  EXPECT_EQ(tape.value(y), T({1, 2}, {1, 2}));
}

TEST(Linear, ZeroWeightsGiveBias) {
  Tape<double> tape;
  const Var y = linear(tape, tape.leaf(T({1, 2}, {1, 2})), tape.leaf(T({2, 2})),
                       tape.leaf(T({2}, {3, 4})));
  EXPECT_EQ(tape.value(y), T({1, 2}, {3, 4}));
}

TEST(Linear, ShapeMismatchNamesBothShapes) {
  Tape<double> tape;
  try {
    linear(tape, tape.leaf(T({1, 3})), tape.leaf(T({2, 2})), tape.leaf(T({2})));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("[1,3]"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("[2,2]"), std::string::npos);
  }
}

TEST(Linear, GradientOfSumMatchesFiniteDifferences) {
  std::mt19937_64 rng(1);
  const auto report = grad_check(
      [](Tape<double>& t, std::span<const Var> p) { return sum(t, linear(t, p[0], p[1], p[2])); },
      {random_tensor({2, 3, 4}, rng), random_tensor({4, 5}, rng), random_tensor({5}, rng)});
  EXPECT_LT(report.worst, 1e-6);
  EXPECT_TRUE(report.passed);
}

TEST(TemporalConv, WidthOneIdentityKernelIsIdentity) {
  std::mt19937_64 rng(2);
  const T x = random_tensor({2, 5, 3}, rng);
  T kernel({1, 3, 3});
  for (std::size_t i = 0; i < 3; ++i) kernel(0, i, i) = 1.0;
  Tape<double> tape;
  const Var y = temporal_conv1d(tape, tape.leaf(x), tape.leaf(kernel), tape.leaf(T({3})));
  EXPECT_EQ(tape.value(y), x);
}

TEST(TemporalConv, ZeroInputGivesBias) {
  std::mt19937_64 rng(3);
  Tape<double> tape;
  const Var y = temporal_conv1d(tape, tape.leaf(T({1, 4, 2})), tape.leaf(random_tensor({3, 2, 2}, rng)),
                                tape.leaf(T({2}, {0.5, -1.5})));
  for (std::size_t t = 0; t < 4; ++t) {
    EXPECT_EQ(tape.value(y)(0, t, 0), 0.5);
    EXPECT_EQ(tape.value(y)(0, t, 1), -1.5);
  }
}

TEST(TemporalConv, EvenWidthIsConfigError) {
  Tape<double> tape;
  EXPECT_THROW(temporal_conv1d(tape, tape.leaf(T({1, 4, 2})), tape.leaf(T({2, 2, 2})),
                               tape.leaf(T({2}))),
               ConfigError);
}

TEST(TemporalConv, MatchesDirectZeroPaddedSum) {
  std::mt19937_64 rng(4);
  const T x = random_tensor({2, 6, 3}, rng);
  const T k = random_tensor({5, 3, 2}, rng);
  const T b = random_tensor({2}, rng);
  Tape<double> tape;
  const T y = tape.value(temporal_conv1d(tape, tape.leaf(x), tape.leaf(k), tape.leaf(b)));
  for (std::size_t n = 0; n < 2; ++n) {
    for (int t = 0; t < 6; ++t) {
      for (std::size_t o = 0; o < 2; ++o) {
        double acc = b[o];
        for (int j = 0; j < 5; ++j) {
          const int src = t + j - 2;
          if (src < 0 || src >= 6) continue;
          for (std::size_t i = 0; i < 3; ++i) acc += x(n, src, i) * k(j, i, o);
        }
        EXPECT_NEAR(y(n, t, o), acc, 1e-12);
      }
    }
  }
}

TEST(TemporalConv, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(5);
  const auto report = grad_check(
      [](Tape<double>& t, std::span<const Var> p) {
        return probe(t, temporal_conv1d(t, p[0], p[1], p[2]), 11);
      },
      {random_tensor({2, 7, 3}, rng), random_tensor({3, 3, 4}, rng), random_tensor({4}, rng)});
  EXPECT_LT(report.worst, 1e-6);
}

TEST(Softmax, UniformAndStable) {
  Tape<double> tape;
  const T u = tape.value(softmax(tape, tape.leaf(T({3}, {0, 0, 0}))));
  for (double v : u.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
  const T s = tape.value(softmax(tape, tape.leaf(T({3}, {1000, 0, 0}))));
  EXPECT_NEAR(s[0], 1.0, 1e-12);
  EXPECT_NEAR(s[1], 0.0, 1e-12);
  EXPECT_TRUE(s.all_finite());
}

TEST(Softmax, OneTwoThree) {
  // exp(k) / (e + e^2 + e^3), evaluated at high precision.
  Tape<double> tape;
  const T s = tape.value(softmax(tape, tape.leaf(T({3}, {1, 2, 3}))));
  EXPECT_NEAR(s[0], 0.09003057317038046, 1e-12);
  EXPECT_NEAR(s[1], 0.24472847105479767, 1e-12);
  EXPECT_NEAR(s[2], 0.6652409557748219, 1e-12);
}

TEST(Softmax, RowsSumToOneForLargeInputs) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(-1e4, 1e4);
  T x({200, 7});
  for (auto& v : x.data()) v = u(rng);
  const T s = softmax_values(x);
  for (std::size_t r = 0; r < 200; ++r) {
    double total = 0.0;
    for (std::size_t c = 0; c < 7; ++c) total += s(r, c);
    EXPECT_NEAR(total, 1.0, 1e-9);
  }
}

TEST(Softmax, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(7);
  for (auto op : {&softmax<double>, &log_softmax<double>}) {
    const auto report = grad_check(
        [op](Tape<double>& t, std::span<const Var> p) { return probe(t, op(t, p[0]), 13); },
        {random_tensor({4, 5}, rng, 2.0)});
    EXPECT_LT(report.worst, 1e-6);
  }
}

TEST(Sigmoid, ValuesAndLimits) {
  Tape<double> tape;
  const T s = tape.value(sigmoid(tape, tape.leaf(T({3}, {0.0, -800.0, 800.0}))));
  EXPECT_EQ(s[0], 0.5);
  EXPECT_GE(s[1], 0.0);
  EXPECT_TRUE(std::isfinite(s[1]));
  EXPECT_EQ(s[2], 1.0);
  const T ls = tape.value(log_sigmoid(tape, tape.leaf(T({2}, {-800.0, 800.0}))));
  EXPECT_NEAR(ls[0], -800.0, 1e-9);
  EXPECT_EQ(ls[1], 0.0);
}

TEST(Sigmoid, GradientIsSigmaTimesOneMinusSigma) {
  const T x({4}, {-3.0, -0.2, 0.7, 2.5});
  Tape<double> tape;
  const Var in = tape.leaf(x, true);
  tape.backward(sum(tape, sigmoid(tape, in)));
  const T g = tape.grad(in);
  for (std::size_t i = 0; i < 4; ++i) {
    const double s = 1.0 / (1.0 + std::exp(-x[i]));
    EXPECT_NEAR(g[i], s * (1.0 - s), 1e-15);
  }
  std::mt19937_64 rng(8);
  for (auto op : {&sigmoid<double>, &log_sigmoid<double>, &relu<double>}) {
    const auto report = grad_check(
        [op](Tape<double>& t, std::span<const Var> p) { return probe(t, op(t, p[0]), 17); },
        {random_tensor({10}, rng, 3.0)});
    EXPECT_LT(report.worst, 1e-6);
  }
}

TEST(TopkMean, Examples) {
  Tape<double> tape;
  EXPECT_EQ(tape.value(topk_mean(tape, tape.leaf(T({3}, {1, 5, 3})), 1)).item(), 5.0);
  EXPECT_EQ(tape.value(topk_mean(tape, tape.leaf(T({3}, {1, 5, 3})), 3)).item(), 3.0);
  EXPECT_THROW(topk_mean(tape, tape.leaf(T({3})), 0), ArgumentError);
  EXPECT_THROW(topk_mean(tape, tape.leaf(T({3})), 4), ArgumentError);
}

TEST(TopkMean, TieGoesToLowerIndex) {
  Tape<double> tape;
  const Var x = tape.leaf(T({3}, {2, 2, 0}), true);
  const Var y = topk_mean(tape, x, 2);
  EXPECT_EQ(tape.value(y).item(), 2.0);
  tape.backward(y);
  EXPECT_EQ(tape.grad(x), T({3}, {0.5, 0.5, 0.0}));

  Tape<double> tape2;
  const Var x2 = tape2.leaf(T({4}, {1, 3, 3, 3}), true);
  tape2.backward(topk_mean(tape2, x2, 2));
  EXPECT_EQ(tape2.grad(x2), T({4}, {0.0, 0.5, 0.5, 0.0}));
}

TEST(TopkMean, EqualsMeanOfSortedPrefix) {
  std::mt19937_64 rng(9);
  std::uniform_int_distribution<std::size_t> len(1, 30);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = len(rng);
    const std::size_t k = std::uniform_int_distribution<std::size_t>(1, n)(rng);
    const T x = random_tensor({n}, rng);
    std::vector<double> sorted(x.data().begin(), x.data().end());
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    const double oracle = std::accumulate(sorted.begin(), sorted.begin() + k, 0.0) / k;
    Tape<double> tape;
    EXPECT_NEAR(tape.value(topk_mean(tape, tape.leaf(x), k)).item(), oracle, 1e-12);
  }
}

TEST(TopkMean, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(10);
  const auto report = grad_check(
      [](Tape<double>& t, std::span<const Var> p) { return topk_mean(t, p[0], 4); },
      {random_tensor({9}, rng)});
  EXPECT_LT(report.worst, 1e-6);
}

TEST(TopkPool, MatchesPerColumnTopkMean) {
  std::mt19937_64 rng(11);
  const T x = random_tensor({2, 9, 3}, rng);
  const std::vector<std::size_t> lengths{9, 5}, ks{3, 2};
  Tape<double> tape;
  const T pooled = tape.value(topk_pool(tape, tape.leaf(x), lengths, ks));
  for (std::size_t v = 0; v < 2; ++v) {
    for (std::size_t c = 0; c < 3; ++c) {
      T col({lengths[v]});
      for (std::size_t f = 0; f < lengths[v]; ++f) col[f] = x(v, f, c);
      EXPECT_EQ(pooled(v, c), tape.value(topk_mean(tape, tape.leaf(col), ks[v])).item());
    }
  }
  const auto report = grad_check(
      [&](Tape<double>& t, std::span<const Var> p) {
        return probe(t, topk_pool(t, p[0], lengths, ks), 3);
      },
      {x});
  EXPECT_LT(report.worst, 1e-6);
}

TEST(Tape, SharedInputAccumulatesGradients) {
  Tape<double> tape;
  const Var x = tape.leaf(T({2}, {1.5, -2.0}), true);
  const Var y = add(tape, scale(tape, x, 3.0), x);
  tape.backward(sum(tape, add(tape, y, x)));
  EXPECT_EQ(tape.grad(x), T({2}, {5.0, 5.0}));
}

TEST(Tape, ForwardOutputsStayFinite) {
  std::mt19937_64 rng(12);
  Tape<double> tape;
  const Var x = tape.leaf(random_tensor({3, 4}, rng, 500.0), true);
  const Var y = add(tape, log_softmax(tape, x), log_sigmoid(tape, x));
  tape.backward(probe(tape, y, 5));
  EXPECT_TRUE(tape.value(y).all_finite());
  EXPECT_TRUE(tape.grad(x).all_finite());
}

TEST(GradCheck, LinearScalarIsTight) {
  std::mt19937_64 rng(14);
  const auto report = grad_check(
      [](Tape<double>& t, std::span<const Var> p) {
        return weighted_sum(t, linear(t, p[0], p[1], p[2]), T({1, 1}, {1.0}));
      },
      {random_tensor({1, 3}, rng), random_tensor({3, 1}, rng), T({1})});
  EXPECT_LT(report.worst, 1e-7);
}

TEST(GradCheck, CorruptedGradientFails) {
  std::mt19937_64 rng(15);
  GradCheckOptions options;
  options.tamper = [](std::vector<T>& g) { g[0][2] += 0.1; };
  const auto report = grad_check(
      [](Tape<double>& t, std::span<const Var> p) { return probe(t, sigmoid(t, p[0]), 3); },
      {random_tensor({5}, rng)}, options);
  EXPECT_FALSE(report.passed);
  EXPECT_EQ(report.worst_entry, 2u);
}

TEST(GradCheck, NonFiniteObjectiveIsDiagnosed) {
  EXPECT_THROW(grad_check(
                   [](Tape<double>& t, std::span<const Var> p) {
                     return scale(t, sum(t, p[0]), std::numeric_limits<double>::infinity());
                   },
                   {T({2}, {1.0, 2.0})}),
               NumericError);
}

TEST(Adam, ZeroGradientLeavesParamsAndAdvancesStep) {
  T p({3}, {1.0, -2.0, 0.5});
  const T before = p;
  AdamState<double> state({&p}, AdamSettings{});
  adam_step<double>({&p}, {T({3})}, state);
  EXPECT_EQ(p, before);
  EXPECT_EQ(state.step, 1u);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  // m = 0.1, v = 0.001; m_hat = 1, v_hat = 1; update = lr * 1 / (1 + eps).
  T p({1}, {0.0});
  AdamState<double> state({&p}, AdamSettings{});
  adam_step<double>({&p}, {T({1}, {1.0})}, state);
  EXPECT_NEAR(p[0], -1e-3 / (1.0 + 1e-8), 1e-15);
}

TEST(Adam, ConvergesOnQuadratic) {
  // Reference scalar recurrence, independent of adam_step.
  auto reference = [](double lr, int steps) {
    double p = 0.0, m = 0.0, v = 0.0;
    for (int t = 1; t <= steps; ++t) {
      const double g = 2.0 * (p - 3.0);
      m = 0.9 * m + 0.1 * g;
      v = 0.999 * v + 0.001 * g * g;
      p -= lr * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
    }
    return p;
  };
  const double lr = 0.1;
  T p({1}, {0.0});
  AdamState<double> state({&p}, AdamSettings{lr, 0.9, 0.999, 1e-8});
  for (int t = 0; t < 200; ++t) adam_step<double>({&p}, {T({1}, {2.0 * (p[0] - 3.0)})}, state);
  EXPECT_LT(std::abs(p[0] - 3.0), 1e-2);
  EXPECT_NEAR(p[0], reference(lr, 200), 1e-12);
  EXPECT_EQ(state.step, 200u);
}

TEST(Adam, ShapeMismatchThrows) {
  T p({2});
  AdamState<double> state({&p}, AdamSettings{});
  EXPECT_THROW(adam_step<double>({&p}, {T({3})}, state), DimensionError);
}

}  // namespace
}  // namespace sfnet
