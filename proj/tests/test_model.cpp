#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "sfnet/model.hpp"
#include "test_support.hpp"

namespace sfnet {
namespace {

using testing::random_tensor;

ModelDims small_dims() { return ModelDims{8, 16, 5, 3}; }

TEST(InitParams, SameSeedIsBitIdentical) {
  EXPECT_EQ(init_params<double>(small_dims(), 7), init_params<double>(small_dims(), 7));
  EXPECT_FALSE(init_params<double>(small_dims(), 7) == init_params<double>(small_dims(), 8));
}

TEST(InitParams, ShapesAndZeroBiases) {
  const auto p = init_params<double>(small_dims(), 1);
  EXPECT_EQ(p.cls_w1.shape(), (Shape{8, 16}));
  EXPECT_EQ(p.cls_w3.shape(), (Shape{16, 6}));
  EXPECT_EQ(p.act_k1.shape(), (Shape{3, 8, 16}));
  EXPECT_EQ(p.act_k2.shape(), (Shape{3, 16, 16}));
  EXPECT_EQ(p.act_w3.shape(), (Shape{16, 1}));
  for (const Tensor<double>* b : {&p.cls_b1, &p.cls_b2, &p.cls_b3, &p.act_b1, &p.act_b2, &p.act_b3}) {
    for (double v : b->data()) EXPECT_EQ(v, 0.0);
  }
  EXPECT_EQ(SFNetParams<double>::names().size(), p.tensors().size());
}

TEST(InitParams, WeightsWithinGlorotBound) {
  const auto p = init_params<double>(small_dims(), 3);
  const double bound = std::sqrt(6.0 / (16 + 16));
  for (double v : p.cls_w2.data()) EXPECT_LE(std::abs(v), bound);
  const double conv_bound = std::sqrt(6.0 / (3 * 16 + 3 * 16));
  for (double v : p.act_k2.data()) EXPECT_LE(std::abs(v), conv_bound);
}

TEST(InitParams, WeightMeanWithinThreeSigma) {
  // 100x100 layer: 10^4 draws from U(-b, b), variance b^2/3.
  const auto p = init_params<double>(ModelDims{4, 100, 3, 3}, 11);
  const double bound = std::sqrt(6.0 / 200.0);
  double mean = 0.0;
  for (double v : p.cls_w2.data()) mean += v;
  mean /= static_cast<double>(p.cls_w2.size());
  const double sigma_of_mean = bound / std::sqrt(3.0) / std::sqrt(1e4);
  EXPECT_LT(std::abs(mean), 3.0 * sigma_of_mean);
}

TEST(InitParams, InvalidDimsAreConfigErrors) {
  EXPECT_THROW(init_params<double>(ModelDims{0, 16, 5, 3}, 0), ConfigError);
  EXPECT_THROW(init_params<double>(ModelDims{8, 0, 5, 3}, 0), ConfigError);
  EXPECT_THROW(init_params<double>(ModelDims{8, 16, 0, 3}, 0), ConfigError);
  EXPECT_THROW(init_params<double>(ModelDims{8, 16, 5, 2}, 0), ConfigError);
}

TEST(Forward, OutputShapes) {
  const auto p = init_params<double>(small_dims(), 1);
  std::mt19937_64 rng(1);
  const std::vector<std::size_t> lengths{10, 7};
  const auto maps = forward(p, random_tensor({2, 10, 8}, rng), lengths);
  EXPECT_EQ(maps.classification.shape(), (Shape{2, 10, 6}));
  EXPECT_EQ(maps.actionness.shape(), (Shape{2, 10}));
  EXPECT_TRUE(maps.valid(1, 6));
  EXPECT_FALSE(maps.valid(1, 7));
}

TEST(Forward, ZeroInputZeroBiasGivesZeroScores) {
  const auto p = init_params<double>(small_dims(), 2);
  const std::vector<std::size_t> lengths{6};
  const auto maps = forward(p, Tensor<double>({1, 6, 8}), lengths);
  for (double v : maps.classification.data()) EXPECT_EQ(v, 0.0);
  for (double v : maps.actionness.data()) EXPECT_EQ(v, 0.0);
}

TEST(Forward, LengthBeyondPaddingIsError) {
  const auto p = init_params<double>(small_dims(), 2);
  const std::vector<std::size_t> lengths{7};
  EXPECT_THROW(forward(p, Tensor<double>({1, 6, 8}), lengths), ArgumentError);
  const std::vector<std::size_t> one{6};
  EXPECT_THROW(forward(p, Tensor<double>({1, 6, 9}), one), DimensionError);
}

TEST(Forward, DuplicatedVideoGetsIdenticalRows) {
  const auto p = init_params<double>(small_dims(), 4);
  std::mt19937_64 rng(4);
  const Tensor<double> one = random_tensor({1, 9, 8}, rng);
  Tensor<double> two({2, 9, 8});
  for (std::size_t i = 0; i < one.size(); ++i) two[i] = two[one.size() + i] = one[i];
  const std::vector<std::size_t> lengths{9, 9};
  const auto maps = forward(p, two, lengths);
  for (std::size_t t = 0; t < 9; ++t) {
    EXPECT_NEAR(maps.actionness(0, t), maps.actionness(1, t), 1e-12);
    for (std::size_t c = 0; c < 6; ++c) {
      EXPECT_NEAR(maps.classification(0, t, c), maps.classification(1, t, c), 1e-12);
    }
  }
}

TEST(Forward, DeterministicAndPure) {
  const auto p = init_params<double>(small_dims(), 5);
  const auto copy = p;
  std::mt19937_64 rng(5);
  const Tensor<double> x = random_tensor({2, 11, 8}, rng);
  const std::vector<std::size_t> lengths{11, 4};
  const auto a = forward(p, x, lengths);
  const auto b = forward(p, x, lengths);
  EXPECT_EQ(a.classification, b.classification);
  EXPECT_EQ(a.actionness, b.actionness);
  EXPECT_EQ(p, copy);
}

// Frames whose outputs differ after perturbing frame `at`.
std::vector<std::size_t> changed_frames(std::size_t width, std::size_t at, bool classification) {
  const auto p = init_params<double>(ModelDims{8, 16, 5, width}, 6);
  std::mt19937_64 rng(6);
  Tensor<double> x = random_tensor({1, 21, 8}, rng);
  const std::vector<std::size_t> lengths{21};
  const auto before = forward(p, x, lengths);
  for (std::size_t k = 0; k < 8; ++k) x(0, at, k) += 0.75;
  const auto after = forward(p, x, lengths);
  std::vector<std::size_t> out;
  for (std::size_t t = 0; t < 21; ++t) {
    bool differs = false;
    if (classification) {
      for (std::size_t c = 0; c < 6; ++c) {
        differs |= before.classification(0, t, c) != after.classification(0, t, c);
      }
    } else {
      differs = before.actionness(0, t) != after.actionness(0, t);
    }
    if (differs) out.push_back(t);
  }
  return out;
}

TEST(Forward, ClassificationHeadIsFrameLocal) {
  EXPECT_EQ(changed_frames(3, 10, true), std::vector<std::size_t>{10});
}

TEST(Forward, ActionnessReceptiveField) {
  // Two width-k convs: the output at t sees inputs within +-(k-1).
  for (std::size_t width : {3u, 5u}) {
    const auto changed = changed_frames(width, 10, false);
    ASSERT_FALSE(changed.empty());
    const std::size_t reach = width - 1;
    for (std::size_t t : changed) {
      EXPECT_GE(t, 10 - reach);
      EXPECT_LE(t, 10 + reach);
    }
    EXPECT_EQ(changed.size(), 2 * reach + 1) << "width " << width;
  }
}

TEST(Forward, ValidFrameScoresIgnorePadding) {
  const auto p = init_params<double>(small_dims(), 8);
  std::mt19937_64 rng(8);
  const Tensor<double> x = random_tensor({1, 7, 8}, rng);
  Tensor<double> padded({1, 12, 8});
  for (std::size_t t = 0; t < 7; ++t) {
    for (std::size_t k = 0; k < 8; ++k) padded(0, t, k) = x(0, t, k);
  }
  const std::vector<std::size_t> lengths{7};
  const auto a = forward(p, x, lengths);
  const auto b = forward(p, padded, lengths);
  for (std::size_t t = 0; t < 7; ++t) {
    EXPECT_NEAR(a.actionness(0, t), b.actionness(0, t), 1e-12);
    for (std::size_t c = 0; c < 6; ++c) {
      EXPECT_NEAR(a.classification(0, t, c), b.classification(0, t, c), 1e-12);
    }
  }
}

TEST(Params, CastRoundTripsThroughFloat) {
  const auto p = init_params<double>(small_dims(), 9);
  const auto f = p.cast<float>();
  const auto back = f.cast<double>();
  for (std::size_t i = 0; i < p.tensors().size(); ++i) {
    for (std::size_t j = 0; j < p.tensors()[i]->size(); ++j) {
      EXPECT_NEAR((*back.tensors()[i])[j], (*p.tensors()[i])[j], 1e-7);
    }
  }
}

}  // namespace
}  // namespace sfnet
