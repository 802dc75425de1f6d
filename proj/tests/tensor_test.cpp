#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "oracle.hpp"
#include "spq/scale.hpp"
#include "spq/tensor.hpp"

namespace spq {
namespace {

ScaledTensor make(Shape shape, std::vector<std::int64_t> x, Shape sshape, std::vector<double> s) {
  return ScaledTensor(IntTensor(std::move(shape), std::move(x)),
                      ScaleTensor(std::move(sshape), std::move(s)));
}

TEST(RationalTensorTest, RejectsNonFiniteAndBadCounts) {
  EXPECT_THROW(RationalTensor({2}, {1.0, NAN}), std::invalid_argument);
  EXPECT_THROW(RationalTensor({2, 2}, {1.0, 2.0}), std::invalid_argument);
  EXPECT_THROW(RationalTensor({0}, {}), std::invalid_argument);
}

TEST(ScaleTensorTest, RequiresPositiveScales) {
  EXPECT_THROW(ScaleTensor({1}, {0.0}), std::invalid_argument);
  EXPECT_THROW(ScaleTensor({1}, {-2.0}), std::invalid_argument);
  EXPECT_THROW(make({2, 2}, {1, 2, 3, 4}, {3, 1}, {1, 2, 3}), std::invalid_argument);
}

TEST(TransposeTest, SwapsDataAndScaleTogether) {
  const auto t = make({2, 2}, {1, 2, 3, 4}, {2, 1}, {10, 20});
  const auto out = transpose(t);
  EXPECT_EQ(out.data(), IntTensor({2, 2}, {1, 3, 2, 4}));
  EXPECT_EQ(out.scale(), ScaleTensor({1, 2}, {10, 20}));
}

TEST(TransposeTest, IdentityPermutation) {
  const auto t = make({2, 3}, {1, 2, 3, 4, 5, 6}, {2, 1}, {3, 7});
  const std::size_t axes[] = {0, 1};
  EXPECT_EQ(transpose(t, axes), t);
}

TEST(TransposeTest, RejectsBadPermutation) {
  const auto t = make({2, 3}, {1, 2, 3, 4, 5, 6}, {2, 1}, {3, 7});
  const std::size_t short_axes[] = {0};
  const std::size_t repeated[] = {1, 1};
  EXPECT_THROW(transpose(t, short_axes), std::invalid_argument);
  EXPECT_THROW(transpose(t, repeated), std::invalid_argument);
}

TEST(TransposeTest, CommutesWithDequantizeOn3d) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const auto r = oracle::random_tensor(rng, {3, 4, 5});
    const std::vector<bool> reduce = {false, true, false};
    const auto q = quantize(r, init_scale_over(r, reduce, Precision(7)), Precision(7));
    std::vector<std::size_t> axes = {0, 1, 2};
    std::shuffle(axes.begin(), axes.end(), rng);
    const auto lhs = dequantize(transpose(q, axes));
    const auto rhs = transpose(dequantize(q), axes);
    EXPECT_EQ(lhs, rhs);
  }
}

TEST(ConcatTest, SingleInputIsIdentity) {
  const auto t = make({1, 2}, {5, 6}, {1, 1}, {10});
  const ScaledTensor parts[] = {t};
  EXPECT_EQ(concat(parts, 0), t);
}

TEST(ConcatTest, StacksRowScales) {
  const ScaledTensor parts[] = {make({1, 2}, {1, 2}, {1, 1}, {10}),
                                make({1, 2}, {3, 4}, {1, 1}, {20})};
  const auto out = concat(parts, 0);
  EXPECT_EQ(out.data(), IntTensor({2, 2}, {1, 2, 3, 4}));
  EXPECT_EQ(out.scale(), ScaleTensor({2, 1}, {10, 20}));
}

TEST(ConcatTest, RejectsMismatchedShapesAndPrecision) {
  const ScaledTensor bad_shape[] = {make({1, 2}, {1, 2}, {1, 1}, {1}),
                                    make({1, 3}, {1, 2, 3}, {1, 1}, {1})};
  EXPECT_THROW(concat(bad_shape, 0), std::invalid_argument);
  const ScaledTensor mixed[] = {
      make({1, 2}, {1, 2}, {1, 1}, {1}),
      ScaledTensor(IntTensor({1, 2}, {1, 2}), ScaleTensor({1, 1}, {1}), Precision(8))};
  EXPECT_THROW(concat(mixed, 0), std::invalid_argument);
}

TEST(ConcatTest, CommutesWithDequantize) {
  std::mt19937_64 rng(5);
  for (std::size_t axis = 0; axis < 2; ++axis) {
    for (int trial = 0; trial < 20; ++trial) {
      const auto a = oracle::random_tensor(rng, {3, 4});
      const auto b = oracle::random_tensor(rng, {3, 4}, -5, 5);
      // Mix granularities so that some scale dims need replication.
      const ScaledTensor qs[] = {quantize(a, ScaleGranularity::PerRow, Precision(7)),
                                 quantize(b, ScaleGranularity::PerBatch, Precision(7))};
      const RationalTensor rs[] = {dequantize(qs[0]), dequantize(qs[1])};
      EXPECT_EQ(dequantize(concat(qs, axis)), concat(rs, axis));
    }
  }
}

TEST(BroadcastScaleTest, RepeatsCollapsedDims) {
  const ScaleTensor s({2, 1}, {3, 4});
  EXPECT_EQ(broadcast_scale(s, {2, 3}), ScaleTensor({2, 3}, {3, 3, 3, 4, 4, 4}));
  EXPECT_EQ(broadcast_scale(s, {2, 1}), s);
  EXPECT_THROW(broadcast_scale(s, {3, 3}), std::invalid_argument);
}

TEST(BroadcastScaleTest, MatchesIndexingOracle) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> dist(0.5, 4.0);
  const Shape target = {3, 4, 5};
  for (int mask = 0; mask < 8; ++mask) {
    Shape src = target;
    for (int d = 0; d < 3; ++d) {
      if (mask & (1 << d)) src[d] = 1;
    }
    std::vector<double> v(numel(src));
    for (auto& x : v) x = dist(rng);
    const ScaleTensor s(src, v);
    const auto out = broadcast_scale(s, target);
    for (std::size_t i = 0; i < target[0]; ++i) {
      for (std::size_t j = 0; j < target[1]; ++j) {
        for (std::size_t k = 0; k < target[2]; ++k) {
          const std::size_t si = src[0] == 1 ? 0 : i;
          const std::size_t sj = src[1] == 1 ? 0 : j;
          const std::size_t sk = src[2] == 1 ? 0 : k;
          EXPECT_EQ(out[(i * 4 + j) * 5 + k], v[(si * src[1] + sj) * src[2] + sk]);
        }
      }
    }
  }
}

TEST(SliceTest, InverseOfConcat) {
  const auto a = make({2, 2}, {1, 2, 3, 4}, {2, 2}, {1, 2, 3, 4});
  const auto b = make({2, 3}, {5, 6, 7, 8, 9, 10}, {2, 1}, {5, 6});
  const ScaledTensor parts[] = {a, b};
  const auto joined = concat(parts, 1);
  EXPECT_EQ(dequantize(slice(joined, 1, 0, 2)), dequantize(a));
  EXPECT_EQ(dequantize(slice(joined, 1, 2, 5)), dequantize(b));
  EXPECT_THROW(slice(joined, 1, 3, 3), std::invalid_argument);
}

TEST(GatherRowsTest, KeepsRowScales) {
  const auto table = make({3, 2}, {1, 2, 3, 4, 5, 6}, {3, 1}, {1, 2, 3});
  const std::size_t rows[] = {2, 0, 2};
  const auto out = gather_rows(table, rows);
  EXPECT_EQ(out.data(), IntTensor({3, 2}, {5, 6, 1, 2, 5, 6}));
  EXPECT_EQ(out.scale(), ScaleTensor({3, 1}, {3, 1, 3}));
  const std::size_t bad[] = {3};
  EXPECT_THROW(gather_rows(table, bad), std::invalid_argument);
}

}  // namespace
}  // namespace spq
