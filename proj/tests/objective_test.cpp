#include <gtest/gtest.h>

#include <cmath>

#include "maskrec/error.hpp"
#include "maskrec/objective.hpp"
#include "test_util.hpp"

namespace maskrec::objective {
namespace {

using masking::MaskSpec;
using testing::random_matrix;

Matrix two_by_two(double a, double b, double c, double d) {
  Matrix m(2, 2);
  m(0, 0) = a, m(0, 1) = b, m(1, 0) = c, m(1, 1) = d;
  return m;
}

TEST(MaskedMse, HandExamples) {
  const auto raw = two_by_two(1, 2, 3, 4);
  const Matrix rec(2, 2);
  const std::vector<MaskSpec> t{{{0}, {}}}, c{{{}, {1}}};
  EXPECT_DOUBLE_EQ(masked_mse(raw, rec, t, Axis::kTime), 2.5);
  EXPECT_DOUBLE_EQ(masked_mse(raw, rec, c, Axis::kChannel), 10.0);
  EXPECT_EQ(masked_mse(raw, raw, t, Axis::kTime), 0.0);
  EXPECT_THROW(masked_mse(raw, rec, t, Axis::kChannel), UndefinedLossError);
}

TEST(CombinedLoss, HandExamples) {
  const auto raw = two_by_two(1, 2, 3, 4);
  const Matrix rec(2, 2);
  const std::vector<MaskSpec> both{{{0}, {1}}};
  const auto half = combined_loss(raw, rec, both, 0.5);
  EXPECT_DOUBLE_EQ(half.loss_time, 2.5);
  EXPECT_DOUBLE_EQ(half.loss_channel, 10.0);
  EXPECT_DOUBLE_EQ(half.combined, 6.25);
  EXPECT_DOUBLE_EQ(combined_loss(raw, rec, both, 1.0).combined, 2.5);
  for (double a : {0.1, 0.3, 0.5, 0.7, 0.9}) EXPECT_NO_THROW(combined_loss(raw, rec, both, a));
  EXPECT_THROW(combined_loss(raw, rec, both, 1.5), ConfigError);
  EXPECT_THROW(combined_loss(raw, rec, std::vector<MaskSpec>{{}}, 0.5), UndefinedLossError);
}

TEST(CombinedLoss, SingleAxisReducesToThatTerm) {
  const auto raw = two_by_two(1, 2, 3, 4);
  const Matrix rec(2, 2);
  for (double a : {0.0, 0.3, 1.0}) {
    const auto only_c = combined_loss(raw, rec, std::vector<MaskSpec>{{{}, {1}}}, a);
    EXPECT_DOUBLE_EQ(only_c.combined, 10.0);
    EXPECT_FALSE(only_c.has_time);
    EXPECT_EQ(only_c.alpha, 0.0);
    const auto only_t = combined_loss(raw, rec, std::vector<MaskSpec>{{{0}, {}}}, a);
    EXPECT_DOUBLE_EQ(only_t.combined, 2.5);
    EXPECT_EQ(only_t.alpha, 1.0);
  }
}

// Cell (0, 1) is in T x C; the literal formulas count it in both terms.
TEST(CombinedLoss, OverlapCountsTwice) {
  Matrix raw(2, 2), rec(2, 2);
  raw(0, 1) = 3.0;
  const std::vector<MaskSpec> spec{{{0}, {1}}};
  const auto l = combined_loss(raw, rec, spec, 0.5);
  EXPECT_DOUBLE_EQ(l.loss_time, 9.0 / 2);
  EXPECT_DOUBLE_EQ(l.loss_channel, 9.0 / 2);
}

TEST(MaskedMse, PoolsCellsAcrossBatch) {
  // Two windows of 2x1; window 0 masks one step, window 1 masks both.
  Matrix raw(4, 1), rec(4, 1);
  raw(0, 0) = 1, raw(2, 0) = 2, raw(3, 0) = 3;
  const std::vector<MaskSpec> specs{{{0}, {}}, {{0, 1}, {}}};
  EXPECT_DOUBLE_EQ(masked_mse(raw, rec, specs, Axis::kTime), (1.0 + 4.0 + 9.0) / 3);
  EXPECT_EQ(selected_cells(2, 1, specs, Axis::kTime), 3u);
}

TEST(MaskedMse, InvariantToUnselectedCells) {
  auto rng = make_rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const auto raw = random_matrix(6, 4, trial), rec = random_matrix(6, 4, trial + 500);
    const std::vector<MaskSpec> specs{{sample_without_replacement(6, 2, rng), sample_without_replacement(4, 1, rng)}};
    auto raw2 = raw, rec2 = rec;
    for (std::size_t i = 0; i < 6; ++i)
      for (std::size_t j = 0; j < 4; ++j)
        if (!specs[0].masks_time(i) && !specs[0].masks_channel(j)) {
          raw2(i, j) = static_cast<double>(trial);
          rec2(i, j) = -3.0 * j;
        }
    EXPECT_EQ(combined_loss(raw, rec, specs, 0.4).combined, combined_loss(raw2, rec2, specs, 0.4).combined);
  }
}

TEST(MaskedMse, GradientIsLocalAndAnalytic) {
  auto rng = make_rng(2);
  const auto raw = random_matrix(10, 3, 3), rec = random_matrix(10, 3, 4);
  const std::vector<MaskSpec> specs{{{1, 3}, {2}}, {{0}, {}}};
  Matrix g(10, 3);
  combined_loss(raw, rec, specs, 0.3, &g);
  const double eps = 1e-6;
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t j = 0; j < 3; ++j) {
        const std::size_t r = b * 5 + i;
        if (!specs[b].masks_time(i) && !specs[b].masks_channel(j)) {
          EXPECT_EQ(g(r, j), 0.0);
          continue;
        }
        auto up = rec, down = rec;
        up(r, j) += eps;
        down(r, j) -= eps;
        const double fd = (combined_loss(raw, up, specs, 0.3).combined -
                           combined_loss(raw, down, specs, 0.3).combined) / (2 * eps);
        EXPECT_NEAR(g(r, j), fd, 1e-8);
      }
  (void)rng;
}

TEST(CrossEntropy, AnalyticValues) {
  const Matrix uniform(3, 4, 0.7);
  const std::vector<int> labels{0, 2, 3};
  EXPECT_NEAR(cross_entropy(uniform, labels), std::log(4.0), 1e-12);
  Matrix sharp(1, 3);
  sharp(0, 1) = 50.0;
  EXPECT_LT(cross_entropy(sharp, std::vector<int>{1}), 1e-20);
  Matrix big(1, 2);
  big(0, 0) = 1000, big(0, 1) = 0;
  EXPECT_NEAR(cross_entropy(big, std::vector<int>{1}), 1000.0, 1e-9);
  EXPECT_THROW(cross_entropy(uniform, std::vector<int>{0, 1, 4}), std::invalid_argument);
}

TEST(CrossEntropy, MatchesLongDoubleOracleAndGradient) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto logits = random_matrix(5, 4, s, -6, 6);
    std::vector<int> labels;
    for (int i = 0; i < 5; ++i) labels.push_back(static_cast<int>((s + i) % 4));
    long double oracle = 0;
    for (std::size_t b = 0; b < 5; ++b) {
      long double z = 0;
      for (std::size_t c = 0; c < 4; ++c) z += std::exp(static_cast<long double>(logits(b, c)));
      oracle += std::log(z) - logits(b, static_cast<std::size_t>(labels[b]));
    }
    oracle /= 5;
    Matrix g;
    EXPECT_NEAR(cross_entropy(logits, labels, &g), static_cast<double>(oracle), 1e-10);
    ASSERT_EQ(g.rows(), 5u);
    for (std::size_t b = 0; b < 5; ++b) {
      double row = 0;
      for (std::size_t c = 0; c < 4; ++c) row += g(b, c);
      EXPECT_NEAR(row, 0.0, 1e-15);
    }
  }
}

}  // namespace
}  // namespace maskrec::objective
