#include <gtest/gtest.h>

#include <set>

#include <boost/math/distributions/chi_squared.hpp>

#include "maskrec/error.hpp"
#include "maskrec/masking.hpp"
#include "test_util.hpp"

namespace maskrec::masking {
namespace {

using testing::random_matrix;

// Contiguous runs of a sorted index set.
std::vector<std::pair<std::size_t, std::size_t>> runs(const std::vector<std::size_t>& t) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t i : t) {
    if (!out.empty() && out.back().second + 1 == i)
      out.back().second = i;
    else
      out.emplace_back(i, i);
  }
  return out;
}

bool sorted_unique(const std::vector<std::size_t>& v, std::size_t bound) {
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (v[i] >= bound) return false;
    if (i > 0 && v[i] <= v[i - 1]) return false;
  }
  return true;
}

TEST(TimeMask, Counts) {
  auto rng = make_rng(1);
  EXPECT_EQ(sample_time_mask(100, 0.10, rng).size(), 10u);
  EXPECT_TRUE(sample_time_mask(100, 0.0, rng).empty());
  EXPECT_EQ(sample_time_mask(100, 0.90, rng).size(), 90u);
  EXPECT_EQ(sample_time_mask(3, 0.01, rng).size(), 1u);  // minimum one
  EXPECT_EQ(masked_count(10, 0.25), 3u);                  // 2.5 rounds up
  EXPECT_THROW(sample_time_mask(10, 1.5, rng), std::invalid_argument);
  for (int i = 0; i < 50; ++i) EXPECT_TRUE(sorted_unique(sample_time_mask(20, 0.3, rng), 20));
}

TEST(SpanMask, ExactTargetAsRuns) {
  auto rng = make_rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const auto t = sample_span_mask(100, 0.15, 0.2, 10, rng);
    ASSERT_EQ(t.size(), 15u);
    ASSERT_TRUE(sorted_unique(t, 100));
  }
  const auto one = sample_span_mask(20, 0.01, 0.2, 10, rng);
  ASSERT_EQ(one.size(), 1u);
  EXPECT_EQ(runs(one).size(), 1u);
}

TEST(SpanMask, HighRatiosStillExact) {
  auto rng = make_rng(3);
  for (double r : {0.5, 0.7, 0.9, 1.0})
    for (int trial = 0; trial < 50; ++trial) {
      const auto t = sample_span_mask(30, r, 0.2, 10, rng);
      ASSERT_EQ(t.size(), masked_count(30, r));
      ASSERT_TRUE(sorted_unique(t, 30));
    }
}

TEST(SpanMask, ProducesLongRuns) {
  auto rng = make_rng(4);
  std::size_t max_run = 0;
  for (int trial = 0; trial < 100; ++trial)
    for (auto [a, b] : runs(sample_span_mask(100, 0.15, 0.2, 10, rng))) max_run = std::max(max_run, b - a + 1);
  EXPECT_GE(max_run, 5u);
}

// With max_len = 1 a span mask is a uniform subset, so its per-index
// frequencies must be homogeneous with sample_time_mask's (chi-square test
// on the 2 x N contingency table).
TEST(SpanMask, UnitSpansMatchTimeMaskDistribution) {
  const std::size_t n = 20, draws = 10000;
  auto r1 = make_rng(5), r2 = make_rng(6);
  std::vector<double> a(n), b(n);
  for (std::size_t d = 0; d < draws; ++d) {
    for (auto i : sample_span_mask(n, 0.15, 0.2, 1, r1)) a[i] += 1;
    for (auto i : sample_time_mask(n, 0.15, r2)) b[i] += 1;
  }
  double ta = 0, tb = 0;
  for (std::size_t i = 0; i < n; ++i) ta += a[i], tb += b[i];
  const double total = ta + tb;
  double chi2 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double col = a[i] + b[i];
    const double ea = col * ta / total, eb = col * tb / total;
    chi2 += (a[i] - ea) * (a[i] - ea) / ea + (b[i] - eb) * (b[i] - eb) / eb;
  }
  const boost::math::chi_squared dist(static_cast<double>(n - 1));
  EXPECT_LT(chi2, boost::math::quantile(dist, 0.999));
}

TEST(ChannelMask, Counts) {
  auto rng = make_rng(7);
  EXPECT_EQ(sample_channel_mask(6, 3, rng).size(), 3u);
  EXPECT_TRUE(sample_channel_mask(6, 0, rng).empty());
  EXPECT_EQ(sample_channel_mask(9, 5, rng).size(), 5u);
  EXPECT_THROW(sample_channel_mask(6, 7, rng), std::invalid_argument);
}

TEST(ApplyMask, HandExample) {
  const auto x = random_matrix(3, 2, 1, 1, 2);
  const MaskSpec spec{{1}, {0}};
  const auto y = apply_mask(x, spec);
  std::size_t zeros = 0;
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 2; ++j) {
      if (i == 1 || j == 0) {
        EXPECT_EQ(y(i, j), 0.0);
        ++zeros;
      } else {
        EXPECT_EQ(y(i, j), x(i, j));
      }
    }
  EXPECT_EQ(zeros, 4u);
  EXPECT_EQ(apply_mask(x, MaskSpec{}), x);
  const auto all = apply_mask(x, MaskSpec{{}, {0, 1}});
  for (double v : all.values()) EXPECT_EQ(v, 0.0);
}

TEST(ApplyMask, CountIdempotenceAndSpecialCase) {
  auto rng = make_rng(8);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 2 + rng() % 19, k = 1 + rng() % 8;
    const auto t = sample_without_replacement(n, rng() % (n + 1), rng);
    const auto c = sample_without_replacement(k, rng() % (k + 1), rng);
    const auto x = random_matrix(n, k, trial, 0.5, 1.5);
    const MaskSpec spec{t, c};
    const auto y = apply_mask(x, spec);
    std::size_t zeros = 0;
    for (double v : y.values()) zeros += v == 0.0;
    EXPECT_EQ(zeros, t.size() * k + c.size() * n - t.size() * c.size());
    EXPECT_EQ(apply_mask(y, spec), y);
    EXPECT_EQ(apply_mask(x, MaskSpec{{}, c}),
              apply_mask(apply_mask(x, MaskSpec{}), MaskSpec{{}, c}));
  }
}

TEST(ApplyMask, LeavesInputAndRejectsOutOfRange) {
  const auto x = random_matrix(4, 2, 2);
  const auto copy = x;
  apply_mask(x, MaskSpec{{0}, {1}});
  EXPECT_EQ(x, copy);
  EXPECT_THROW(apply_mask(x, MaskSpec{{4}, {}}), std::invalid_argument);
  EXPECT_THROW(apply_mask(x, MaskSpec{{}, {2}}), std::invalid_argument);
}

TEST(MaskSpec, CanonicalText) {
  EXPECT_EQ((MaskSpec{{1, 4}, {0}}).to_string(), "T=[1,4];C=[0]");
  EXPECT_EQ(MaskSpec{}.to_string(), "T=[];C=[]");
}

TEST(Strategy, ParseAndValidate) {
  for (auto name : {"time", "span", "channel", "time-channel", "span-channel"})
    EXPECT_EQ(to_string(parse_strategy_kind(name)), name);
  EXPECT_THROW(parse_strategy_kind("bogus"), ConfigError);
  StrategyConfig cfg;
  EXPECT_NO_THROW(cfg.validate(6));
  cfg.channel_count_masked = 7;
  EXPECT_THROW(cfg.validate(6), ConfigError);
  cfg = {};
  cfg.span_geometric_p = 1.0;
  EXPECT_THROW(cfg.validate(6), ConfigError);
}

TEST(SampleMask, KindSelectsAxes) {
  auto rng = make_rng(9);
  StrategyConfig cfg;
  for (auto kind : {StrategyKind::kTime, StrategyKind::kSpan, StrategyKind::kChannel,
                    StrategyKind::kTimeChannel, StrategyKind::kSpanChannel}) {
    cfg.kind = kind;
    const auto spec = sample_mask(100, 6, cfg, rng);
    EXPECT_EQ(spec.time_indices.empty(), !masks_time_axis(kind));
    EXPECT_EQ(spec.channel_indices.empty(), !masks_channel_axis(kind));
  }
}

std::vector<data::SensorWindow> batch_of(std::size_t b, std::size_t n = 20) {
  std::vector<data::SensorWindow> out;
  for (std::size_t i = 0; i < b; ++i) out.push_back(testing::window(random_matrix(n, 6, i)));
  return out;
}

TEST(BatchMask, SamePositionShared) {
  auto rng = make_rng(10);
  StrategyConfig cfg;
  cfg.kind = StrategyKind::kTimeChannel;
  const auto mb = batch_mask(batch_of(16), cfg, rng);
  for (const auto& s : mb.specs) EXPECT_EQ(s, mb.specs.front());
  for (std::size_t i = 0; i < 16; ++i)
    EXPECT_EQ(mb.windows[i].values, apply_mask(batch_of(16)[i].values, mb.specs[i]));
}

TEST(BatchMask, IndependentDraws) {
  auto rng = make_rng(11);
  StrategyConfig cfg;
  cfg.kind = StrategyKind::kTimeChannel;
  cfg.same_position_per_batch = false;
  // C(100, 10) * C(6, 2) possible specs: collisions are practically impossible.
  const auto batch = batch_of(256, 100);
  const auto mb = batch_mask(batch, cfg, rng);
  std::set<std::string> distinct;
  for (const auto& s : mb.specs) distinct.insert(s.to_string());
  EXPECT_EQ(distinct.size(), 256u);
}

TEST(BatchMask, ChannelKindHasNoTime) {
  auto rng = make_rng(12);
  StrategyConfig cfg;
  cfg.same_position_per_batch = false;
  for (const auto& s : batch_mask(batch_of(8), cfg, rng).specs) {
    EXPECT_TRUE(s.time_indices.empty());
    EXPECT_EQ(s.channel_indices.size(), 3u);
  }
  EXPECT_THROW(batch_mask({}, cfg, rng), std::invalid_argument);
}

TEST(BatchMask, DeterministicGivenRng) {
  StrategyConfig cfg;
  cfg.kind = StrategyKind::kSpanChannel;
  cfg.same_position_per_batch = false;
  auto r1 = make_rng(13), r2 = make_rng(13);
  EXPECT_EQ(batch_mask(batch_of(8), cfg, r1).specs, batch_mask(batch_of(8), cfg, r2).specs);
}

}  // namespace
}  // namespace maskrec::masking
