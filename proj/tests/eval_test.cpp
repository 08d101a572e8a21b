#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "f1_oracle.hpp"
#include "maskrec/error.hpp"
#include "maskrec/eval.hpp"
#include "maskrec/random.hpp"
#include "test_util.hpp"

namespace maskrec::eval {
namespace {

TEST(MacroF1, HandExamples) {
  const std::vector<int> y{0, 0, 1, 1}, p{0, 1, 1, 1};
  const auto r = macro_f1(p, y, 2);
  EXPECT_NEAR(r.per_class[0], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(r.per_class[1], 4.0 / 5.0, 1e-15);
  EXPECT_NEAR(r.mean_f1, 0.7333333333333333, 1e-10);
  EXPECT_EQ(macro_f1(y, y, 2).mean_f1, 1.0);
  const std::vector<int> zeros(4, 0);
  EXPECT_NEAR(macro_f1(zeros, y, 2).mean_f1, 1.0 / 3.0, 1e-15);
}

TEST(MacroF1, AbsentClassesAreSkippedPredictedOnesScoreZero) {
  const std::vector<int> y{0, 0, 1}, p{0, 0, 1};
  const auto r = macro_f1(p, y, 4);
  EXPECT_EQ(r.mean_f1, 1.0);
  EXPECT_FALSE(r.scored[2]);
  const std::vector<int> p2{0, 0, 2};
  const auto r2 = macro_f1(p2, y, 4);
  EXPECT_TRUE(r2.scored[2]);
  EXPECT_EQ(r2.per_class[2], 0.0);
  EXPECT_NEAR(r2.mean_f1, (1.0 + 0.0 + 0.0) / 3.0, 1e-15);
}

TEST(MacroF1, Errors) {
  EXPECT_THROW(macro_f1(std::vector<int>{0}, std::vector<int>{0, 1}, 2), std::invalid_argument);
  EXPECT_THROW(macro_f1(std::vector<int>{2}, std::vector<int>{0}, 2), std::invalid_argument);
}

TEST(MacroF1, MatchesConfusionMatrixOracle) {
  auto rng = make_rng(1);
  for (int trial = 0; trial < 1000; ++trial) {
    const int a = 2 + static_cast<int>(rng() % 7);
    const std::size_t n = 1 + rng() % 60;
    std::vector<int> p(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = static_cast<int>(rng() % a);
      y[i] = static_cast<int>(rng() % a);
    }
    const auto got = macro_f1(p, y, a);
    const auto want = testing::brute_force_f1(p, y, a);
    ASSERT_EQ(got.mean_f1, want.mean);
    ASSERT_EQ(got.per_class, want.per_class);
    // Precision / recall form agrees to rounding.
    for (int c = 0; c < a; ++c) {
      double tp = 0, pc = 0, lc = 0;
      for (std::size_t i = 0; i < n; ++i) tp += p[i] == c && y[i] == c, pc += p[i] == c, lc += y[i] == c;
      const double prec = pc ? tp / pc : 0, rec = lc ? tp / lc : 0;
      const double f = prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0;
      EXPECT_NEAR(got.per_class[c], f, 1e-14);
    }
  }
}

TEST(MacroF1, InvariantUnderClassRelabeling) {
  auto rng = make_rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const int a = 2 + static_cast<int>(rng() % 6);
    std::vector<int> perm(a);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<int> p(30), y(30), pp(30), yp(30);
    for (int i = 0; i < 30; ++i) {
      p[i] = static_cast<int>(rng() % a), y[i] = static_cast<int>(rng() % a);
      pp[i] = perm[p[i]], yp[i] = perm[y[i]];
    }
    // Sum order changes under permutation, so compare to rounding.
    EXPECT_NEAR(macro_f1(p, y, a).mean_f1, macro_f1(pp, yp, a).mean_f1, 1e-15);
  }
}

TEST(ConfidenceInterval, TTableValues) {
  EXPECT_NEAR(student_t_quantile(0.975, 1), 12.706, 5e-4);
  EXPECT_NEAR(student_t_quantile(0.975, 4), 2.776, 5e-4);
  const std::vector<double> same{0.4, 0.4, 0.4};
  EXPECT_EQ(confidence_interval(same).halfwidth, 0.0);
  const std::vector<double> two{0.0, 1.0};
  const auto ci = confidence_interval(two);
  EXPECT_EQ(ci.mean, 0.5);
  EXPECT_NEAR(ci.halfwidth, 6.353, 1e-3);
  const std::vector<double> five{0.1, 0.2, 0.3, 0.4, 0.5};
  const double sd = std::sqrt(0.025);
  EXPECT_NEAR(confidence_interval(five).halfwidth, 2.776 * sd / std::sqrt(5.0), 1e-4);
  EXPECT_THROW(confidence_interval(std::vector<double>{0.5}), std::invalid_argument);
}

F1Result f1(double mean, std::vector<double> per_class) { return {mean, std::move(per_class), {}}; }

TEST(MetricsReport, FromRuns) {
  const auto r = MetricsReport::from_runs("x=10", 10, {0, 1, 2}, {f1(0.5, {1, 0}), f1(0.7, {0.5, 0.5}), f1(0.6, {0, 1})});
  EXPECT_NEAR(r.mean_f1, 0.6, 1e-15);
  EXPECT_EQ(r.per_run_f1, (std::vector<double>{0.5, 0.7, 0.6}));
  EXPECT_NEAR(r.per_class_f1[0], 0.5, 1e-15);
  EXPECT_GT(r.ci95_halfwidth, 0.0);
  EXPECT_EQ(MetricsReport::from_runs("one", 0, {0}, {f1(0.3, {0.3})}).ci95_halfwidth, 0.0);
}

ProtocolReport sample_report() {
  ProtocolReport r;
  r.protocol = "alpha_sweep";
  r.dataset_tag = "synthetic";
  r.config = {{"alpha", 0.1}, {"nested", {{"v", {1, 2, 3}}}}};
  r.rows.push_back(MetricsReport::from_runs("alpha=0.1", 0.1, {0, 1}, {f1(1.0 / 3.0, {0.1, 0.2}), f1(0.7, {0.3, 0.4})}));
  r.rows.push_back(MetricsReport::from_runs("a,\"b\"", 0.3, {0, 1}, {f1(0.123456789012345678, {}), f1(0.9, {})}));
  return r;
}

TEST(Reports, JsonRoundTripIsBitExact) {
  const auto dir = testing::scratch_dir("reports");
  const auto r = sample_report();
  write_report_json(r, dir / "r.json");
  const auto back = read_report_json(dir / "r.json");
  EXPECT_EQ(back, r);
  write_report_json(back, dir / "r2.json");
  std::ifstream a(dir / "r.json"), b(dir / "r2.json");
  EXPECT_EQ(std::string(std::istreambuf_iterator<char>(a), {}), std::string(std::istreambuf_iterator<char>(b), {}));
}

TEST(Reports, MalformedIsFormatError) {
  const auto dir = testing::scratch_dir("reports_bad");
  std::ofstream(dir / "bad.json") << "{\"protocol\": 1}";
  EXPECT_THROW(read_report_json(dir / "bad.json"), FormatError);
  std::ofstream(dir / "junk.json") << "not json";
  EXPECT_THROW(read_report_json(dir / "junk.json"), FormatError);
  EXPECT_THROW(read_report_json(dir / "missing.json"), IoError);
}

TEST(Reports, CsvOneLinePerRun) {
  const auto dir = testing::scratch_dir("reports_csv");
  write_report_csv(sample_report(), dir / "r.csv");
  std::ifstream in(dir / "r.csv");
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  ASSERT_EQ(lines.size(), 5u);
  EXPECT_EQ(lines[0], "protocol,dataset,row,axis_value,seed,f1,mean_f1,ci95_halfwidth");
  EXPECT_EQ(lines[1].substr(0, 38), "alpha_sweep,synthetic,alpha=0.1,0.1,0,");
  EXPECT_NE(lines[3].find("\"a,\"\"b\"\"\""), std::string::npos);
}

}  // namespace
}  // namespace maskrec::eval
