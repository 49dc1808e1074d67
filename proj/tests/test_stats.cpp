#include <gtest/gtest.h>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>

#include "survfuse/stats.hpp"
#include "test_util.hpp"

using namespace survfuse;
using stats::RiskRow;
using stats::RiskTable;

namespace {

RiskTable random_table(Rng& rng, std::size_t n, double censor_rate, double tie_rate) {
  RiskTable t;
  for (std::size_t i = 0; i < n; ++i) {
    double risk = standard_normal(rng);
    if (i > 0 && uniform01(rng) < tie_rate) risk = t[rng() % i].risk;
    // Integer-ish times so tied times show up as well.
    const double time = std::floor(1 + 40 * uniform01(rng));
    t.push_back({"p" + std::to_string(i), risk, time, uniform01(rng) < censor_rate});
  }
  return t;
}

// Exponential survival driven by a latent log-hazard; the risk is a noisy copy.
RiskTable signal_table(Rng& rng, std::size_t n) {
  RiskTable t;
  for (std::size_t i = 0; i < n; ++i) {
    const double z = standard_normal(rng);
    const double event = -std::log(uniform01(rng)) * std::exp(-z);
    const double censor = -std::log(uniform01(rng)) * 1.5;
    t.push_back({"p" + std::to_string(i), z + 0.8 * standard_normal(rng), std::min(event, censor), censor < event});
  }
  return t;
}

RiskTable from_times(const std::vector<double>& times, const std::string& prefix) {
  RiskTable t;
  for (std::size_t i = 0; i < times.size(); ++i) t.push_back({prefix + std::to_string(i), 0.0, times[i], false});
  return t;
}

}  // namespace

TEST(CIndex, MatchesBruteForceOnRandomTables) {
  Rng rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng() % 199;
    const RiskTable t = random_table(rng, n, 0.3, 0.05);
    const auto fast = stats::concordance_counts(t), slow = testutil::brute_force_concordance(t);
    ASSERT_EQ(fast.comparable, slow.comparable) << "trial " << trial;
    ASSERT_EQ(fast.concordant, slow.concordant) << "trial " << trial;
    ASSERT_EQ(fast.tied, slow.tied) << "trial " << trial;
    if (slow.comparable > 0) {
      EXPECT_EQ(stats::c_index(t), slow.value());
    }
  }
}

TEST(CIndex, Examples) {
  const RiskTable abc = {{"A", 0.9, 1, false}, {"B", 0.5, 2, false}, {"C", 0.1, 3, true}};
  EXPECT_EQ(stats::concordance_counts(abc).comparable, 3u);
  EXPECT_DOUBLE_EQ(stats::c_index(abc), 1.0);
  RiskTable flat = abc;
  for (auto& r : flat) r.risk = 0.3;
  EXPECT_DOUBLE_EQ(stats::c_index(flat), 0.5);
  const RiskTable inverse = {{"a", 4, 1, false}, {"b", 3, 2, false}, {"c", 2, 3, false}, {"d", 1, 4, false}};
  EXPECT_DOUBLE_EQ(stats::c_index(inverse), 1.0);
}

TEST(CIndex, NoComparablePairs) {
  const RiskTable t = {{"a", 1, 5, true}, {"b", 2, 3, true}};
  EXPECT_THROW(stats::c_index(t), DataError);
  EXPECT_FALSE(stats::try_c_index(t).has_value());
}

TEST(CIndex, NegatedRisksComplementWithoutTies) {
  Rng rng(2);
  for (int trial = 0; trial < 30; ++trial) {
    RiskTable t = random_table(rng, 80, 0.3, 0.0);
    const double c = stats::c_index(t);
    for (auto& r : t) r.risk = -r.risk;
    EXPECT_NEAR(stats::c_index(t), 1.0 - c, 1e-15);
  }
}

TEST(CIndex, TableValidation) {
  EXPECT_THROW(stats::validate({{"a", 1, 1, false}, {"a", 2, 2, false}}), DataError);
  EXPECT_THROW(stats::validate({{"a", std::nan(""), 1, false}}), DataError);
}

TEST(KaplanMeier, HandWorkedCurve) {
  const auto km = stats::km_estimator({1, 2, 3}, {false, false, false});
  ASSERT_EQ(km.times, (std::vector<double>{1, 2, 3}));
  EXPECT_EQ(km.survival[0], 2.0 / 3.0);
  EXPECT_EQ(km.survival[1], 1.0 / 3.0);
  EXPECT_EQ(km.survival[2], 0.0);
  EXPECT_EQ(km.at_risk, (std::vector<std::size_t>{3, 2, 1}));
}

TEST(KaplanMeier, EdgeCases) {
  const auto censored = stats::km_estimator({1, 2, 3}, {true, true, true});
  EXPECT_TRUE(censored.times.empty());
  EXPECT_EQ(censored.survival_at(10), 1.0);
  EXPECT_EQ(stats::km_estimator({5}, {false}).survival_at(5), 0.0);
  EXPECT_THROW(stats::km_estimator({}, {}), PreconditionError);
  // Censoring at a tie with a death counts the censored subject as at risk.
  const auto tie = stats::km_estimator({2, 2, 4, 5}, {false, true, false, true});
  EXPECT_DOUBLE_EQ(tie.survival[0], 0.75);
  EXPECT_DOUBLE_EQ(tie.survival[1], 0.75 * 0.5);
}

TEST(KaplanMeier, OrderInvariantAndNonIncreasing) {
  Rng rng(3);
  const RiskTable t = random_table(rng, 120, 0.3, 0.0);
  const auto base = stats::km_estimator(t);
  RiskTable shuffled = t;
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  const auto again = stats::km_estimator(shuffled);
  EXPECT_EQ(base.times, again.times);
  EXPECT_EQ(base.survival, again.survival);
  EXPECT_EQ(base.at_risk, again.at_risk);
  for (std::size_t i = 0; i < base.survival.size(); ++i) {
    EXPECT_LE(base.survival[i], i == 0 ? 1.0 : base.survival[i - 1]);
    EXPECT_GE(base.survival[i], 0.0);
  }
}

TEST(Logrank, IdenticalGroups) {
  const auto r = stats::logrank_test(from_times({1, 3, 5, 7}, "a"), from_times({1, 3, 5, 7}, "b"));
  EXPECT_EQ(r.chi2, 0.0);
  EXPECT_EQ(r.p, 1.0);
}

TEST(Logrank, SeparatedGroups) {
  std::vector<double> early, late;
  for (int i = 0; i < 50; ++i) {
    early.push_back(1 + i);
    late.push_back(100 + i);
  }
  const auto a = from_times(early, "a"), b = from_times(late, "b");
  const auto r = stats::logrank_test(a, b);
  EXPECT_LT(r.p, 1e-6);
  const auto swapped = stats::logrank_test(b, a);
  EXPECT_DOUBLE_EQ(swapped.chi2, r.chi2);
  EXPECT_DOUBLE_EQ(swapped.p, r.p);
}

TEST(Logrank, HandComputedStatistic) {
  // a: deaths at 1 and 3; b: death at 2, censored at 4.
  RiskTable a = from_times({1, 3}, "a"), b = from_times({2, 4}, "b");
  b[1].censored = true;
  // t=1: n=4, na=2, d=1 -> O-E = 0.5, V = 0.25. t=2: n=3, na=1 -> E = 1/3, V = 2/9.
  // t=3: n=2, na=1 -> O-E = 0.5, V = 0.25.
  const double ome = 0.5 - 1.0 / 3.0 + 0.5, var = 0.25 + 2.0 / 9.0 + 0.25;
  const auto r = stats::logrank_test(a, b);
  EXPECT_NEAR(r.chi2, ome * ome / var, 1e-14);
  EXPECT_NEAR(r.p, boost::math::cdf(boost::math::complement(boost::math::chi_squared(1.0), r.chi2)), 1e-12);
}

TEST(Logrank, RangeAndErrors) {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const RiskTable a = random_table(rng, 30, 0.3, 0.0), b = random_table(rng, 25, 0.3, 0.0);
    const auto r = stats::logrank_test(a, b);
    EXPECT_GE(r.chi2, 0.0);
    EXPECT_GE(r.p, 0.0);
    EXPECT_LE(r.p, 1.0);
  }
  RiskTable none = from_times({1, 2}, "x");
  for (auto& r : none) r.censored = true;
  EXPECT_THROW(stats::logrank_test(none, none), DataError);
}

TEST(Distributions, ChiSquareReferenceValues) {
  // Closed forms: dof 1 is erf(sqrt(x/2)), dof 2 is 1 - exp(-x/2).
  for (double x : {0.001, 0.1, 0.5, 1.0, 2.0, 3.841458820694124, 10.0, 25.0}) {
    EXPECT_NEAR(stats::chi2_cdf(x, 1), std::erf(std::sqrt(x / 2)), 1e-10) << x;
    EXPECT_NEAR(stats::chi2_cdf(x, 2), -std::expm1(-x / 2), 1e-10) << x;
  }
  EXPECT_NEAR(stats::chi2_cdf(3.841458820694124, 1), 0.95, 1e-10);
  EXPECT_NEAR(stats::chi2_sf(10.827566170662733, 1), 0.001, 1e-10);
  EXPECT_NEAR(stats::chi2_sf(6.634896601021214, 1), 0.01, 1e-10);
  EXPECT_EQ(stats::chi2_cdf(0.0, 1), 0.0);
  EXPECT_EQ(stats::chi2_sf(0.0, 1), 1.0);
}

TEST(Distributions, ChiSquareAgreesWithBoost) {
  for (double dof : {1.0, 2.0, 3.0, 7.5, 30.0})
    for (double x : {0.01, 0.3, 1.0, 4.0, 9.0, 20.0, 60.0, 150.0}) {
      const boost::math::chi_squared d(dof);
      EXPECT_NEAR(stats::chi2_cdf(x, dof), boost::math::cdf(d, x), 1e-12);
      const double sf = boost::math::cdf(boost::math::complement(d, x));
      EXPECT_NEAR(stats::chi2_sf(x, dof), sf, 1e-12 * std::max(1.0, sf) + 1e-300);
      if (sf > 1e-280) {
        EXPECT_NEAR(stats::chi2_sf(x, dof) / sf, 1.0, 1e-9);
      }
    }
}

TEST(Distributions, StudentTAgreesWithBoost) {
  for (double dof : {1.0, 2.5, 5.0, 30.0, 197.3})
    for (double t : {0.0, 0.2, 1.0, -2.0, 4.5, 12.0}) {
      const boost::math::students_t d(dof);
      const double ref = 2 * boost::math::cdf(boost::math::complement(d, std::abs(t)));
      EXPECT_NEAR(stats::student_t_two_sided(t, dof), ref, 1e-12);
    }
}

TEST(TTest, WelchAgainstDirectComputation) {
  const std::vector<double> xs = {1.0, 2.5, 3.0, 4.2, 5.1}, ys = {2.0, 2.2, 2.4, 2.1};
  const double mx = 15.8 / 5, my = 8.7 / 4;
  double vx = 0, vy = 0;
  for (double x : xs) vx += (x - mx) * (x - mx);
  for (double y : ys) vy += (y - my) * (y - my);
  vx /= 4;
  vy /= 3;
  const double se2 = vx / 5 + vy / 4;
  const double dof = se2 * se2 / ((vx / 5) * (vx / 5) / 4 + (vy / 4) * (vy / 4) / 3);
  const auto r = stats::two_sample_t(xs, ys);
  EXPECT_NEAR(r.t, (mx - my) / std::sqrt(se2), 1e-13);
  EXPECT_NEAR(r.dof, dof, 1e-10);
  EXPECT_NEAR(r.p, 2 * boost::math::cdf(boost::math::complement(boost::math::students_t(dof), std::abs(r.t))), 1e-12);
  const auto s = stats::two_sample_t(ys, xs);
  EXPECT_DOUBLE_EQ(s.t, -r.t);
  EXPECT_DOUBLE_EQ(s.p, r.p);
}

TEST(TTest, ExamplesAndErrors) {
  const std::vector<double> xs = {1, 2, 3, 4};
  const auto same = stats::two_sample_t(xs, xs);
  EXPECT_EQ(same.t, 0.0);
  EXPECT_DOUBLE_EQ(same.p, 1.0);
  Rng rng(5);
  std::vector<double> a, b;
  for (int i = 0; i < 100; ++i) {
    a.push_back(standard_normal(rng));
    b.push_back(5 + standard_normal(rng));
  }
  EXPECT_LT(stats::two_sample_t(a, b).p, 1e-10);
  EXPECT_THROW(stats::two_sample_t({1, 1, 1}, {2, 2}), DataError);
  EXPECT_THROW(stats::two_sample_t({1}, {2, 3}), DataError);
}

TEST(Bootstrap, ConstantStatisticAndDeterminism) {
  Rng rng(6);
  const RiskTable t = signal_table(rng, 200);
  const auto constant = stats::bootstrap_ci(t, [](const RiskTable&) { return std::optional<double>(0.42); }, 100, 1);
  EXPECT_EQ(constant.lo, 0.42);
  EXPECT_EQ(constant.hi, 0.42);
  const stats::TableStatistic ci = stats::try_c_index;
  const auto a = stats::bootstrap_ci(t, ci, 300, 9), b = stats::bootstrap_ci(t, ci, 300, 9),
             c = stats::bootstrap_ci(t, ci, 300, 10);
  EXPECT_EQ(a.lo, b.lo);
  EXPECT_EQ(a.hi, b.hi);
  EXPECT_TRUE(a.lo != c.lo || a.hi != c.hi);
  EXPECT_LE(a.lo, a.hi);
}

TEST(Bootstrap, RedrawsAndErrors) {
  // Tiny table: many resamples contain no comparable pair and get redrawn.
  const RiskTable t = {{"a", 1, 1, false}, {"b", 0, 2, true}, {"c", 2, 3, true}};
  const auto iv = stats::bootstrap_ci(t, stats::try_c_index, 200, 3);
  EXPECT_GT(iv.redraws, 0u);
  const RiskTable dead = {{"a", 1, 1, true}, {"b", 0, 2, true}};
  EXPECT_THROW(stats::bootstrap_ci(dead, stats::try_c_index, 50, 3), DataError);
  EXPECT_THROW(stats::bootstrap_ci(t, stats::try_c_index, 1, 3), ParameterError);
  EXPECT_THROW(stats::bootstrap_ci(t, stats::try_c_index, 10, 3, 1.0), ParameterError);
  EXPECT_THROW(stats::bootstrap_ci({}, stats::try_c_index, 10, 3), PreconditionError);
}

TEST(Bootstrap, IntervalCoversPointEstimate) {
  int covered = 0;
  for (int meta = 0; meta < 50; ++meta) {
    Rng rng(derive_seed(77, meta));
    const RiskTable t = signal_table(rng, 500);
    const double point = stats::c_index(t);
    const auto iv = stats::bootstrap_ci(t, stats::try_c_index, 1000, derive_seed(78, meta));
    ASSERT_LE(iv.lo, iv.hi);
    covered += iv.lo <= point && point <= iv.hi;
  }
  EXPECT_GE(covered, 45);
}

TEST(RiskGroups, MedianAndQuartileSplits) {
  RiskTable t;
  for (int i = 1; i <= 4; ++i) t.push_back({"p" + std::to_string(i), double(i), 1, false});
  const auto g = stats::risk_groups(t, stats::GroupScheme::median);
  EXPECT_EQ(g, (std::vector<stats::RiskGroup>{stats::RiskGroup::low, stats::RiskGroup::low, stats::RiskGroup::high,
                                              stats::RiskGroup::high}));
  for (auto& r : t) r.risk = 1.0;
  for (auto x : stats::risk_groups(t, stats::GroupScheme::median)) EXPECT_EQ(x, stats::RiskGroup::low);

  RiskTable hundred;
  for (int i = 1; i <= 100; ++i) hundred.push_back({"p" + std::to_string(i), double(i), 1, false});
  const auto q = stats::risk_groups(hundred, stats::GroupScheme::quartile);
  EXPECT_EQ(std::count(q.begin(), q.end(), stats::RiskGroup::low), 25);
  EXPECT_EQ(std::count(q.begin(), q.end(), stats::RiskGroup::high), 25);
  EXPECT_EQ(stats::select_group(hundred, q, stats::RiskGroup::high).front().risk, 76.0);
  EXPECT_THROW(stats::risk_groups({}, stats::GroupScheme::median), PreconditionError);
}

TEST(RiskGroups, MedianSplitLogrankDetectsSignal) {
  Rng rng(8);
  const auto r = stats::median_split_logrank(signal_table(rng, 400));
  EXPECT_LT(r.p, 1e-4);
}
