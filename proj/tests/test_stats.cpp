#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "breps/error.hpp"
#include "breps/stats.hpp"

using namespace breps;

namespace {

// Sup of |F_a - F_b| evaluated at every sample point and just below it.
double brute_force_ks(const std::vector<double>& a, const std::vector<double>& b) {
  auto ecdf = [](const std::vector<double>& s, double x, bool inclusive) {
    double n = 0;
    for (double v : s) n += inclusive ? v <= x : v < x;
    return n / static_cast<double>(s.size());
  };
  std::vector<double> pts(a);
  pts.insert(pts.end(), b.begin(), b.end());
  double d = 0;
  for (double x : pts) {
    for (bool inc : {true, false}) d = std::max(d, std::abs(ecdf(a, x, inc) - ecdf(b, x, inc)));
  }
  return d;
}

// Same scan against an analytic CDF: the ECDF jumps at each sample, so both
// one-sided limits are compared.
double brute_force_ks(const std::vector<double>& a, double (*cdf)(double)) {
  double d = 0;
  for (double x : a) {
    double below = 0, at = 0;
    for (double v : a) {
      below += v < x;
      at += v <= x;
    }
    const double n = static_cast<double>(a.size());
    d = std::max({d, std::abs(at / n - cdf(x)), std::abs(below / n - cdf(x))});
  }
  return d;
}

double uniform_cdf(double x) { return std::clamp(x, 0.0, 1.0); }

// U for sample a by counting pairs (ties count one half).
double pair_count_u(const std::vector<double>& a, const std::vector<double>& b) {
  double u = 0;
  for (double x : a)
    for (double y : b) u += x > y ? 1.0 : (x == y ? 0.5 : 0.0);
  return u;
}

}  // namespace

TEST(Kolmogorov, MatchesReferenceSurvival) {
  // Values of the limiting Kolmogorov survival function (scipy kstwobign.sf).
  EXPECT_NEAR(kolmogorov_survival(0.5), 0.9639452436648751, 1e-12);
  EXPECT_NEAR(kolmogorov_survival(1.0), 0.26999967167735456, 1e-12);
  EXPECT_NEAR(kolmogorov_survival(1.17), 0.12939004218561884, 1e-12);
  EXPECT_NEAR(kolmogorov_survival(1.18), 0.1234538094297657, 1e-12);
  EXPECT_NEAR(kolmogorov_survival(1.5), 0.022217962616525127, 1e-12);
  EXPECT_NEAR(kolmogorov_survival(2.5), 7.453306344157342e-06, 1e-15);
  EXPECT_EQ(kolmogorov_survival(0.0), 1.0);
}

TEST(KsTest, IdenticalSamplesGiveZero) {
  const std::vector<double> a{0.3, 0.1, 0.7, 0.7, 0.2};
  const auto r = ks_test_1d(a, a);
  EXPECT_EQ(r.statistic, 0.0);
  EXPECT_EQ(r.p_value, 1.0);
}

TEST(KsTest, DisjointSupportsGiveOne) {
  const std::vector<double> a{1, 2, 3}, b{4, 5, 6, 7};
  EXPECT_EQ(ks_test_1d(a, b).statistic, 1.0);
}

TEST(KsTest, TenthsAgainstUniformByScan) {
  std::vector<double> tenths;
  for (int i = 1; i <= 10; ++i) tenths.push_back(i / 10.0);
  const auto r = ks_test_1d(tenths, uniform_cdf);
  EXPECT_NEAR(r.statistic, brute_force_ks(tenths, &uniform_cdf), 1e-15);
  // The ECDF sits at 0 just below 0.1 while the CDF is 0.1.
  EXPECT_NEAR(r.statistic, 0.1, 1e-15);

  std::vector<double> midpoints;
  for (int i = 0; i < 10; ++i) midpoints.push_back(0.05 + i / 10.0);
  EXPECT_NEAR(ks_test_1d(midpoints, uniform_cdf).statistic, 0.05, 1e-15);
}

TEST(KsTest, TwoSampleMatchesBruteForceAndReferenceP) {
  const std::vector<double> a{1.2, 3.4, 2.2, 5.1, 0.7, 3.3, 2.2};
  const std::vector<double> b{2.2, 4.4, 6.1, 5.5, 3.9, 7.0};
  const auto r = ks_test_1d(a, b);
  EXPECT_NEAR(r.statistic, 0.6904761904761905, 1e-15);
  EXPECT_NEAR(r.statistic, brute_force_ks(a, b), 1e-15);
  // kstwobign.sf(sqrt(7*6/13) * D)
  EXPECT_NEAR(r.p_value, 0.09185575509389855, 1e-12);
  EXPECT_EQ(r.n_a, 7u);
  EXPECT_EQ(r.n_b, 6u);
}

TEST(KsTest, RandomSamplesMatchBruteForce) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n(0, 1);
  std::uniform_int_distribution<int> coarse(0, 9);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> a(5 + trial % 13), b(3 + trial % 7);
    // Alternate between continuous and heavily tied samples.
    for (auto& v : a) v = trial % 2 ? n(rng) : coarse(rng);
    for (auto& v : b) v = trial % 2 ? n(rng) + 0.3 : coarse(rng);
    EXPECT_NEAR(ks_test_1d(a, b).statistic, brute_force_ks(a, b), 1e-15);
  }
}

TEST(KsTest, EmptySampleThrows) {
  const std::vector<double> none, some{1.0};
  EXPECT_THROW(ks_test_1d(none, some), InsufficientData);
  EXPECT_THROW(ks_test_1d(some, none), InsufficientData);
  EXPECT_THROW(ks_test_1d(none, uniform_cdf), InsufficientData);
}

TEST(KsTest, PValueInUnitInterval) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> a(20);
    for (auto& v : a) v = u(rng) * (1 + trial / 50.0);
    const auto r = ks_test_1d(a, uniform_cdf);
    EXPECT_GE(r.p_value, 0.0);
    EXPECT_LE(r.p_value, 1.0);
    EXPECT_GE(r.statistic, 0.0);
  }
}

TEST(UTest, IdenticalSamples) {
  const std::vector<double> a{1, 5, 2, 8, 3};
  const auto r = u_test(a, a);
  EXPECT_NEAR(r.p_value, 1.0, 1e-12);
}

TEST(UTest, SeparatedSamplesByPairCounting) {
  std::vector<double> a(50), b(50);
  std::iota(a.begin(), a.end(), 1.0);
  std::iota(b.begin(), b.end(), 51.0);
  const auto r = u_test(a, b);
  EXPECT_EQ(pair_count_u(a, b), 0.0);
  EXPECT_EQ(r.statistic, 0.0);
  EXPECT_LT(r.p_value, 1e-6);
}

TEST(UTest, TiedSampleMatchesReference) {
  // scipy.stats.mannwhitneyu(a, b, method="asymptotic", use_continuity=True)
  const std::vector<double> a{1.2, 3.4, 2.2, 5.1, 0.7, 3.3, 2.2};
  const std::vector<double> b{2.2, 4.4, 6.1, 5.5, 3.9, 7.0};
  const auto r = u_test(a, b);
  EXPECT_EQ(pair_count_u(a, b), 6.0);
  EXPECT_EQ(r.statistic, 6.0);
  EXPECT_NEAR(r.p_value, 0.037259909504905916, 1e-12);
}

TEST(UTest, StatisticIsMinOfPairCounts) {
  std::mt19937_64 rng(13);
  std::uniform_int_distribution<int> d(0, 6);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> a(4 + trial % 9), b(3 + trial % 5);
    for (auto& v : a) v = d(rng);
    for (auto& v : b) v = d(rng);
    const double ua = pair_count_u(a, b), ub = pair_count_u(b, a);
    EXPECT_DOUBLE_EQ(u_test(a, b).statistic, std::min(ua, ub));
    EXPECT_NEAR(u_test(a, b).p_value, u_test(b, a).p_value, 1e-14);
  }
}

TEST(UTest, DeviceShiftIsSignificant) {
  // Mobile boxes a little worse (higher CIoU loss) than desktop ones.
  std::mt19937_64 rng(14);
  std::gamma_distribution<double> g(1.789, 0.121);
  std::vector<double> desktop(1000), mobile(1000);
  for (auto& v : desktop) v = g(rng);
  for (auto& v : mobile) v = g(rng) + 0.05;
  EXPECT_LT(u_test(desktop, mobile).p_value, 0.01);
}

TEST(UTest, EmptySampleThrows) {
  const std::vector<double> none, some{1.0};
  EXPECT_THROW(u_test(none, some), InsufficientData);
}
