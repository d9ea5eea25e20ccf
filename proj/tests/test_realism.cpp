#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "breps/error.hpp"
#include "breps/realism.hpp"
#include "breps/segmodel.hpp"
#include "breps/stats.hpp"
#include "test_util.hpp"

using namespace breps;

namespace {

std::vector<double> gamma_draws(double k, double theta, int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::gamma_distribution<double> g(k, theta);
  std::vector<double> out(static_cast<std::size_t>(n));
  for (auto& v : out) v = g(rng);
  return out;
}

double relative(double got, double want) { return std::abs(got - want) / want; }

std::vector<double> losses(const std::vector<BBox>& boxes, const BBox& b_star) {
  std::vector<double> out;
  for (const auto& b : boxes) out.push_back(ciou_loss(b, b_star).total);
  return out;
}

}  // namespace

TEST(SpecialFunctions, DigammaKnownValues) {
  const double euler = 0.57721566490153286061;
  EXPECT_NEAR(digamma(1.0), -euler, 1e-13);
  EXPECT_NEAR(digamma(0.5), -euler - 2 * std::numbers::ln2, 1e-13);
  EXPECT_NEAR(digamma(10.0), 2.2517525890667211, 1e-13);
  for (double x : {0.1, 0.7, 1.789, 3.3, 12.5, 40.0}) {
    EXPECT_NEAR(digamma(x + 1), digamma(x) + 1 / x, 1e-12) << x;
  }
}

TEST(SpecialFunctions, TrigammaKnownValuesAndDerivative) {
  EXPECT_NEAR(trigamma(1.0), std::numbers::pi * std::numbers::pi / 6, 1e-13);
  EXPECT_NEAR(trigamma(0.5), std::numbers::pi * std::numbers::pi / 2, 1e-12);
  for (double x : {0.3, 1.789, 5.0, 25.0}) {
    const double h = 1e-5 * x;
    EXPECT_NEAR(trigamma(x), (digamma(x + h) - digamma(x - h)) / (2 * h), 1e-6 * trigamma(x)) << x;
  }
}

TEST(FitGamma, RecoversPaperParametersAtLargeN) {
  const auto m = fit_gamma(gamma_draws(1.789, 0.121, 25000, 21));
  EXPECT_LT(relative(m.k, 1.789), 0.05);
  EXPECT_LT(relative(m.theta, 0.121), 0.05);
}

TEST(FitGamma, RecoversWithinFifteenPercentAtSmallN) {
  for (std::uint64_t seed : {22u, 23u, 24u}) {
    const auto m = fit_gamma(gamma_draws(1.789, 0.121, 1000, seed));
    EXPECT_LT(relative(m.k, 1.789), 0.15) << seed;
    EXPECT_LT(relative(m.theta, 0.121), 0.15) << seed;
  }
}

TEST(FitGamma, ExponentialHasUnitShape) {
  std::mt19937_64 rng(25);
  std::exponential_distribution<double> e(1.0);
  std::vector<double> xs(10000);
  for (auto& v : xs) v = e(rng);
  const auto m = fit_gamma(xs);
  EXPECT_LT(relative(m.k, 1.0), 0.05);
}

TEST(FitGamma, SolvesTheShapeEquation) {
  const auto xs = gamma_draws(3.0, 0.5, 500, 26);
  const auto m = fit_gamma(xs);
  double mean = 0, mean_log = 0;
  for (double x : xs) {
    mean += x;
    mean_log += std::log(x);
  }
  mean /= xs.size();
  mean_log /= xs.size();
  EXPECT_NEAR(std::log(m.k) - digamma(m.k), std::log(mean) - mean_log, 1e-10);
  EXPECT_NEAR(m.k * m.theta, mean, 1e-12);
}

TEST(FitGamma, Errors) {
  EXPECT_THROW(fit_gamma(std::vector<double>(29, 0.5)), InsufficientData);
  EXPECT_THROW(fit_gamma(std::vector<double>(100, 0.5)), DegenerateSample);
}

TEST(LogPdf, TermByTerm) {
  const GammaRealismModel m;
  const double x = 0.1;
  const double expected = (1.789 - 1) * std::log(x) - x / 0.121 - 1.789 * std::log(0.121) -
                          std::lgamma(1.789);
  EXPECT_NEAR(log_pdf(m, x), expected, 1e-12);
  // scipy.stats.gamma.logpdf(0.1, 1.789, scale=0.121)
  EXPECT_NEAR(log_pdf(m, x), 1.2092930637541532, 1e-12);
}

TEST(LogPdf, ModeAndClamp) {
  const GammaRealismModel m;
  EXPECT_NEAR(m.mode(), 0.789 * 0.121, 1e-15);
  double best_x = 0, best = -1e300;
  for (int i = 1; i <= 200000; ++i) {
    const double x = i * 1e-6;
    if (log_pdf(m, x) > best) {
      best = log_pdf(m, x);
      best_x = x;
    }
  }
  EXPECT_NEAR(best_x, 0.09547, 2e-6);
  EXPECT_EQ(log_pdf(m, 0.0), log_pdf(m, m.x_clamp));
  EXPECT_EQ(dlog_pdf_dx(m, 0.5 * m.x_clamp), 0.0);
}

TEST(LogPdf, IntegratesToOne) {
  const GammaRealismModel m;
  const double lo = m.x_clamp, hi = 20 * m.k * m.theta;
  const int n = 400000;  // Simpson, even number of panels
  const double h = (hi - lo) / n;
  double s = std::exp(log_pdf(m, lo)) + std::exp(log_pdf(m, hi));
  for (int i = 1; i < n; ++i) s += (i % 2 ? 4 : 2) * std::exp(log_pdf(m, lo + i * h));
  EXPECT_NEAR(s * h / 3, 1.0, 1e-3);
}

TEST(LogPdf, CdfMatchesIntegratedDensity) {
  const GammaRealismModel m;
  // scipy.stats.gamma.cdf(0.1, 1.789, scale=0.121)
  EXPECT_NEAR(gamma_cdf(m, 0.1), 0.25735953341720486, 1e-12);
  for (double x : {0.05, 0.2, 0.5}) {
    const int n = 200000;
    const double h = x / n;
    double s = 0;
    for (int i = 0; i < n; ++i) s += std::exp(log_pdf(m, (i + 0.5) * h)) * h;
    EXPECT_NEAR(gamma_cdf(m, x), s, 1e-4) << x;
  }
}

TEST(LogPdf, DerivativeMatchesFiniteDifference) {
  const GammaRealismModel m;
  for (double x : {0.001, 0.05, 0.0955, 0.3, 1.2}) {
    const double h = 1e-6 * x;
    const double fd = (log_pdf(m, x + h) - log_pdf(m, x - h)) / (2 * h);
    EXPECT_NEAR(dlog_pdf_dx(m, x), fd, 1e-6 * std::max(1.0, std::abs(fd))) << x;
  }
}

TEST(LogPdfGradBBox, ZeroAtTightBox) {
  const GammaRealismModel m;
  const BBox b{3, 4, 12, 10};
  for (double v : log_pdf_grad_bbox(m, b, b)) EXPECT_EQ(v, 0.0);
}

TEST(LogPdfGradBBox, MatchesFiniteDifferences) {
  const GammaRealismModel m;
  std::mt19937_64 rng(27);
  std::normal_distribution<double> jitter(0, 2.0);
  const BBox g{10, 12, 30, 26};
  int checked = 0;
  while (checked < 200) {
    const BBox b{g.x1 + jitter(rng), g.y1 + jitter(rng), g.x2 + jitter(rng), g.y2 + jitter(rng)};
    if (std::abs(b.x1 - g.x1) < 0.01 || std::abs(b.x2 - g.x2) < 0.01 ||
        std::abs(b.y1 - g.y1) < 0.01 || std::abs(b.y2 - g.y2) < 0.01) {
      continue;
    }
    const BoxGrad a = log_pdf_grad_bbox(m, b, g);
    const BoxGrad f = finite_difference_grad(
        [&](const BBox& x) { return box_log_pdf(m, x, g); }, b, 1e-5);
    EXPECT_LT(max_relative_error(a, f), 1e-4) << b;
    ++checked;
  }
}

TEST(LogPdfGradBBox, SignFlipsAcrossTheMode) {
  // Growing x2 raises the loss; below the mode that raises the density,
  // above the mode it lowers it.
  const GammaRealismModel m;
  const BBox g{0, 0, 10, 10};
  const BBox near{0, 0, 10.5, 10};
  const BBox far{0, 0, 14, 10};
  ASSERT_LT(ciou_loss(near, g).total, m.mode());
  ASSERT_GT(ciou_loss(far, g).total, m.mode());
  EXPECT_GT(log_pdf_grad_bbox(m, near, g)[2], 0);
  EXPECT_LT(log_pdf_grad_bbox(m, far, g)[2], 0);
}

TEST(Mala, Deterministic) {
  const GammaRealismModel m;
  const BBox b{20, 22, 40, 38};
  const auto a = mala_sample(m, b, 64, 64, 200, {}, 5);
  const auto c = mala_sample(m, b, 64, 64, 200, {}, 5);
  ASSERT_EQ(a.samples.size(), 200u);
  EXPECT_EQ(a.samples, c.samples);
  EXPECT_EQ(a.acceptance_rate, c.acceptance_rate);
  const auto d = mala_sample(m, b, 64, 64, 200, {}, 6);
  EXPECT_NE(a.samples, d.samples);
}

TEST(Mala, VanishingStepStaysWithinInitialJitter) {
  const GammaRealismModel m;
  const BBox b{20, 22, 40, 38};
  MalaOptions o;
  o.step = 1e-9;
  o.burn_in = 0;
  o.thin = 1;
  const auto r = mala_sample(m, b, 64, 64, 1, o, 7);
  ASSERT_EQ(r.samples.size(), 1u);
  const double jitter = 0.02 * b.diagonal();
  const auto s = r.samples[0].as_array(), t = b.as_array();
  for (int i = 0; i < 4; ++i) EXPECT_LT(std::abs(s[i] - t[i]), 5 * jitter);
}

TEST(Mala, RejectsBadParameters) {
  const GammaRealismModel m;
  const BBox b{20, 22, 40, 38};
  MalaOptions o;
  o.step = 0;
  EXPECT_THROW(mala_sample(m, b, 64, 64, 10, o, 1), InvalidParameter);
  o.step = -1;
  EXPECT_THROW(mala_sample(m, b, 64, 64, 10, o, 1), InvalidParameter);
  EXPECT_THROW(mala_sample(m, b, 64, 64, 0, {}, 1), InvalidParameter);
}

TEST(Mala, SamplesAreValidBoxes) {
  const GammaRealismModel m;
  const BBox b{2, 3, 20, 15};  // near the border on purpose
  const auto r = mala_sample(m, b, 32, 24, 500, {}, 8);
  for (const auto& s : r.samples) {
    EXPECT_TRUE(s.ordered());
    EXPECT_GE(s.x1, 0);
    EXPECT_GE(s.y1, 0);
    EXPECT_LE(s.x2, 32);
    EXPECT_LE(s.y2, 24);
    EXPECT_EQ(clip_and_order(s, 32, 24), s);
  }
}

TEST(Mala, MarginalMatchesGammaAndAcceptanceInWindow) {
  const GammaRealismModel m;
  const BBox b{54, 54, 74, 74};
  const auto r = mala_sample(m, b, 128, 128, 10000, {}, 42);
  EXPECT_GE(r.acceptance_rate, 0.3);
  EXPECT_LE(r.acceptance_rate, 0.8);
  const auto ks = ks_test_1d(losses(r.samples, b), [&](double x) { return gamma_cdf(m, x); });
  EXPECT_GT(ks.p_value, 0.01) << "D = " << ks.statistic;
}

TEST(Mala, LiteralBoxDensityIsSkewedToLargeLosses) {
  const GammaRealismModel m;
  const BBox b{54, 54, 74, 74};
  MalaOptions o;
  o.target = MalaTarget::box_density;
  const auto r = mala_sample(m, b, 128, 128, 2000, o, 43);
  const auto x = losses(r.samples, b);
  double mean = 0;
  for (double v : x) mean += v;
  mean /= x.size();
  EXPECT_GT(mean, 2 * m.k * m.theta);
}

TEST(Jitter, ZeroFractionIsIdentity) {
  const BBox b{3, 4, 12, 10};
  for (const auto& j : jitter_baseline(b, 0.0, 20, 32, 32, 1)) EXPECT_EQ(j, b);
}

TEST(Jitter, DeterministicAndValid) {
  const BBox b{3, 4, 12, 10};
  const auto a = jitter_baseline(b, 0.3, 200, 16, 16, 2);
  EXPECT_EQ(a, jitter_baseline(b, 0.3, 200, 16, 16, 2));
  for (const auto& j : a) {
    EXPECT_TRUE(j.ordered());
    EXPECT_EQ(clip_and_order(j, 16, 16), j);
    EXPECT_LE(std::abs(j.x1 - b.x1), 0.3 * b.width() + 1e-12);
  }
}

TEST(Jitter, LessRealisticThanMala) {
  const GammaRealismModel m;
  const BBox b{40, 44, 88, 84};
  const auto jit = jitter_baseline(b, 0.3, 2000, 128, 128, 3);
  const auto mala = mala_sample(m, b, 128, 128, 2000, {}, 4);
  double lj = 0, lm = 0;
  for (const auto& j : jit) lj += box_log_pdf(m, j, b);
  for (const auto& s : mala.samples) lm += box_log_pdf(m, s, b);
  EXPECT_LT(lj / jit.size(), lm / mala.samples.size());
}
