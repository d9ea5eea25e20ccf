#pragma once

#include <cstddef>
#include <functional>
#include <span>

namespace breps {

struct StatTestResult {
  double statistic = 0;
  double p_value = 1;
  std::size_t n_a = 0;
  std::size_t n_b = 0;  // 0 when tested against an analytic distribution
};

// Survival function of the Kolmogorov distribution, P(K > lambda).
double kolmogorov_survival(double lambda);

// Two-sample KS: D = sup |F_a - F_b|, asymptotic p-value.
StatTestResult ks_test_1d(std::span<const double> a, std::span<const double> b);

// One-sample KS against a continuous CDF.
StatTestResult ks_test_1d(std::span<const double> a, const std::function<double(double)>& cdf);

// Mann-Whitney U, two-sided, normal approximation with tie and continuity
// correction. `statistic` is min(U_a, U_b).
StatTestResult u_test(std::span<const double> a, std::span<const double> b);

}  // namespace breps
