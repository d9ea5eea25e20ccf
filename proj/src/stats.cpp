#include "breps/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "breps/error.hpp"

namespace breps {

namespace {

std::vector<double> sorted_copy(std::span<const double> xs) {
  std::vector<double> v(xs.begin(), xs.end());
  std::sort(v.begin(), v.end());
  return v;
}

void require_nonempty(std::span<const double> xs, const char* who) {
  if (xs.empty()) throw InsufficientData(std::string(who) + ": empty sample");
}

}  // namespace

double kolmogorov_survival(double lambda) {
  if (lambda <= 0) return 1.0;
  constexpr double pi = std::numbers::pi;
  if (lambda < 1.18) {
    // Jacobi-theta form converges fast for small lambda.
    const double q = std::exp(-pi * pi / (8 * lambda * lambda));
    double sum = 0;
    for (int j = 1; j <= 50; ++j) {
      const double term = std::pow(q, (2 * j - 1) * (2 * j - 1));
      sum += term;
      if (term < 1e-18) break;
    }
    const double cdf = std::sqrt(2 * pi) / lambda * sum;
    return std::clamp(1.0 - cdf, 0.0, 1.0);
  }
  double sum = 0;
  for (int j = 1; j <= 100; ++j) {
    const double term = std::exp(-2.0 * j * j * lambda * lambda);
    sum += (j % 2 == 1 ? term : -term);
    if (term < 1e-18) break;
  }
  return std::clamp(2 * sum, 0.0, 1.0);
}

StatTestResult ks_test_1d(std::span<const double> a, std::span<const double> b) {
  require_nonempty(a, "ks_test_1d");
  require_nonempty(b, "ks_test_1d");
  const auto sa = sorted_copy(a);
  const auto sb = sorted_copy(b);
  const double na = static_cast<double>(sa.size());
  const double nb = static_cast<double>(sb.size());

  std::size_t i = 0, j = 0;
  double d = 0;
  while (i < sa.size() && j < sb.size()) {
    const double x = std::min(sa[i], sb[j]);
    while (i < sa.size() && sa[i] == x) ++i;
    while (j < sb.size() && sb[j] == x) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }

  StatTestResult r;
  r.statistic = d;
  r.n_a = sa.size();
  r.n_b = sb.size();
  const double ne = na * nb / (na + nb);
  r.p_value = kolmogorov_survival(std::sqrt(ne) * d);
  return r;
}

StatTestResult ks_test_1d(std::span<const double> a, const std::function<double(double)>& cdf) {
  require_nonempty(a, "ks_test_1d");
  const auto sa = sorted_copy(a);
  const double n = static_cast<double>(sa.size());
  double d = 0;
  for (std::size_t i = 0; i < sa.size(); ++i) {
    const double f = cdf(sa[i]);
    const double below = static_cast<double>(i) / n;
    const double above = static_cast<double>(i + 1) / n;
    d = std::max({d, above - f, f - below});
  }
  StatTestResult r;
  r.statistic = d;
  r.n_a = sa.size();
  r.p_value = kolmogorov_survival(std::sqrt(n) * d);
  return r;
}

StatTestResult u_test(std::span<const double> a, std::span<const double> b) {
  require_nonempty(a, "u_test");
  require_nonempty(b, "u_test");

  struct Tagged {
    double value;
    bool from_a;
  };
  std::vector<Tagged> all;
  all.reserve(a.size() + b.size());
  for (double v : a) all.push_back({v, true});
  for (double v : b) all.push_back({v, false});
  std::sort(all.begin(), all.end(),
            [](const Tagged& l, const Tagged& r) { return l.value < r.value; });

  // Average ranks over tie groups.
  const double big_n = static_cast<double>(all.size());
  double rank_sum_a = 0, tie_term = 0;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    while (j < all.size() && all[j].value == all[i].value) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
    const double t = static_cast<double>(j - i);
    tie_term += t * t * t - t;
    for (std::size_t k = i; k < j; ++k) {
      if (all[k].from_a) rank_sum_a += avg_rank;
    }
    i = j;
  }

  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  const double u_a = rank_sum_a - na * (na + 1) / 2;
  const double u_b = na * nb - u_a;

  StatTestResult r;
  r.statistic = std::min(u_a, u_b);
  r.n_a = a.size();
  r.n_b = b.size();

  const double mean = na * nb / 2;
  const double var = na * nb / 12 * ((big_n + 1) - tie_term / (big_n * (big_n - 1)));
  if (!(var > 0)) {
    r.p_value = 1.0;
    return r;
  }
  const double z = std::max(0.0, std::abs(u_a - mean) - 0.5) / std::sqrt(var);
  r.p_value = std::clamp(std::erfc(z / std::numbers::sqrt2), 0.0, 1.0);
  return r;
}

}  // namespace breps
