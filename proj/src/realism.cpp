#include "breps/realism.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <string>

#include <boost/math/special_functions/gamma.hpp>

#include "breps/error.hpp"

namespace breps {

void GammaRealismModel::validate() const {
  if (!(k > 0) || !(theta > 0) || !(x_clamp > 0) || !std::isfinite(k) ||
      !std::isfinite(theta) || !std::isfinite(x_clamp)) {
    throw InvalidParameter("realism model needs k > 0, theta > 0, x_clamp > 0");
  }
}

double digamma(double x) {
  if (!(x > 0)) throw InvalidInput("digamma: argument must be positive");
  double acc = 0;
  while (x < 10) {
    acc -= 1.0 / x;
    x += 1;
  }
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  // Bernoulli-number tail of the asymptotic expansion.
  const double tail =
      inv2 * (1.0 / 12 -
              inv2 * (1.0 / 120 -
                      inv2 * (1.0 / 252 -
                              inv2 * (1.0 / 240 - inv2 * (1.0 / 132 - inv2 * (691.0 / 32760))))));
  return acc + std::log(x) - 0.5 * inv - tail;
}

double trigamma(double x) {
  if (!(x > 0)) throw InvalidInput("trigamma: argument must be positive");
  double acc = 0;
  while (x < 10) {
    acc += 1.0 / (x * x);
    x += 1;
  }
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  const double tail =
      inv2 * inv *
      (1.0 / 6 -
       inv2 * (1.0 / 30 - inv2 * (1.0 / 42 - inv2 * (1.0 / 30 - inv2 * (5.0 / 66)))));
  return acc + inv + 0.5 * inv2 + tail;
}

GammaRealismModel fit_gamma(std::span<const double> samples, double x_clamp) {
  if (samples.size() < 30) {
    throw InsufficientData("fit_gamma needs at least 30 samples, got " +
                           std::to_string(samples.size()));
  }
  if (!(x_clamp > 0)) throw InvalidParameter("fit_gamma: x_clamp must be positive");

  const double n = static_cast<double>(samples.size());
  double sum = 0, sum_log = 0;
  for (double s : samples) {
    if (!std::isfinite(s)) throw InvalidInput("fit_gamma: non-finite sample");
    const double x = std::max(s, x_clamp);
    sum += x;
    sum_log += std::log(x);
  }
  const double mean = sum / n;
  double ss = 0;
  for (double s : samples) {
    const double d = std::max(s, x_clamp) - mean;
    ss += d * d;
  }
  const double var = ss / n;
  if (!(var > 0)) throw DegenerateSample("fit_gamma: samples have zero variance");

  const double target = std::log(mean) - sum_log / n;
  if (!(target > 0)) throw DegenerateSample("fit_gamma: samples have zero log-variance");

  double k = mean * mean / var;
  for (int it = 0; it < 200; ++it) {
    const double f = std::log(k) - digamma(k) - target;
    const double fp = 1.0 / k - trigamma(k);
    double next = k - f / fp;
    if (!(next > 0)) next = 0.5 * k;
    const double change = std::abs(next - k);
    k = next;
    if (change <= 1e-10 * k) break;
  }
  GammaRealismModel model{k, mean / k, x_clamp};
  model.validate();
  return model;
}

double log_pdf(const GammaRealismModel& m, double x) {
  const double xc = std::max(x, m.x_clamp);
  return (m.k - 1) * std::log(xc) - xc / m.theta - m.k * std::log(m.theta) - std::lgamma(m.k);
}

double dlog_pdf_dx(const GammaRealismModel& m, double x) {
  if (x < m.x_clamp) return 0.0;
  return (m.k - 1) / x - 1.0 / m.theta;
}

double gamma_cdf(const GammaRealismModel& m, double x) {
  if (x <= 0) return 0.0;
  return boost::math::gamma_p(m.k, x / m.theta);
}

double box_log_pdf(const GammaRealismModel& model, const BBox& b, const BBox& b_star) {
  return log_pdf(model, ciou_loss(b, b_star).total);
}

BoxGrad log_pdf_grad_bbox(const GammaRealismModel& model, const BBox& b, const BBox& b_star) {
  const double x = ciou_loss(b, b_star).total;
  const double slope = dlog_pdf_dx(model, x);
  if (slope == 0) return {0, 0, 0, 0};
  BoxGrad g = ciou_grad(b, b_star);
  for (double& v : g) v *= slope;
  return g;
}

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

struct TargetEval {
  double log_density = kNegInf;
  BoxGrad drift_grad{};
};

class MalaTargetDensity {
 public:
  MalaTargetDensity(const GammaRealismModel& model, const BBox& b_star, double w, double h,
                    MalaTarget kind)
      : model_(model),
        b_star_(b_star),
        w_(w),
        h_(h),
        kind_(kind),
        scale_{b_star.width(), b_star.height(), b_star.width(), b_star.height()} {}

  bool in_domain(const BBox& b) const {
    return b.finite() && b.x1 >= 0 && b.y1 >= 0 && b.x2 <= w_ && b.y2 <= h_ &&
           b.x2 - b.x1 >= kMinBoxSide && b.y2 - b.y1 >= kMinBoxSide;
  }

  TargetEval operator()(const BBox& b) const {
    TargetEval out;
    if (!in_domain(b)) return out;
    const double x = ciou_loss(b, b_star_).total;
    const BoxGrad dx = ciou_grad(b, b_star_);
    const double lp = log_pdf(model_, x);
    const double slope = dlog_pdf_dx(model_, x);

    if (kind_ == MalaTarget::box_density) {
      out.log_density = lp;
      for (int i = 0; i < 4; ++i) out.drift_grad[i] = slope * dx[i];
      return out;
    }

    // Polar change of variables around b_star: density over (direction, t)
    // is uniform x Gamma(X) dX/dt, and the Cartesian density divides by t^3.
    const auto b_arr = b.as_array();
    const auto s_arr = b_star_.as_array();
    std::array<double, 4> delta{};
    double t2 = 0, radial = 0;
    for (int i = 0; i < 4; ++i) {
      delta[i] = b_arr[i] - s_arr[i];
      t2 += (delta[i] / scale_[i]) * (delta[i] / scale_[i]);
      radial += dx[i] * delta[i];
    }
    if (!(t2 > 0) || !(radial > 0)) return out;
    out.log_density = lp + std::log(radial) - 2.0 * std::log(t2);
    // The Hessian contribution to d log(radial) is dropped; the drift only
    // shapes proposals and the Metropolis correction keeps the chain exact.
    for (int i = 0; i < 4; ++i) {
      out.drift_grad[i] = slope * dx[i] + dx[i] / radial -
                          4.0 * delta[i] / (scale_[i] * scale_[i] * t2);
    }
    return out;
  }

 private:
  GammaRealismModel model_;
  BBox b_star_;
  double w_, h_;
  MalaTarget kind_;
  std::array<double, 4> scale_;
};

// Langevin drift step^2/2 * grad, shortened to at most drift_cap * step.
// Near b_star the gradient grows like 1/t; uncapped drifts overshoot and the
// chain can then almost never re-enter the small-loss region.
std::array<double, 4> drift(const BoxGrad& grad, double step, double drift_cap) {
  std::array<double, 4> d{};
  double norm2 = 0;
  for (int i = 0; i < 4; ++i) {
    d[i] = 0.5 * step * step * grad[i];
    norm2 += d[i] * d[i];
  }
  const double limit = drift_cap * step;
  if (norm2 > limit * limit) {
    const double scale = limit / std::sqrt(norm2);
    for (double& v : d) v *= scale;
  }
  return d;
}

// log q(to | from) up to a constant shared by both directions.
double log_proposal(const std::array<double, 4>& to, const std::array<double, 4>& from,
                    const std::array<double, 4>& drift_from, double step) {
  double ss = 0;
  for (int i = 0; i < 4; ++i) {
    const double r = to[i] - from[i] - drift_from[i];
    ss += r * r;
  }
  return -ss / (2 * step * step);
}

}  // namespace

MalaResult mala_sample(const GammaRealismModel& model, const BBox& b_star, double image_w,
                       double image_h, int n, const MalaOptions& options, std::uint64_t seed) {
  model.validate();
  if (n < 1) throw InvalidParameter("mala_sample: n must be >= 1");
  if (!(options.drift_cap > 0)) throw InvalidParameter("mala_sample: drift_cap must be > 0");
  if (options.burn_in < 0 || options.thin < 1) {
    throw InvalidParameter("mala_sample: burn_in must be >= 0 and thin >= 1");
  }
  if (!(b_star.width() > 0) || !(b_star.height() > 0)) {
    throw InvalidGroundTruth("mala_sample: degenerate reference box");
  }
  const double step = options.step.value_or(kDefaultMalaStep * b_star.diagonal());
  if (!(step > 0) || !std::isfinite(step)) {
    throw InvalidParameter("mala_sample: step must be positive");
  }

  const MalaTargetDensity target(model, b_star, image_w, image_h, options.target);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);

  // Initial state: b_star jittered by 2% of its diagonal.
  const double jitter = 0.02 * b_star.diagonal();
  BBox state;
  TargetEval current;
  for (int attempt = 0;; ++attempt) {
    if (attempt == 10000) {
      throw InvalidParameter("mala_sample: could not place the initial state in the image");
    }
    auto a = b_star.as_array();
    for (double& v : a) v += jitter * normal(rng);
    state = BBox::from_array(a);
    current = target(state);
    if (std::isfinite(current.log_density)) break;
  }

  MalaResult result;
  result.step = step;
  result.samples.reserve(static_cast<std::size_t>(n));
  const long long total =
      static_cast<long long>(options.burn_in) + static_cast<long long>(n) * options.thin;
  long long accepted = 0;

  // Constant diagonal preconditioner: the chain moves in u = b / m with m
  // proportional to (w*, h*, w*, h*), normalized so m = 1 for square boxes.
  const double root2 = std::sqrt(2.0);
  const std::array<double, 4> m{root2 * b_star.width() / b_star.diagonal(),
                                root2 * b_star.height() / b_star.diagonal(),
                                root2 * b_star.width() / b_star.diagonal(),
                                root2 * b_star.height() / b_star.diagonal()};
  auto u_drift = [&](const BoxGrad& g) {
    BoxGrad gu{};
    for (int i = 0; i < 4; ++i) gu[i] = g[i] * m[i];
    return drift(gu, step, options.drift_cap);
  };
  auto to_u = [&](const BBox& b) {
    auto a = b.as_array();
    for (int i = 0; i < 4; ++i) a[i] /= m[i];
    return a;
  };
  auto current_drift = u_drift(current.drift_grad);

  for (long long it = 1; it <= total; ++it) {
    const auto from = to_u(state);
    std::array<double, 4> to{}, to_b{};
    for (int i = 0; i < 4; ++i) {
      to[i] = from[i] + current_drift[i] + step * normal(rng);
      to_b[i] = to[i] * m[i];
    }
    const BBox proposal = BBox::from_array(to_b);
    const TargetEval next = target(proposal);
    const double u = uniform(rng);
    if (std::isfinite(next.log_density)) {
      const auto next_drift = u_drift(next.drift_grad);
      const double log_ratio = next.log_density - current.log_density +
                               log_proposal(from, to, next_drift, step) -
                               log_proposal(to, from, current_drift, step);
      if (std::log(u) < log_ratio) {
        state = clip_and_order(proposal, image_w, image_h);
        current = next;
        current_drift = next_drift;
        ++accepted;
      }
    }
    if (it > options.burn_in && (it - options.burn_in) % options.thin == 0) {
      result.samples.push_back(state);
    }
  }
  result.acceptance_rate = static_cast<double>(accepted) / static_cast<double>(total);
  return result;
}

std::vector<BBox> jitter_baseline(const BBox& b_star, double fraction, int n, double image_w,
                                  double image_h, std::uint64_t seed) {
  if (!(fraction >= 0)) throw InvalidParameter("jitter_baseline: fraction must be >= 0");
  if (n < 0) throw InvalidParameter("jitter_baseline: n must be >= 0");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  const double jx = fraction * b_star.width();
  const double jy = fraction * b_star.height();
  std::vector<BBox> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    BBox b{b_star.x1 + jx * unit(rng), b_star.y1 + jy * unit(rng), b_star.x2 + jx * unit(rng),
           b_star.y2 + jy * unit(rng)};
    out.push_back(clip_and_order(b, image_w, image_h));
  }
  return out;
}

}  // namespace breps
