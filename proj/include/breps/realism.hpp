#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "breps/geometry.hpp"

namespace breps {

// Gamma(k, theta) density over the CIoU loss between a box and its tight box.
// Arguments below x_clamp are raised to x_clamp before evaluation, so the
// density is flat (zero gradient) in a small neighbourhood of the tight box.
struct GammaRealismModel {
  double k = 1.789;
  double theta = 0.121;
  double x_clamp = 1e-4;

  void validate() const;
  double mode() const { return k > 1 ? (k - 1) * theta : 0.0; }
};

// Digamma and trigamma via recurrence + asymptotic series (|err| < 1e-13 for x > 0).
double digamma(double x);
double trigamma(double x);

// Maximum-likelihood fit: method-of-moments start, Newton on
// ln k - digamma(k) = ln(mean) - mean(ln x), theta = mean / k.
// Needs at least 30 samples; samples below x_clamp are clamped first.
GammaRealismModel fit_gamma(std::span<const double> samples, double x_clamp = 1e-4);

double log_pdf(const GammaRealismModel& model, double x);

// d log_pdf / dx; zero inside the clamp region (x < x_clamp).
double dlog_pdf_dx(const GammaRealismModel& model, double x);

// Regularized lower incomplete gamma P(k, x / theta).
double gamma_cdf(const GammaRealismModel& model, double x);

// log_pdf(ciou_loss(b, b_star).total) and its gradient in box coordinates.
double box_log_pdf(const GammaRealismModel& model, const BBox& b, const BBox& b_star);
BoxGrad log_pdf_grad_bbox(const GammaRealismModel& model, const BBox& b, const BBox& b_star);

enum class MalaTarget {
  // Density over boxes whose CIoU-loss marginal is exactly the fitted Gamma:
  // uniform over ray directions around b_star (in box-size-scaled
  // coordinates), Gamma-distributed loss along each ray.
  gamma_marginal,
  // Density proportional to exp(log_pdf(CIoU(b, b_star))) in raw box space.
  // Its CIoU marginal is the Gamma reweighted by the level-set volume and is
  // heavily skewed towards large losses.
  box_density,
};

// Picked by pilot runs: acceptance about 0.7 on the toy corpus.
inline constexpr double kDefaultMalaStep = 0.04;

struct MalaOptions {
  std::optional<double> step;  // unset: kDefaultMalaStep * diag(b_star)
  int burn_in = 500;
  int thin = 50;  // keep every thin-th state after burn-in
  // Longest drift move, in units of step (truncated MALA). Infinity gives
  // the textbook proposal.
  double drift_cap = 1.0;
  MalaTarget target = MalaTarget::gamma_marginal;
};

struct MalaResult {
  std::vector<BBox> samples;
  double acceptance_rate = 0;
  double step = 0;
};

// Metropolis-adjusted Langevin chain over (x1, y1, x2, y2) restricted to
// boxes inside the image with sides of at least kMinBoxSide. Deterministic
// for a fixed seed.
MalaResult mala_sample(const GammaRealismModel& model, const BBox& b_star, double image_w,
                       double image_h, int n, const MalaOptions& options, std::uint64_t seed);

// Uniform per-coordinate jitter of +-fraction times the matching side length,
// then clip_and_order.
std::vector<BBox> jitter_baseline(const BBox& b_star, double fraction, int n, double image_w,
                                  double image_h, std::uint64_t seed);

}  // namespace breps
