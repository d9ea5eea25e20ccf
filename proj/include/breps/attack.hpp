#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "breps/error.hpp"
#include "breps/geometry.hpp"
#include "breps/realism.hpp"
#include "breps/segmodel.hpp"

namespace breps {

enum class AttackMode {
  minimize,  // drive segmentation quality down
  maximize,  // drive segmentation quality up
};

std::string to_string(AttackMode mode);
AttackMode parse_attack_mode(const std::string& s);  // "min" / "max"

struct AttackConfig {
  AttackMode mode = AttackMode::minimize;
  double lambda = 0.1;
  int steps = 50;
  double base_lr = 9.0;  // at 1024 x 1024, see scaled_lr
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  GammaRealismModel realism;

  void validate() const;
};

struct TrajectoryPoint {
  BBox bbox;
  double dice_loss = 0;
  double log_pdf = 0;
  double iou = 0;
};

struct AttackResult {
  BBox final_bbox;
  double final_iou = 0;
  double final_log_pdf = 0;
  std::vector<TrajectoryPoint> trajectory;  // steps + 1 entries, index 0 = tight box
  std::vector<double> grad_norms;           // objective gradient norm per update
  AttackMode mode = AttackMode::minimize;
  AttackConfig config;

  // Trajectory point with the best IoU for this mode (lowest for minimize).
  const TrajectoryPoint& best_seen() const;

  // First update index after which the relative change of the gradient norm
  // stays below `tolerance`; -1 if it never settles.
  int settled_at(double tolerance = 0.01) const;
};

// Model failure mid-attack. Carries everything recorded before the failure.
class AttackAborted : public Error {
 public:
  AttackAborted(const std::string& what, std::vector<TrajectoryPoint> partial)
      : Error(what), partial_(std::move(partial)) {}
  const std::vector<TrajectoryPoint>& partial_trajectory() const { return partial_; }

 private:
  std::vector<TrajectoryPoint> partial_;
};

// Learning rate rescaled from the 1024 x 1024 reference resolution:
// base_lr * sqrt(H^2 + W^2) / (1024 * sqrt(2)).
double scaled_lr(double base_lr, double width, double height);

// Adam with bias correction (moments are never reset).
template <std::size_t N>
class Adam {
 public:
  Adam(double beta1, double beta2, double eps) : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(std::array<double, N>& params, const std::array<double, N>& grad, double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, t_);
    const double c2 = 1.0 - std::pow(beta2_, t_);
    for (std::size_t i = 0; i < N; ++i) {
      m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad[i];
      v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad[i] * grad[i];
      params[i] -= lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
    }
  }

  int iterations() const { return t_; }

 private:
  double beta1_, beta2_, eps_;
  std::array<double, N> m_{};
  std::array<double, N> v_{};
  int t_ = 0;
};

// Gradient descent on J(b) = s * DICE(model(b), gt) - lambda * logPDF(CIoU(b, tight))
// with s = -1 in minimize mode (pushes the DICE loss up) and s = +1 in
// maximize mode. Starts at the tight box, clips after every Adam update and
// reports the box after the last update.
AttackResult breps_attack(SegModel& model, const Instance& inst, const AttackConfig& cfg);

struct LambdaSweepRow {
  double lambda = 0;
  double iou_delta = 0;  // mean over instances of IoU(max) - IoU(min)
  double log_pdf = 0;    // mean final log-PDF over both attacks and all instances
};

// Runs min and max attacks for every lambda on every instance.
std::vector<LambdaSweepRow> sweep_lambda(SegModel& model, std::span<const Instance> instances,
                                         std::span<const double> lambdas,
                                         const AttackConfig& base, int workers = 1);

}  // namespace breps
