#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>

#include "breps/geometry.hpp"
#include "breps/image.hpp"
#include "breps/realism.hpp"

namespace breps {

struct Instance {
  std::string image_id;
  int width = 0;
  int height = 0;
  BinaryMask gt_mask;
  SoftMask objectness;  // per-pixel prior the toy segmenter multiplies into its output
  BBox tight;
};

// Builds an instance from a binarized mask: tight box plus objectness field.
// Throws EmptyMask when the mask has no foreground.
Instance make_instance(std::string image_id, BinaryMask mask);

// Objectness = clamp(0.9 * blur(blur(mask)) + 0.1 * distractor, 0, 1), where
// blur is a zero-padded 5x5 box filter and distractor is a hash-seeded set of
// hard-edged discs (see distractor_pattern).
SoftMask make_objectness(std::string_view image_id, const BinaryMask& mask);

// Deterministic 0/1 pattern of 2..5 discs. Seeded by FNV-1a-64 of the image
// id feeding a splitmix64 stream:
//   n = 2 + next() % 4; per disc cx = u*W, cy = u*H, r = 1.5 + u*max(1, min(W,H)/8)
// with u = (next() >> 11) * 2^-53; pixel centers within r are set.
BinaryMask distractor_pattern(std::string_view image_id, int width, int height);

std::uint64_t fnv1a64(std::string_view s);

struct ModelEval {
  double dice_loss = 1;
  double iou = 0;  // hard prediction vs gt_mask
  BoxGrad grad{};  // d dice_loss / d(x1, y1, x2, y2)
};

// Every segmenter the attack, oracle and metrics drive satisfies this.
class SegModel {
 public:
  virtual ~SegModel() = default;
  virtual ModelEval eval(const Instance& inst, const BBox& b) = 0;
  // Hard IoU only; models may override with a cheaper path.
  virtual double iou(const Instance& inst, const BBox& b) { return eval(inst, b).iou; }
  // False when calls must not overlap (e.g. a single bridge connection).
  virtual bool concurrent_safe() const { return true; }
  virtual std::string name() const = 0;
};

struct ToyModelParams {
  double tau = 1.0;  // logistic sharpness, 1/px
  double threshold = 0.5;
  double dice_eps = 1e-7;
};

// P(p) = sigmoid(tau * d_b(p)) * A(p), d_b the signed inset distance of the
// pixel center to the box boundary, A the objectness field.
SoftMask toy_predict(const Instance& inst, const BBox& b, const ToyModelParams& params = {});

// Soft DICE loss 1 - 2 sum(p g) / (sum p + sum g + eps).
double dice_loss(const SoftMask& p, const BinaryMask& g, double eps = 1e-7);

// Hard IoU between (p > threshold) and g.
double thresholded_iou(const SoftMask& p, const BinaryMask& g, double threshold = 0.5);

// DICE loss, hard IoU and the analytic DICE gradient. Inset-distance ties go
// to the first of (x1, x2, y1, y2).
ModelEval toy_loss_and_grad(const Instance& inst, const BBox& b,
                            const ToyModelParams& params = {});

class ToyModel final : public SegModel {
 public:
  explicit ToyModel(ToyModelParams params = {}) : params_(params) {}

  ModelEval eval(const Instance& inst, const BBox& b) override {
    return toy_loss_and_grad(inst, b, params_);
  }
  double iou(const Instance& inst, const BBox& b) override;
  std::string name() const override { return "toy"; }
  const ToyModelParams& params() const { return params_; }

 private:
  ToyModelParams params_;
};

// ---- gradient checking ----

// Central differences of f at b along each coordinate.
BoxGrad finite_difference_grad(const std::function<double(const BBox&)>& f, const BBox& b,
                               double step);

// max_i |a_i - f_i| / max(|a|_inf, |f|_inf); 0 when both vectors are zero.
double max_relative_error(const BoxGrad& analytic, const BoxGrad& numeric);

struct GradCheckReport {
  double dice = 0;
  double ciou = 0;
  double log_pdf_ciou = 0;

  double worst() const { return std::max({dice, ciou, log_pdf_ciou}); }
};

// Compares analytic and central-difference gradients of the model's DICE
// loss, CIoU against the tight box, and the realism log-density.
GradCheckReport grad_check(SegModel& model, const Instance& inst, const BBox& b, double step,
                           const GammaRealismModel& realism = {});

}  // namespace breps
