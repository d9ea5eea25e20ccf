#include "breps/attack.hpp"

#include <algorithm>
#include <numbers>

#include "breps/parallel.hpp"

namespace breps {

std::string to_string(AttackMode mode) {
  return mode == AttackMode::minimize ? "min" : "max";
}

AttackMode parse_attack_mode(const std::string& s) {
  if (s == "min" || s == "minimize") return AttackMode::minimize;
  if (s == "max" || s == "maximize") return AttackMode::maximize;
  throw InvalidParameter("unknown attack mode '" + s + "' (expected min or max)");
}

void AttackConfig::validate() const {
  if (steps < 1) throw InvalidParameter("attack: steps must be >= 1");
  if (!(lambda >= 0) || !std::isfinite(lambda)) throw InvalidParameter("attack: lambda must be >= 0");
  if (!(base_lr > 0) || !std::isfinite(base_lr)) throw InvalidParameter("attack: lr must be > 0");
  realism.validate();
}

double scaled_lr(double base_lr, double width, double height) {
  if (!(width >= 1) || !(height >= 1)) throw InvalidParameter("scaled_lr: image must be >= 1x1");
  return base_lr * std::sqrt(height * height + width * width) / (1024.0 * std::numbers::sqrt2);
}

const TrajectoryPoint& AttackResult::best_seen() const {
  const auto better = [this](const TrajectoryPoint& a, const TrajectoryPoint& b) {
    return mode == AttackMode::minimize ? a.iou < b.iou : a.iou > b.iou;
  };
  return *std::min_element(trajectory.begin(), trajectory.end(), better);
}

int AttackResult::settled_at(double tolerance) const {
  int settled = -1;
  for (std::size_t i = 1; i < grad_norms.size(); ++i) {
    const double prev = grad_norms[i - 1];
    const double change = prev > 0 ? std::abs(grad_norms[i] - prev) / prev : 0.0;
    if (change < tolerance) {
      if (settled < 0) settled = static_cast<int>(i);
    } else {
      settled = -1;
    }
  }
  return settled;
}

AttackResult breps_attack(SegModel& model, const Instance& inst, const AttackConfig& cfg) {
  cfg.validate();
  const double w = inst.width, h = inst.height;
  const double lr = scaled_lr(cfg.base_lr, w, h);
  const double dice_sign = cfg.mode == AttackMode::minimize ? -1.0 : 1.0;

  AttackResult result;
  result.mode = cfg.mode;
  result.config = cfg;
  result.trajectory.reserve(static_cast<std::size_t>(cfg.steps) + 1);
  result.grad_norms.reserve(static_cast<std::size_t>(cfg.steps));

  Adam<4> adam(cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
  auto params = inst.tight.as_array();

  for (int t = 0;; ++t) {
    const BBox box = BBox::from_array(params);
    ModelEval ev;
    try {
      ev = model.eval(inst, box);
    } catch (const std::exception& e) {
      throw AttackAborted("attack on '" + inst.image_id + "' aborted at step " +
                              std::to_string(t) + ": " + e.what(),
                          std::move(result.trajectory));
    }
    result.trajectory.push_back({box, ev.dice_loss, box_log_pdf(cfg.realism, box, inst.tight), ev.iou});
    if (t == cfg.steps) break;

    const BoxGrad reg = log_pdf_grad_bbox(cfg.realism, box, inst.tight);
    std::array<double, 4> grad{};
    double norm2 = 0;
    for (int k = 0; k < 4; ++k) {
      grad[k] = dice_sign * ev.grad[k] - cfg.lambda * reg[k];
      norm2 += grad[k] * grad[k];
    }
    result.grad_norms.push_back(std::sqrt(norm2));
    adam.step(params, grad, lr);
    params = clip_and_order(BBox::from_array(params), w, h).as_array();
  }

  const TrajectoryPoint& last = result.trajectory.back();
  result.final_bbox = last.bbox;
  result.final_iou = last.iou;
  result.final_log_pdf = last.log_pdf;
  return result;
}

std::vector<LambdaSweepRow> sweep_lambda(SegModel& model, std::span<const Instance> instances,
                                         std::span<const double> lambdas,
                                         const AttackConfig& base, int workers) {
  if (lambdas.empty()) throw InvalidParameter("sweep_lambda: no lambda values");
  if (instances.empty()) throw InvalidParameter("sweep_lambda: no instances");
  if (!model.concurrent_safe()) workers = 1;

  std::vector<LambdaSweepRow> rows;
  rows.reserve(lambdas.size());
  for (double lambda : lambdas) {
    std::vector<double> deltas(instances.size()), log_pdfs(instances.size());
    parallel_for(instances.size(), workers, [&](std::size_t i) {
      AttackConfig cfg = base;
      cfg.lambda = lambda;
      cfg.mode = AttackMode::minimize;
      const AttackResult lo = breps_attack(model, instances[i], cfg);
      cfg.mode = AttackMode::maximize;
      const AttackResult hi = breps_attack(model, instances[i], cfg);
      deltas[i] = hi.final_iou - lo.final_iou;
      log_pdfs[i] = 0.5 * (lo.final_log_pdf + hi.final_log_pdf);
    });
    LambdaSweepRow row;
    row.lambda = lambda;
    for (std::size_t i = 0; i < instances.size(); ++i) {
      row.iou_delta += deltas[i];
      row.log_pdf += log_pdfs[i];
    }
    row.iou_delta /= static_cast<double>(instances.size());
    row.log_pdf /= static_cast<double>(instances.size());
    rows.push_back(row);
  }
  return rows;
}

}  // namespace breps
