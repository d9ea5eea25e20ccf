#include "breps/segmodel.hpp"

#include <algorithm>
#include <cmath>

#include "breps/error.hpp"

namespace breps {

std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

namespace {

class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}
  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }
  double unit() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

 private:
  std::uint64_t state_;
};

// Zero-padded 5x5 box filter, separable.
SoftMask box_blur5(const SoftMask& in) {
  const int w = in.width(), h = in.height();
  SoftMask tmp(w, h), out(w, h);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      double s = 0;
      for (int k = std::max(0, c - 2); k <= std::min(w - 1, c + 2); ++k) s += in.at(k, r);
      tmp.at(c, r) = s / 5.0;
    }
  }
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      double s = 0;
      for (int k = std::max(0, r - 2); k <= std::min(h - 1, r + 2); ++k) s += tmp.at(c, k);
      out.at(c, r) = s / 5.0;
    }
  }
  return out;
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Inset distance of the pixel center to the box boundary and which edge
// attains it (0 = x1, 1 = x2, 2 = y1, 3 = y2; first wins on ties).
struct Inset {
  double d;
  int edge;
};

Inset inset(const BBox& b, double px, double py) {
  const double t[4] = {px - b.x1, b.x2 - px, py - b.y1, b.y2 - py};
  Inset out{t[0], 0};
  for (int i = 1; i < 4; ++i) {
    if (t[i] < out.d) out = {t[i], i};
  }
  return out;
}

void require_box(const BBox& b) {
  if (!b.finite()) throw InvalidInput("toy model: non-finite box");
}

}  // namespace

BinaryMask distractor_pattern(std::string_view image_id, int width, int height) {
  BinaryMask out(width, height, 0);
  SplitMix64 rng(fnv1a64(image_id));
  const int blobs = 2 + static_cast<int>(rng.next() % 4);
  const double max_extra = std::max(1.0, std::min(width, height) / 8.0);
  for (int i = 0; i < blobs; ++i) {
    const double cx = rng.unit() * width;
    const double cy = rng.unit() * height;
    const double rad = 1.5 + rng.unit() * max_extra;
    for (int r = 0; r < height; ++r) {
      for (int c = 0; c < width; ++c) {
        const double dx = c + 0.5 - cx, dy = r + 0.5 - cy;
        if (dx * dx + dy * dy <= rad * rad) out.at(c, r) = 1;
      }
    }
  }
  return out;
}

SoftMask make_objectness(std::string_view image_id, const BinaryMask& mask) {
  const int w = mask.width(), h = mask.height();
  SoftMask m(w, h);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) m.at(c, r) = mask.at(c, r) ? 1.0 : 0.0;
  const SoftMask blurred = box_blur5(box_blur5(m));
  const BinaryMask distractor = distractor_pattern(image_id, w, h);
  SoftMask out(w, h);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      out.at(c, r) = std::clamp(0.9 * blurred.at(c, r) + 0.1 * distractor.at(c, r), 0.0, 1.0);
    }
  }
  return out;
}

Instance make_instance(std::string image_id, BinaryMask mask) {
  Instance inst;
  inst.width = mask.width();
  inst.height = mask.height();
  inst.tight = tight_bbox(mask);
  inst.objectness = make_objectness(image_id, mask);
  inst.gt_mask = std::move(mask);
  inst.image_id = std::move(image_id);
  return inst;
}

SoftMask toy_predict(const Instance& inst, const BBox& b, const ToyModelParams& params) {
  require_box(b);
  SoftMask out(inst.width, inst.height);
  for (int r = 0; r < inst.height; ++r) {
    for (int c = 0; c < inst.width; ++c) {
      const Inset in = inset(b, c + 0.5, r + 0.5);
      out.at(c, r) = sigmoid(params.tau * in.d) * inst.objectness.at(c, r);
    }
  }
  return out;
}

double dice_loss(const SoftMask& p, const BinaryMask& g, double eps) {
  if (p.width() != g.width() || p.height() != g.height()) {
    throw InvalidInput("dice_loss: prediction and mask dimensions differ");
  }
  double inter = 0, sum_p = 0, sum_g = 0;
  const auto pv = p.values();
  const auto gv = g.values();
  for (std::size_t i = 0; i < pv.size(); ++i) {
    inter += pv[i] * gv[i];
    sum_p += pv[i];
    sum_g += gv[i];
  }
  return 1.0 - 2.0 * inter / (sum_p + sum_g + eps);
}

double thresholded_iou(const SoftMask& p, const BinaryMask& g, double threshold) {
  if (p.width() != g.width() || p.height() != g.height()) {
    throw InvalidInput("thresholded_iou: prediction and mask dimensions differ");
  }
  std::size_t inter = 0, uni = 0;
  const auto pv = p.values();
  const auto gv = g.values();
  for (std::size_t i = 0; i < pv.size(); ++i) {
    const bool pred = pv[i] > threshold;
    inter += pred && gv[i];
    uni += pred || gv[i];
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

ModelEval toy_loss_and_grad(const Instance& inst, const BBox& b, const ToyModelParams& params) {
  require_box(b);
  const int w = inst.width, h = inst.height;
  const std::size_t n = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);

  // First pass: probabilities and the pieces of the chain rule per pixel.
  std::vector<double> prob(n), dprob_dd(n);
  std::vector<std::uint8_t> edge(n);
  double inter = 0, sum_p = 0, sum_g = 0;
  std::size_t hard_inter = 0, hard_union = 0;
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const std::size_t i = static_cast<std::size_t>(r) * w + c;
      const Inset in = inset(b, c + 0.5, r + 0.5);
      const double s = sigmoid(params.tau * in.d);
      const double a = inst.objectness.at(c, r);
      const double p = s * a;
      const bool g = inst.gt_mask.at(c, r) != 0;
      prob[i] = p;
      dprob_dd[i] = params.tau * s * (1.0 - s) * a;
      edge[i] = static_cast<std::uint8_t>(in.edge);
      inter += g ? p : 0.0;
      sum_p += p;
      sum_g += g;
      const bool pred = p > params.threshold;
      hard_inter += pred && g;
      hard_union += pred || g;
    }
  }

  ModelEval out;
  const double denom = sum_p + sum_g + params.dice_eps;
  out.dice_loss = 1.0 - 2.0 * inter / denom;
  out.iou = hard_union == 0 ? 0.0 : static_cast<double>(hard_inter) / hard_union;

  // d inset / d coord: x1 -> -1, x2 -> +1, y1 -> -1, y2 -> +1, mapped onto
  // (x1, y1, x2, y2) gradient slots.
  constexpr int slot[4] = {0, 2, 1, 3};
  constexpr double sign[4] = {-1.0, 1.0, -1.0, 1.0};
  const double scale = -2.0 / (denom * denom);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const std::size_t i = static_cast<std::size_t>(r) * w + c;
      if (dprob_dd[i] == 0) continue;
      const double g = inst.gt_mask.at(c, r) ? 1.0 : 0.0;
      const double dl_dp = scale * (g * denom - inter);
      out.grad[slot[edge[i]]] += dl_dp * dprob_dd[i] * sign[edge[i]];
    }
  }
  return out;
}

double ToyModel::iou(const Instance& inst, const BBox& b) {
  require_box(b);
  // p = sigmoid(.) * A < A, so pixels with A <= threshold never fire.
  std::size_t pred_count = 0, inter = 0, gt_count = 0;
  for (int r = 0; r < inst.height; ++r) {
    for (int c = 0; c < inst.width; ++c) {
      const bool g = inst.gt_mask.at(c, r) != 0;
      gt_count += g;
      const double a = inst.objectness.at(c, r);
      if (a <= params_.threshold) continue;
      const double p = sigmoid(params_.tau * inset(b, c + 0.5, r + 0.5).d) * a;
      if (p > params_.threshold) {
        ++pred_count;
        inter += g;
      }
    }
  }
  const std::size_t uni = pred_count + gt_count - inter;
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

BoxGrad finite_difference_grad(const std::function<double(const BBox&)>& f, const BBox& b,
                               double step) {
  if (!(step > 0)) throw InvalidParameter("finite_difference_grad: step must be positive");
  BoxGrad g{};
  const auto base = b.as_array();
  for (int k = 0; k < 4; ++k) {
    auto plus = base, minus = base;
    plus[k] += step;
    minus[k] -= step;
    g[k] = (f(BBox::from_array(plus)) - f(BBox::from_array(minus))) / (2 * step);
  }
  return g;
}

double max_relative_error(const BoxGrad& analytic, const BoxGrad& numeric) {
  double scale = 0, worst = 0;
  for (int k = 0; k < 4; ++k) {
    scale = std::max({scale, std::abs(analytic[k]), std::abs(numeric[k])});
    worst = std::max(worst, std::abs(analytic[k] - numeric[k]));
  }
  return scale == 0 ? 0.0 : worst / scale;
}

GradCheckReport grad_check(SegModel& model, const Instance& inst, const BBox& b, double step,
                           const GammaRealismModel& realism) {
  if (!(step > 0)) throw InvalidParameter("grad_check: step must be positive");
  GradCheckReport report;

  const BoxGrad dice_fd = finite_difference_grad(
      [&](const BBox& x) { return model.eval(inst, x).dice_loss; }, b, step);
  report.dice = max_relative_error(model.eval(inst, b).grad, dice_fd);

  const BoxGrad ciou_fd = finite_difference_grad(
      [&](const BBox& x) { return ciou_loss(x, inst.tight).total; }, b, step);
  report.ciou = max_relative_error(ciou_grad(b, inst.tight), ciou_fd);

  const BoxGrad lp_fd = finite_difference_grad(
      [&](const BBox& x) { return box_log_pdf(realism, x, inst.tight); }, b, step);
  report.log_pdf_ciou = max_relative_error(log_pdf_grad_bbox(realism, b, inst.tight), lp_fd);
  return report;
}

}  // namespace breps
