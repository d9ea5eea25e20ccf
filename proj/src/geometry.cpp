#include "breps/geometry.hpp"

#include <algorithm>
#include <numbers>
#include <ostream>
#include <utility>

#include "breps/error.hpp"

namespace breps {

namespace {

// d max(a, b) / da with ties split evenly.
double dmax_da(double a, double b) {
  if (a > b) return 1.0;
  if (a < b) return 0.0;
  return 0.5;
}

// d min(a, b) / da with ties split evenly.
double dmin_da(double a, double b) {
  if (a < b) return 1.0;
  if (a > b) return 0.0;
  return 0.5;
}

void require_valid(const BBox& b, const char* what) {
  if (!b.finite()) throw InvalidInput(std::string(what) + ": non-finite coordinate");
  if (!b.ordered()) throw InvalidInput(std::string(what) + ": box edges out of order");
}

void require_ground_truth(const BBox& g) {
  if (!g.finite() || !(g.width() > 0) || !(g.height() > 0)) {
    throw InvalidGroundTruth("ground-truth box is degenerate");
  }
}

constexpr double kAspectScale = 4.0 / (std::numbers::pi * std::numbers::pi);

}  // namespace

std::ostream& operator<<(std::ostream& os, const BBox& b) {
  return os << '(' << b.x1 << ", " << b.y1 << ", " << b.x2 << ", " << b.y2 << ')';
}

double iou(const BBox& a, const BBox& b) {
  require_valid(a, "iou");
  require_valid(b, "iou");
  const double iw = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const double ih = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  const double inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

CIoUBreakdown ciou_loss(const BBox& b, const BBox& g) {
  require_ground_truth(g);
  require_valid(b, "ciou_loss");

  CIoUBreakdown out;
  out.iou = iou(b, g);

  const double dx = b.cx() - g.cx();
  const double dy = b.cy() - g.cy();
  const double cw = std::max(b.x2, g.x2) - std::min(b.x1, g.x1);
  const double ch = std::max(b.y2, g.y2) - std::min(b.y1, g.y1);
  out.center_penalty = (dx * dx + dy * dy) / (cw * cw + ch * ch);

  const double diff = std::atan(g.width() / g.height()) - std::atan(b.width() / b.height());
  out.aspect_v = kAspectScale * diff * diff;

  const double denom = (1.0 - out.iou) + out.aspect_v;
  out.alpha = denom > 0 ? out.aspect_v / denom : 0.0;
  out.total = 1.0 - out.iou + out.center_penalty + out.alpha * out.aspect_v;
  return out;
}

BoxGrad ciou_grad(const BBox& b, const BBox& g, AlphaMode alpha_mode) {
  require_ground_truth(g);
  require_valid(b, "ciou_grad");

  const double w = b.width(), h = b.height();

  // Intersection-over-union.
  const double iw_raw = std::min(b.x2, g.x2) - std::max(b.x1, g.x1);
  const double ih_raw = std::min(b.y2, g.y2) - std::max(b.y1, g.y1);
  const double iw = std::max(0.0, iw_raw);
  const double ih = std::max(0.0, ih_raw);
  const double inter = iw * ih;
  const double uni = b.area() + g.area() - inter;
  const double iou_v = inter / uni;

  const double diw_dx1 = iw_raw > 0 ? -dmax_da(b.x1, g.x1) : 0.0;
  const double diw_dx2 = iw_raw > 0 ? dmin_da(b.x2, g.x2) : 0.0;
  const double dih_dy1 = ih_raw > 0 ? -dmax_da(b.y1, g.y1) : 0.0;
  const double dih_dy2 = ih_raw > 0 ? dmin_da(b.y2, g.y2) : 0.0;
  const BoxGrad d_inter{diw_dx1 * ih, dih_dy1 * iw, diw_dx2 * ih, dih_dy2 * iw};
  const BoxGrad d_area{-h, -w, h, w};

  BoxGrad d_iou{};
  for (int k = 0; k < 4; ++k) {
    d_iou[k] = (d_inter[k] * uni - inter * (d_area[k] - d_inter[k])) / (uni * uni);
  }

  // Center distance over enclosing diagonal.
  const double dx = b.cx() - g.cx();
  const double dy = b.cy() - g.cy();
  const double rho2 = dx * dx + dy * dy;
  const double cw = std::max(b.x2, g.x2) - std::min(b.x1, g.x1);
  const double ch = std::max(b.y2, g.y2) - std::min(b.y1, g.y1);
  const double c2 = cw * cw + ch * ch;
  const BoxGrad d_rho2{dx, dy, dx, dy};
  const BoxGrad d_c2{-2 * cw * dmin_da(b.x1, g.x1), -2 * ch * dmin_da(b.y1, g.y1),
                     2 * cw * dmax_da(b.x2, g.x2), 2 * ch * dmax_da(b.y2, g.y2)};

  // Aspect consistency.
  const double diff = std::atan(g.width() / g.height()) - std::atan(w / h);
  const double v = kAspectScale * diff * diff;
  const double r2 = w * w + h * h;
  const double dv_dw = -2 * kAspectScale * diff * h / r2;
  const double dv_dh = 2 * kAspectScale * diff * w / r2;
  const BoxGrad d_v{-dv_dw, -dv_dh, dv_dw, dv_dh};

  const double one_minus_iou = 1.0 - iou_v;
  const double denom = one_minus_iou + v;
  const double alpha = denom > 0 ? v / denom : 0.0;

  BoxGrad out{};
  for (int k = 0; k < 4; ++k) {
    double d = -d_iou[k] + d_rho2[k] / c2 - rho2 * d_c2[k] / (c2 * c2) + alpha * d_v[k];
    if (alpha_mode == AlphaMode::differentiated && denom > 0) {
      const double d_alpha = (d_v[k] * one_minus_iou + v * d_iou[k]) / (denom * denom);
      d += v * d_alpha;
    }
    out[k] = d;
  }
  return out;
}

BBox tight_bbox(const BinaryMask& mask) {
  int min_c = mask.width(), min_r = mask.height(), max_c = -1, max_r = -1;
  for (int r = 0; r < mask.height(); ++r) {
    for (int c = 0; c < mask.width(); ++c) {
      if (!mask.at(c, r)) continue;
      min_c = std::min(min_c, c);
      max_c = std::max(max_c, c);
      min_r = std::min(min_r, r);
      max_r = std::max(max_r, r);
    }
  }
  if (max_c < 0) throw EmptyMask("mask has no foreground pixels");
  return {double(min_c), double(min_r), double(max_c + 1), double(max_r + 1)};
}

namespace {

void enforce_min_side(double& lo, double& hi, double limit) {
  // Tolerance keeps the operation idempotent under rounding of mid +- 0.5.
  if (hi - lo >= kMinBoxSide - 1e-9) return;
  const double mid = 0.5 * (lo + hi);
  lo = mid - 0.5 * kMinBoxSide;
  hi = mid + 0.5 * kMinBoxSide;
  if (lo < 0) {
    lo = 0;
    hi = kMinBoxSide;
  } else if (hi > limit) {
    hi = limit;
    lo = limit - kMinBoxSide;
  }
}

}  // namespace

BBox clip_and_order(const BBox& b, double width, double height) {
  if (!b.finite()) throw InvalidInput("clip_and_order: non-finite coordinate");
  if (!(width >= kMinBoxSide) || !(height >= kMinBoxSide)) {
    throw InvalidParameter("clip_and_order: image must be at least 1x1");
  }
  BBox out{std::clamp(b.x1, 0.0, width), std::clamp(b.y1, 0.0, height),
           std::clamp(b.x2, 0.0, width), std::clamp(b.y2, 0.0, height)};
  if (out.x1 > out.x2) std::swap(out.x1, out.x2);
  if (out.y1 > out.y2) std::swap(out.y1, out.y2);
  enforce_min_side(out.x1, out.x2, width);
  enforce_min_side(out.y1, out.y2, height);
  return out;
}

}  // namespace breps
