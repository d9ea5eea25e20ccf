#pragma once

#include <array>
#include <cmath>
#include <iosfwd>

#include "breps/image.hpp"

namespace breps {

// Continuous axis-aligned box in pixel coordinates (origin top-left, y down).
// A pixel at integer (col, row) covers [col, col+1) x [row, row+1).
struct BBox {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  double cx() const { return 0.5 * (x1 + x2); }
  double cy() const { return 0.5 * (y1 + y2); }
  double diagonal() const { return std::hypot(width(), height()); }

  bool finite() const {
    return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) &&
           std::isfinite(y2);
  }
  bool ordered() const { return x1 < x2 && y1 < y2; }

  std::array<double, 4> as_array() const { return {x1, y1, x2, y2}; }
  static BBox from_array(const std::array<double, 4>& a) {
    return {a[0], a[1], a[2], a[3]};
  }

  friend bool operator==(const BBox&, const BBox&) = default;
};

std::ostream& operator<<(std::ostream& os, const BBox& b);

// Gradient with respect to (x1, y1, x2, y2).
using BoxGrad = std::array<double, 4>;

struct CIoUBreakdown {
  double iou = 0;
  double center_penalty = 0;  // rho^2 / c^2
  double aspect_v = 0;
  double alpha = 0;
  double total = 0;  // 1 - iou + center_penalty + alpha * aspect_v
};

// How the aspect trade-off weight alpha enters the gradient.
enum class AlphaMode {
  differentiated,  // exact gradient of `total`
  detached,        // alpha held constant, as in common training code
};

// Analytic continuous-area IoU. Boxes touching along an edge give 0.
double iou(const BBox& a, const BBox& b);

CIoUBreakdown ciou_loss(const BBox& b, const BBox& b_star);

// Gradient of ciou_loss(b, b_star).total with b_star fixed. Where two
// coordinates tie inside a min/max the two one-sided derivatives are
// averaged; an overlap extent max(0, t) has derivative 0 at t = 0.
BoxGrad ciou_grad(const BBox& b, const BBox& b_star,
                  AlphaMode alpha_mode = AlphaMode::differentiated);

// Minimal box enclosing the foreground pixels (half-open convention).
BBox tight_bbox(const BinaryMask& mask);

// Smallest accepted side after clipping.
inline constexpr double kMinBoxSide = 1.0;

// Clips to [0,width]x[0,height], swaps inverted edges, then widens any side
// shorter than kMinBoxSide symmetrically about its midpoint (shifted back
// inside the image at the borders).
BBox clip_and_order(const BBox& b, double width, double height);

}  // namespace breps
