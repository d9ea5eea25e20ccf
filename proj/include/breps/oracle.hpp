#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "breps/geometry.hpp"
#include "breps/image.hpp"
#include "breps/segmodel.hpp"

namespace breps {

// Per-pixel IoU; kNoBox marks pixels no swept box has a corner at.
struct Heatmap {
  static constexpr double kNoBox = -1.0;

  Raster<double> values;

  int width() const { return values.width(); }
  int height() const { return values.height(); }
};

struct BoxRecord {
  BBox bbox;
  double iou = 0;
};

struct CenteredSweep {
  Heatmap heatmap;
  BoxRecord min;
  BoxRecord max;
  double tight_iou = 0;
  std::size_t evaluations = 0;
};

// Boxes sharing the tight box's center: (x1 - j, y1 - i, x2 + j, y2 + i) for
// integer j, i (multiples of stride) from the smallest box with sides >= 1 up
// to the largest that still overlaps the image, clipped to the image. Every
// box writes its IoU into its four corner pixels (first and last pixel
// column/row inside the box). Each pixel belongs to exactly one box per axis
// offset, so nothing is overwritten. Extremes break ties by sweep order.
CenteredSweep exhaustive_centered(SegModel& model, const Instance& inst, int stride = 1,
                                  int workers = 1);

struct FullSweep {
  BoxRecord min;
  BoxRecord max;
  std::size_t evaluations = 0;
};

inline constexpr std::uint64_t kDefaultFullSweepBudget = 40ull * 40 * 40 * 40;

// Number of boxes exhaustive_full visits for a given stride.
std::uint64_t full_sweep_count(int width, int height, int stride);

// Every integer-grid box (x1 < x2, y1 < y2) with coordinates in
// {0, s, 2s, ...} plus the image edge. Throws BudgetExceeded, carrying the
// smallest stride that fits, when the count exceeds `budget`.
FullSweep exhaustive_full(SegModel& model, const Instance& inst, int stride = 1,
                          std::uint64_t budget = kDefaultFullSweepBudget, int workers = 1);

struct HeatmapFiles {
  std::filesystem::path csv;
  std::filesystem::path pgm;
  std::filesystem::path png;  // empty when PNG output is off
};

// Writes <stem>.csv (17 significant digits), <stem>.pgm (IoU * 255, no-box
// pixels 0) and optionally <stem>.png (blue -> red, no-box pixels black).
HeatmapFiles render_heatmap(const Heatmap& h, const std::filesystem::path& stem,
                            bool write_png = true);

Heatmap read_heatmap_csv(const std::filesystem::path& path);

}  // namespace breps
