#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "breps/attack.hpp"
#include "breps/data.hpp"
#include "breps/segmodel.hpp"

namespace breps {

struct RobustnessRow {
  std::string image_id;
  double iou_tight = 0;
  double iou_min = 0;
  double iou_max = 0;
  double iou_delta = 0;  // iou_max - iou_min
  double log_pdf_min = 0;
  double log_pdf_max = 0;
};

struct RobustnessReport {
  std::vector<RobustnessRow> rows;
  std::vector<std::string> failed;  // image ids whose attacks aborted

  // Unweighted means over successful rows.
  double mean_tight = 0;
  double mean_min = 0;
  double mean_max = 0;
  double mean_delta = 0;

  void recompute_means();
};

// IoU at the tight box plus min and max attacks per instance. The mode in
// `cfg` is ignored. Failed instances are listed and left out of the means.
RobustnessReport robustness_report(SegModel& model, std::span<const Instance> instances,
                                   const AttackConfig& cfg, int workers = 1);

struct SpreadStats {
  std::size_t n = 0;
  double mean = 0;
  std::optional<double> std;  // population std; absent for fewer than 2 values
};

SpreadStats spread(std::span<const double> values);

struct UserIou {
  std::string user_id;
  Device device = Device::desktop;
  BBox bbox;  // after clip_and_order
  double iou = 0;
};

struct UserSpreadRow {
  std::string image_id;
  std::vector<UserIou> users;
  SpreadStats all;
  SpreadStats desktop;
  SpreadStats mobile;
};

// Model IoU at every user box of one instance (boxes are clipped and ordered
// first). Annotations for other images are ignored.
UserSpreadRow user_spread(SegModel& model, const Instance& inst,
                          std::span<const UserAnnotation> annotations);

struct DatasetSpread {
  std::vector<UserSpreadRow> rows;
  double mean_of_means = 0;
  double mean_of_stds = 0;  // over rows that have a std
};

DatasetSpread dataset_spread(SegModel& model, std::span<const Instance> instances,
                             std::span<const UserAnnotation> annotations, int workers = 1);

struct Correlation {
  double spearman = 0;
  double pearson = 0;
};

// Pearson r and Spearman rho (Pearson on average ranks). Needs equal lengths
// >= 3 and non-zero variance in both inputs.
Correlation correlations(std::span<const double> x, std::span<const double> y);

// Average ranks (1-based), ties share their mean rank.
std::vector<double> average_ranks(std::span<const double> xs);

}  // namespace breps
