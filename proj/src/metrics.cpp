#include "breps/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "breps/error.hpp"
#include "breps/parallel.hpp"

namespace breps {

void RobustnessReport::recompute_means() {
  mean_tight = mean_min = mean_max = mean_delta = 0;
  if (rows.empty()) return;
  for (const auto& r : rows) {
    mean_tight += r.iou_tight;
    mean_min += r.iou_min;
    mean_max += r.iou_max;
    mean_delta += r.iou_delta;
  }
  const double n = static_cast<double>(rows.size());
  mean_tight /= n;
  mean_min /= n;
  mean_max /= n;
  mean_delta /= n;
}

RobustnessReport robustness_report(SegModel& model, std::span<const Instance> instances,
                                   const AttackConfig& cfg, int workers) {
  if (instances.empty()) throw InvalidParameter("robustness_report: no instances");
  cfg.validate();
  if (!model.concurrent_safe()) workers = 1;

  std::vector<std::optional<RobustnessRow>> rows(instances.size());
  parallel_for(instances.size(), workers, [&](std::size_t i) {
    const Instance& inst = instances[i];
    try {
      RobustnessRow row;
      row.image_id = inst.image_id;
      row.iou_tight = model.eval(inst, inst.tight).iou;
      AttackConfig c = cfg;
      c.mode = AttackMode::minimize;
      const AttackResult lo = breps_attack(model, inst, c);
      c.mode = AttackMode::maximize;
      const AttackResult hi = breps_attack(model, inst, c);
      row.iou_min = lo.final_iou;
      row.iou_max = hi.final_iou;
      row.iou_delta = row.iou_max - row.iou_min;
      row.log_pdf_min = lo.final_log_pdf;
      row.log_pdf_max = hi.final_log_pdf;
      rows[i] = std::move(row);
    } catch (const AttackAborted&) {
      rows[i].reset();
    }
  });

  RobustnessReport report;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i]) {
      report.rows.push_back(std::move(*rows[i]));
    } else {
      report.failed.push_back(instances[i].image_id);
    }
  }
  report.recompute_means();
  return report;
}

SpreadStats spread(std::span<const double> values) {
  SpreadStats s;
  s.n = values.size();
  if (values.empty()) return s;
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(s.n);
  if (s.n >= 2) {
    double ss = 0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(s.n));
  }
  return s;
}

UserSpreadRow user_spread(SegModel& model, const Instance& inst,
                          std::span<const UserAnnotation> annotations) {
  UserSpreadRow row;
  row.image_id = inst.image_id;
  std::vector<double> all, desktop, mobile;
  for (const auto& a : annotations) {
    if (a.image_id != inst.image_id) continue;
    UserIou u;
    u.user_id = a.user_id;
    u.device = a.device;
    u.bbox = clip_and_order(a.bbox, inst.width, inst.height);
    u.iou = model.iou(inst, u.bbox);
    all.push_back(u.iou);
    (a.device == Device::desktop ? desktop : mobile).push_back(u.iou);
    row.users.push_back(std::move(u));
  }
  row.all = spread(all);
  row.desktop = spread(desktop);
  row.mobile = spread(mobile);
  return row;
}

DatasetSpread dataset_spread(SegModel& model, std::span<const Instance> instances,
                             std::span<const UserAnnotation> annotations, int workers) {
  if (!model.concurrent_safe()) workers = 1;
  std::vector<UserSpreadRow> rows(instances.size());
  parallel_for(instances.size(), workers,
               [&](std::size_t i) { rows[i] = user_spread(model, instances[i], annotations); });

  DatasetSpread out;
  std::size_t n_mean = 0, n_std = 0;
  for (auto& r : rows) {
    if (r.all.n == 0) continue;
    out.mean_of_means += r.all.mean;
    ++n_mean;
    if (r.all.std) {
      out.mean_of_stds += *r.all.std;
      ++n_std;
    }
    out.rows.push_back(std::move(r));
  }
  if (n_mean) out.mean_of_means /= static_cast<double>(n_mean);
  if (n_std) out.mean_of_stds /= static_cast<double>(n_std);
  return out;
}

std::vector<double> average_ranks(std::span<const double> xs) {
  std::vector<std::size_t> order(xs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
  std::vector<double> ranks(xs.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && xs[order[j + 1]] == xs[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

namespace {

double pearson(std::span<const double> x, std::span<const double> y) {
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0 || syy == 0) throw UndefinedCorrelation("correlation undefined: zero variance");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

}  // namespace

Correlation correlations(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw InvalidInput("correlations: length mismatch");
  if (x.size() < 3) throw InsufficientData("correlations: need at least 3 pairs");
  Correlation c;
  c.pearson = pearson(x, y);
  const auto rx = average_ranks(x), ry = average_ranks(y);
  c.spearman = pearson(rx, ry);
  return c;
}

}  // namespace breps
