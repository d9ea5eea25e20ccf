#include "breps/oracle.hpp"

#include <png.h>

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>
#include <vector>

#include "breps/error.hpp"
#include "breps/parallel.hpp"

namespace breps {

namespace {

// Offsets j (multiples of stride, always including 0) for one axis of the
// centered sweep.
std::vector<int> centered_offsets(int lo, int hi, int extent, int stride) {
  const int side = hi - lo;
  const int j_min = -((side - 1) / 2);  // smallest box has side 1 or 2
  const int j_max = std::max(lo, extent - hi);
  std::vector<int> out;
  const int first = -((-j_min) / stride) * stride;
  for (int j = first; j <= j_max; j += stride) out.push_back(j);
  return out;
}

std::vector<double> grid_coords(int extent, int stride) {
  std::vector<double> out;
  for (int v = 0; v < extent; v += stride) out.push_back(v);
  out.push_back(extent);
  return out;
}

std::uint64_t pairs(std::uint64_t n) { return n * (n - 1) / 2; }

void require_stride(int stride) {
  if (stride < 1) throw InvalidParameter("stride must be >= 1");
}

}  // namespace

CenteredSweep exhaustive_centered(SegModel& model, const Instance& inst, int stride,
                                  int workers) {
  require_stride(stride);
  if (!model.concurrent_safe()) workers = 1;
  const int x1 = static_cast<int>(inst.tight.x1), x2 = static_cast<int>(inst.tight.x2);
  const int y1 = static_cast<int>(inst.tight.y1), y2 = static_cast<int>(inst.tight.y2);
  const auto jx = centered_offsets(x1, x2, inst.width, stride);
  const auto jy = centered_offsets(y1, y2, inst.height, stride);

  const std::size_t n = jx.size() * jy.size();
  std::vector<BBox> boxes(n);
  std::vector<double> ious(n);
  for (std::size_t iy = 0; iy < jy.size(); ++iy) {
    for (std::size_t ix = 0; ix < jx.size(); ++ix) {
      const int j = jx[ix], i = jy[iy];
      boxes[iy * jx.size() + ix] = clip_and_order(
          BBox{double(x1 - j), double(y1 - i), double(x2 + j), double(y2 + i)}, inst.width,
          inst.height);
    }
  }
  parallel_for(n, workers, [&](std::size_t k) { ious[k] = model.iou(inst, boxes[k]); });

  CenteredSweep out;
  out.evaluations = n;
  out.heatmap.values = Raster<double>(inst.width, inst.height, Heatmap::kNoBox);
  out.min = {boxes[0], ious[0]};
  out.max = out.min;
  for (std::size_t iy = 0; iy < jy.size(); ++iy) {
    for (std::size_t ix = 0; ix < jx.size(); ++ix) {
      const std::size_t k = iy * jx.size() + ix;
      const int j = jx[ix], i = jy[iy];
      const int cols[2] = {x1 - j, x2 + j - 1};
      const int rows[2] = {y1 - i, y2 + i - 1};
      for (int r : rows) {
        if (r < 0 || r >= inst.height) continue;
        for (int c : cols) {
          if (c < 0 || c >= inst.width) continue;
          out.heatmap.values.at(c, r) = ious[k];
        }
      }
      if (j == 0 && i == 0) out.tight_iou = ious[k];
      if (ious[k] < out.min.iou) out.min = {boxes[k], ious[k]};
      if (ious[k] > out.max.iou) out.max = {boxes[k], ious[k]};
    }
  }
  return out;
}

std::uint64_t full_sweep_count(int width, int height, int stride) {
  require_stride(stride);
  return pairs(grid_coords(width, stride).size()) * pairs(grid_coords(height, stride).size());
}

FullSweep exhaustive_full(SegModel& model, const Instance& inst, int stride,
                          std::uint64_t budget, int workers) {
  require_stride(stride);
  if (!model.concurrent_safe()) workers = 1;
  const std::uint64_t count = full_sweep_count(inst.width, inst.height, stride);
  if (count > budget) {
    int suggestion = stride + 1;
    while (full_sweep_count(inst.width, inst.height, suggestion) > budget) ++suggestion;
    throw BudgetExceeded("exhaustive_full: " + std::to_string(count) +
                             " boxes exceed the budget of " + std::to_string(budget) +
                             "; use --stride " + std::to_string(suggestion) + " or more",
                         suggestion);
  }

  const auto xs = grid_coords(inst.width, stride);
  const auto ys = grid_coords(inst.height, stride);
  std::vector<std::pair<double, double>> x_spans, y_spans;
  for (std::size_t a = 0; a < xs.size(); ++a)
    for (std::size_t b = a + 1; b < xs.size(); ++b) x_spans.emplace_back(xs[a], xs[b]);
  for (std::size_t a = 0; a < ys.size(); ++a)
    for (std::size_t b = a + 1; b < ys.size(); ++b) y_spans.emplace_back(ys[a], ys[b]);

  // One chunk per x span; each keeps its first-seen extremes.
  std::vector<FullSweep> chunks(x_spans.size());
  parallel_for(x_spans.size(), workers, [&](std::size_t cx) {
    FullSweep& local = chunks[cx];
    bool first = true;
    for (const auto& [ya, yb] : y_spans) {
      const BBox box{x_spans[cx].first, ya, x_spans[cx].second, yb};
      const double v = model.iou(inst, box);
      if (first || v < local.min.iou) local.min = {box, v};
      if (first || v > local.max.iou) local.max = {box, v};
      first = false;
    }
    local.evaluations = y_spans.size();
  });

  FullSweep out = chunks.front();
  out.evaluations = 0;
  for (const auto& c : chunks) {
    if (c.min.iou < out.min.iou) out.min = c.min;
    if (c.max.iou > out.max.iou) out.max = c.max;
    out.evaluations += c.evaluations;
  }
  return out;
}

namespace {

void write_png(const Heatmap& h, const std::filesystem::path& path) {
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!fp) throw IoError("cannot open " + path.string() + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("failed writing " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, h.width(), h.height(), 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_byte> row(static_cast<std::size_t>(h.width()) * 3);
  for (int r = 0; r < h.height(); ++r) {
    for (int c = 0; c < h.width(); ++c) {
      const double v = h.values.at(c, r);
      png_byte* px = &row[static_cast<std::size_t>(c) * 3];
      if (v < 0) {
        px[0] = px[1] = px[2] = 0;
      } else {
        px[0] = static_cast<png_byte>(std::lround(255 * v));
        px[1] = 0;
        px[2] = static_cast<png_byte>(std::lround(255 * (1 - v)));
      }
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

HeatmapFiles render_heatmap(const Heatmap& h, const std::filesystem::path& stem,
                            bool write_png_file) {
  HeatmapFiles files;
  files.csv = stem;
  files.csv += ".csv";
  files.pgm = stem;
  files.pgm += ".pgm";

  {
    std::ofstream csv(files.csv);
    if (!csv) throw IoError("cannot open " + files.csv.string() + " for writing");
    char buf[32];
    for (int r = 0; r < h.height(); ++r) {
      for (int c = 0; c < h.width(); ++c) {
        if (c) csv << ',';
        std::snprintf(buf, sizeof buf, "%.17g", h.values.at(c, r));
        csv << buf;
      }
      csv << '\n';
    }
    if (!csv) throw IoError("failed writing " + files.csv.string());
  }
  {
    std::ofstream pgm(files.pgm, std::ios::binary);
    if (!pgm) throw IoError("cannot open " + files.pgm.string() + " for writing");
    pgm << "P5\n" << h.width() << ' ' << h.height() << "\n255\n";
    for (double v : h.values.values()) {
      const auto byte = static_cast<unsigned char>(v < 0 ? 0 : std::lround(255 * std::min(v, 1.0)));
      pgm.put(static_cast<char>(byte));
    }
    if (!pgm) throw IoError("failed writing " + files.pgm.string());
  }
  if (write_png_file) {
    files.png = stem;
    files.png += ".png";
    write_png(h, files.png);
  }
  return files;
}

Heatmap read_heatmap_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      double v = 0;
      const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (ec != std::errc{} || ptr != cell.data() + cell.size()) {
        throw ParseError("heatmap csv: bad number '" + cell + "'", line_no);
      }
      row.push_back(v);
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw ParseError("heatmap csv: ragged row", line_no);
    }
    rows.push_back(std::move(row));
  }
  Heatmap h;
  const int height = static_cast<int>(rows.size());
  const int width = rows.empty() ? 0 : static_cast<int>(rows.front().size());
  h.values = Raster<double>(width, height);
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c) h.values.at(c, r) = rows[r][c];
  return h;
}

}  // namespace breps
