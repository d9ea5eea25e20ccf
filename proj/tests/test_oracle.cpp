#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "breps/data.hpp"
#include "breps/error.hpp"
#include "breps/oracle.hpp"
#include "test_util.hpp"

using namespace breps;
using breps::testing::scratch_dir;
using breps::testing::square_instance;

namespace {

// Rectangle mask at an arbitrary spot, so the tight box can have odd or even
// sides and sit off-center.
Instance rect_instance(const std::string& id, int w, int h, BBox r) {
  BinaryMask m(w, h, 0);
  for (int y = static_cast<int>(r.y1); y < static_cast<int>(r.y2); ++y)
    for (int x = static_cast<int>(r.x1); x < static_cast<int>(r.x2); ++x) m.at(x, y) = 1;
  return make_instance(id, std::move(m));
}

// Number of integer offsets per axis: from the smallest centered box with a
// side of at least 1 up to the first box that reaches both image borders.
std::size_t axis_offsets(int lo, int hi, int extent) {
  const int side = hi - lo;
  int first = 0;
  while (side + 2 * (first - 1) >= 1) --first;
  const int last = std::max(lo, extent - hi);
  return static_cast<std::size_t>(last - first + 1);
}

}  // namespace

TEST(Centered, TightCornersCarryTightIou) {
  ToyModel model;
  const Instance inst = rect_instance("r", 48, 40, {10, 12, 27, 30});
  const auto s = exhaustive_centered(model, inst);
  const double tight = model.iou(inst, inst.tight);
  EXPECT_EQ(s.tight_iou, tight);
  EXPECT_EQ(s.heatmap.values.at(10, 12), tight);
  EXPECT_EQ(s.heatmap.values.at(26, 12), tight);
  EXPECT_EQ(s.heatmap.values.at(10, 29), tight);
  EXPECT_EQ(s.heatmap.values.at(26, 29), tight);
}

TEST(Centered, EvaluationCountMatchesGrid) {
  ToyModel model;
  for (const BBox r : {BBox{10, 12, 27, 30}, BBox{20, 20, 44, 44}, BBox{0, 3, 5, 60}}) {
    const Instance inst = rect_instance("r", 64, 64, r);
    const auto s = exhaustive_centered(model, inst);
    EXPECT_EQ(s.evaluations, axis_offsets(int(r.x1), int(r.x2), 64) *
                                 axis_offsets(int(r.y1), int(r.y2), 64))
        << r;
  }
  // A centered 16 x 16 object in a 64 x 64 image: offsets -7..24 per axis.
  const auto s = exhaustive_centered(model, rect_instance("c", 64, 64, {24, 24, 40, 40}));
  EXPECT_EQ(s.evaluations, 32u * 32u);
}

TEST(Centered, ExtremesBracketTightAndMatchHeatmap) {
  ToyModel model;
  for (const auto& inst : make_toy_corpus(6, 48, 9)) {
    const auto s = exhaustive_centered(model, inst);
    EXPECT_LE(s.min.iou, s.tight_iou);
    EXPECT_GE(s.max.iou, s.tight_iou);
    double lo = 2, hi = -2;
    for (double v : s.heatmap.values.values()) {
      if (v == Heatmap::kNoBox) continue;
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    EXPECT_EQ(lo, s.min.iou);
    EXPECT_EQ(hi, s.max.iou);
    EXPECT_EQ(model.iou(inst, s.min.bbox), s.min.iou);
    EXPECT_EQ(model.iou(inst, s.max.bbox), s.max.iou);
  }
}

TEST(Centered, SymmetricForUnclippedBoxes) {
  ToyModel model;
  for (const BBox r : {BBox{20, 18, 31, 33}, BBox{22, 22, 42, 42}}) {
    const Instance inst = rect_instance("sym", 64, 64, r);
    const auto s = exhaustive_centered(model, inst);
    const int x1 = int(r.x1), x2 = int(r.x2), y1 = int(r.y1), y2 = int(r.y2);
    const int reach = std::min({x1, y1, 64 - x2, 64 - y2});
    for (int i = -((y2 - y1 - 1) / 2); i <= reach; ++i) {
      for (int j = -((x2 - x1 - 1) / 2); j <= reach; ++j) {
        const auto& h = s.heatmap.values;
        const double v = h.at(x1 - j, y1 - i);
        EXPECT_EQ(h.at(x2 + j - 1, y1 - i), v);
        EXPECT_EQ(h.at(x1 - j, y2 + i - 1), v);
        EXPECT_EQ(h.at(x2 + j - 1, y2 + i - 1), v);
        EXPECT_EQ(v, model.iou(inst, BBox{double(x1 - j), double(y1 - i), double(x2 + j),
                                          double(y2 + i)}));
      }
    }
  }
}

TEST(Centered, StrideAndWorkers) {
  ToyModel model;
  const Instance inst = rect_instance("r", 48, 48, {11, 9, 30, 26});
  const auto one = exhaustive_centered(model, inst, 1, 1);
  const auto four = exhaustive_centered(model, inst, 1, 4);
  EXPECT_EQ(one.heatmap.values, four.heatmap.values);
  EXPECT_EQ(one.min.bbox, four.min.bbox);
  EXPECT_EQ(one.max.bbox, four.max.bbox);
  const auto coarse = exhaustive_centered(model, inst, 2);
  EXPECT_LT(coarse.evaluations, one.evaluations);
  EXPECT_EQ(coarse.tight_iou, one.tight_iou);
  EXPECT_THROW(exhaustive_centered(model, inst, 0), InvalidParameter);
}

TEST(Centered, CorpusHasOnePixelCliff) {
  // Somewhere in the corpus two boxes one pixel apart differ by > 0.2 IoU.
  ToyModel model;
  double biggest = 0;
  for (const auto& inst : make_toy_corpus(20, 64, 1)) {
    const auto sweep = exhaustive_centered(model, inst);
    const auto& h = sweep.heatmap.values;
    for (int r = 0; r < h.height(); ++r) {
      for (int c = 0; c + 1 < h.width(); ++c) {
        const double a = h.at(c, r), b = h.at(c + 1, r);
        if (a == Heatmap::kNoBox || b == Heatmap::kNoBox) continue;
        biggest = std::max(biggest, std::abs(a - b));
      }
    }
  }
  EXPECT_GT(biggest, 0.2);
}

TEST(Full, CountsAndBruteForce) {
  EXPECT_EQ(full_sweep_count(8, 8, 1), 1296u);
  EXPECT_EQ(full_sweep_count(32, 32, 1), 528u * 528u);
  EXPECT_EQ(full_sweep_count(10, 7, 3), 10u * 6u);  // x grid {0,3,6,9,10}, y grid {0,3,6,7}

  ToyModel model;
  const Instance inst = rect_instance("tiny", 8, 8, {2, 1, 6, 5});
  const auto f = exhaustive_full(model, inst);
  EXPECT_EQ(f.evaluations, 1296u);
  double lo = 2, hi = -1;
  for (int x1 = 0; x1 <= 8; ++x1)
    for (int x2 = x1 + 1; x2 <= 8; ++x2)
      for (int y1 = 0; y1 <= 8; ++y1)
        for (int y2 = y1 + 1; y2 <= 8; ++y2) {
          const double v = model.iou(inst, BBox{double(x1), double(y1), double(x2), double(y2)});
          lo = std::min(lo, v);
          hi = std::max(hi, v);
        }
  EXPECT_EQ(f.min.iou, lo);
  EXPECT_EQ(f.max.iou, hi);
}

TEST(Full, DominatesCenteredAndIgnoresWorkers) {
  ToyModel model;
  for (const auto& inst : make_toy_corpus(3, 24, 4)) {
    const auto c = exhaustive_centered(model, inst);
    const auto a = exhaustive_full(model, inst, 1, kDefaultFullSweepBudget, 1);
    const auto b = exhaustive_full(model, inst, 1, kDefaultFullSweepBudget, 3);
    EXPECT_LE(a.min.iou, c.min.iou);
    EXPECT_GE(a.max.iou, c.max.iou);
    EXPECT_EQ(a.min.bbox, b.min.bbox);
    EXPECT_EQ(a.max.bbox, b.max.bbox);
    EXPECT_EQ(a.evaluations, b.evaluations);
  }
}

TEST(Full, BudgetSuggestsStride) {
  ToyModel model;
  const Instance inst = square_instance("big", 64, 20, 20);
  try {
    exhaustive_full(model, inst);
    FAIL() << "expected BudgetExceeded";
  } catch (const BudgetExceeded& e) {
    EXPECT_EQ(e.suggested_stride(), 2);
    EXPECT_LE(full_sweep_count(64, 64, e.suggested_stride()), kDefaultFullSweepBudget);
  }
  EXPECT_THROW(exhaustive_full(model, inst, 1, 1000), BudgetExceeded);
}

TEST(RenderHeatmap, SentinelAndSaturatedMaps) {
  const auto dir = scratch_dir("oracle_render");
  Heatmap empty{Raster<double>(5, 4, Heatmap::kNoBox)};
  const auto files = render_heatmap(empty, dir / "empty");
  const auto zeros = read_pgm(files.pgm);
  for (auto v : zeros.values()) EXPECT_EQ(v, 0);
  EXPECT_TRUE(std::filesystem::exists(files.png));

  Heatmap full{Raster<double>(5, 4, 1.0)};
  const auto f2 = render_heatmap(full, dir / "full", false);
  const auto full_px = read_pgm(f2.pgm);
  for (auto v : full_px.values()) EXPECT_EQ(v, 255);
  EXPECT_TRUE(f2.png.empty());
  EXPECT_FALSE(std::filesystem::exists(dir / "full.png"));
}

TEST(RenderHeatmap, CsvRoundTripIsExact) {
  const auto dir = scratch_dir("oracle_csv");
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 1);
  Heatmap h{Raster<double>(7, 5)};
  for (auto& v : h.values.values()) v = u(rng) < 0.2 ? Heatmap::kNoBox : u(rng);
  const auto files = render_heatmap(h, dir / "map");
  const Heatmap back = read_heatmap_csv(files.csv);
  EXPECT_EQ(back.values, h.values);
  EXPECT_EQ(read_gray(files.png).width(), 7);
}

TEST(RenderHeatmap, UnwritableTargetIsIoError) {
  Heatmap h{Raster<double>(2, 2, 0.5)};
  EXPECT_THROW(render_heatmap(h, "/nonexistent_dir_breps/x"), IoError);
  EXPECT_THROW(read_heatmap_csv("/nonexistent_dir_breps/x.csv"), IoError);
}
