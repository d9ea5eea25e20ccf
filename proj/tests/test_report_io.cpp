#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <random>

#include "breps/data.hpp"
#include "breps/error.hpp"
#include "breps/report_io.hpp"
#include "test_util.hpp"

using namespace breps;
using breps::testing::scratch_dir;

namespace {

double rnd(std::mt19937_64& rng) {
  static std::uniform_real_distribution<double> u(-3, 3);
  return u(rng) * std::pow(10.0, u(rng));
}

std::size_t parse_error_line(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const ParseError& e) {
    return e.line();
  }
  return 0;
}

}  // namespace

TEST(CsvTable, HeaderBlankLinesAndFieldCounts) {
  const auto rows = parse_csv_table("a,b\n1,2\n\n3,4\r\n", "a,b");
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[1], (std::vector<std::string>{"3", "4"}));
  EXPECT_EQ(parse_error_line([] { parse_csv_table("a,b\n1,2\n1,2,3\n", "a,b"); }), 3u);
  EXPECT_EQ(parse_error_line([] { parse_csv_table("x,y\n1,2\n", "a,b"); }), 1u);
  EXPECT_EQ(parse_error_line([] { parse_csv_table("", "a,b"); }), 1u);
}

TEST(TextFiles, RoundTripAndErrors) {
  const auto dir = scratch_dir("rio_text");
  write_text_file(dir / "t.txt", "hello\nworld\n");
  EXPECT_EQ(read_text_file(dir / "t.txt"), "hello\nworld\n");
  EXPECT_THROW(read_text_file(dir / "absent.txt"), IoError);
  EXPECT_THROW(write_text_file("/nonexistent_dir_breps/t.txt", "x"), IoError);
}

TEST(Realism, JsonRoundTrip) {
  const GammaRealismModel m{1.9234567891234567, 0.1178, 2e-4};
  const auto back = realism_from_json(nlohmann::json::parse(to_json(m).dump()));
  EXPECT_EQ(back.k, m.k);
  EXPECT_EQ(back.theta, m.theta);
  EXPECT_EQ(back.x_clamp, m.x_clamp);
  EXPECT_EQ(realism_from_json({{"k", 2.0}, {"theta", 0.5}}).x_clamp, 1e-4);
  EXPECT_THROW(realism_from_json({{"k", 2.0}}), InvalidInput);
  EXPECT_THROW(realism_from_json({{"k", -2.0}, {"theta", 0.5}}), InvalidParameter);
}

TEST(Realism, SamplesCsv) {
  EXPECT_EQ(parse_ciou_samples("ciou_loss\n0.1\n0.25\n1e-3\n"),
            (std::vector<double>{0.1, 0.25, 1e-3}));
  EXPECT_EQ(parse_error_line([] { parse_ciou_samples("ciou_loss\n0.1\nbad\n"); }), 3u);
}

TEST(Boxes, CsvRoundTrip) {
  std::mt19937_64 rng(61);
  std::vector<LabeledBox> rows;
  for (int i = 0; i < 200; ++i)
    rows.push_back({"img" + std::to_string(i), {rnd(rng), rnd(rng), rnd(rng), rnd(rng)}});
  EXPECT_EQ(parse_boxes_csv(format_boxes_csv(rows)), rows);
  EXPECT_TRUE(format_boxes_csv({}).starts_with(kBoxesHeader));
}

TEST(Attack, SummaryAndLambdaCsvRoundTrip) {
  std::mt19937_64 rng(62);
  std::vector<AttackSummaryRow> rows;
  std::vector<LambdaSweepRow> lambdas;
  for (int i = 0; i < 50; ++i) {
    rows.push_back({"toy_" + std::to_string(i), i % 2 ? AttackMode::maximize : AttackMode::minimize,
                    rnd(rng), rnd(rng), rnd(rng)});
    lambdas.push_back({rnd(rng), rnd(rng), rnd(rng)});
  }
  EXPECT_EQ(parse_attack_csv(format_attack_csv(rows)), rows);
  const auto back = parse_lambda_csv(format_lambda_csv(lambdas));
  ASSERT_EQ(back.size(), lambdas.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].lambda, lambdas[i].lambda);
    EXPECT_EQ(back[i].iou_delta, lambdas[i].iou_delta);
    EXPECT_EQ(back[i].log_pdf, lambdas[i].log_pdf);
  }
  EXPECT_EQ(format_attack_csv(rows).substr(0, kAttackHeader.size()), kAttackHeader);
  EXPECT_EQ(parse_error_line([] { parse_attack_csv("image_id,mode,iou_tight,iou_final,log_pdf_final\n"
                                                   "a,sideways,1,2,3\n"); }),
            2u);
}

TEST(Attack, ResultJsonCarriesTrajectoryAndConfig) {
  ToyModel model;
  const Instance inst = make_toy_corpus(1, 32, 4)[0];
  AttackConfig cfg;
  cfg.steps = 7;
  cfg.lambda = 0.25;
  cfg.mode = AttackMode::maximize;
  const auto r = breps_attack(model, inst, cfg);
  const auto j = nlohmann::json::parse(to_json(r, inst.image_id, 0.5).dump());
  EXPECT_EQ(j.at("image_id"), inst.image_id);
  EXPECT_EQ(j.at("mode"), "max");
  EXPECT_EQ(j.at("trajectory").size(), 8u);
  EXPECT_EQ(j.at("grad_norms").size(), 7u);
  EXPECT_EQ(bbox_from_json(j.at("final_bbox")), r.final_bbox);
  EXPECT_EQ(bbox_from_json(j.at("trajectory")[3].at("bbox")), r.trajectory[3].bbox);
  EXPECT_EQ(j.at("trajectory")[3].at("dice_loss").get<double>(), r.trajectory[3].dice_loss);
  EXPECT_EQ(j.at("final_log_pdf").get<double>(), r.final_log_pdf);
  EXPECT_EQ(j.at("config").at("lambda").get<double>(), 0.25);
  EXPECT_EQ(j.at("config").at("steps").get<int>(), 7);
  EXPECT_EQ(j.at("best_seen").at("iou").get<double>(), r.best_seen().iou);
  EXPECT_THROW(bbox_from_json(nlohmann::json::array({1, 2, 3})), InvalidInput);
}

TEST(Robustness, CsvAndJsonMirror) {
  ToyModel model;
  const auto corpus = make_toy_corpus(4, 32, 8);
  RobustnessReport report = robustness_report(model, corpus, {});
  report.failed.push_back("toy_9999");
  const std::string csv = format_robustness_csv(report);
  const auto rows = parse_robustness_csv(csv);
  ASSERT_EQ(rows.size(), report.rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(rows[i].image_id, report.rows[i].image_id);
    EXPECT_EQ(rows[i].iou_min, report.rows[i].iou_min);
    EXPECT_EQ(rows[i].iou_delta, rows[i].iou_max - rows[i].iou_min);
  }
  const auto j = to_json(report);
  EXPECT_EQ(j.at("n"), 4);
  EXPECT_EQ(j.at("failed")[0], "toy_9999");
  EXPECT_EQ(j.at("mean").at("iou_delta").get<double>(), report.mean_delta);
  EXPECT_EQ(j.at("columns").size(), 4u);
}

TEST(UserSpread, CsvLeavesMissingStdEmpty) {
  DatasetSpread d;
  UserSpreadRow row;
  row.image_id = "img";
  row.all = {2, 0.7, 0.1};
  row.desktop = {1, 0.8, std::nullopt};
  row.mobile = {1, 0.6, std::nullopt};
  d.rows.push_back(row);
  const std::string csv = format_user_spread_csv(d);
  const auto table = parse_csv_table(csv, kUserSpreadHeader);
  ASSERT_EQ(table.size(), 1u);
  EXPECT_EQ(table[0][0], "img");
  EXPECT_EQ(table[0][1], "2");
  EXPECT_EQ(parse_double(table[0][3]), 0.1);
  EXPECT_EQ(table[0][6], "");
  EXPECT_EQ(table[0][9], "");
}

TEST(Centered, SummaryJson) {
  ToyModel model;
  const Instance inst = breps::testing::square_instance("sq", 32, 10, 12);
  const auto s = exhaustive_centered(model, inst);
  const auto j = to_json(s);
  EXPECT_EQ(j.at("tight_iou").get<double>(), s.tight_iou);
  EXPECT_EQ(bbox_from_json(j.at("min").at("bbox")), s.min.bbox);
  EXPECT_EQ(j.at("max").at("iou").get<double>(), s.max.iou);
  EXPECT_EQ(j.at("evaluations").get<std::size_t>(), s.evaluations);
}
