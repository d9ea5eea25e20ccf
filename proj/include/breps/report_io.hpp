#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "breps/attack.hpp"
#include "breps/metrics.hpp"
#include "breps/oracle.hpp"
#include "breps/realism.hpp"

namespace breps {

// All numbers are written as shortest round-trip decimals, so every
// format_* / parse_* pair below is lossless.

// Rows of a CSV whose first line must equal `header`. Blank lines are
// skipped; a wrong field count is a ParseError carrying the line number.
std::vector<std::vector<std::string>> parse_csv_table(std::string_view text,
                                                      std::string_view header);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

// ---- realism ----

nlohmann::json to_json(const GammaRealismModel& m);
GammaRealismModel realism_from_json(const nlohmann::json& j);

inline constexpr std::string_view kSamplesHeader = "ciou_loss";
std::vector<double> parse_ciou_samples(std::string_view text);

inline constexpr std::string_view kBoxesHeader = "image_id,x1,y1,x2,y2";
struct LabeledBox {
  std::string image_id;
  BBox bbox;
  friend bool operator==(const LabeledBox&, const LabeledBox&) = default;
};
std::string format_boxes_csv(const std::vector<LabeledBox>& rows);
std::vector<LabeledBox> parse_boxes_csv(std::string_view text);

// ---- attack ----

nlohmann::json to_json(const BBox& b);
BBox bbox_from_json(const nlohmann::json& j);
nlohmann::json to_json(const AttackConfig& cfg);
nlohmann::json to_json(const AttackResult& r, const std::string& image_id, double iou_tight);

inline constexpr std::string_view kAttackHeader =
    "image_id,mode,iou_tight,iou_final,log_pdf_final";
struct AttackSummaryRow {
  std::string image_id;
  AttackMode mode = AttackMode::minimize;
  double iou_tight = 0;
  double iou_final = 0;
  double log_pdf_final = 0;
  friend bool operator==(const AttackSummaryRow&, const AttackSummaryRow&) = default;
};
std::string format_attack_csv(const std::vector<AttackSummaryRow>& rows);
std::vector<AttackSummaryRow> parse_attack_csv(std::string_view text);

inline constexpr std::string_view kLambdaHeader = "lambda,iou_delta,log_pdf";
std::string format_lambda_csv(const std::vector<LambdaSweepRow>& rows);
std::vector<LambdaSweepRow> parse_lambda_csv(std::string_view text);

// ---- metrics ----

inline constexpr std::string_view kRobustnessHeader = "image_id,iou_tight,iou_min,iou_max,iou_delta";
std::string format_robustness_csv(const RobustnessReport& report);
std::vector<RobustnessRow> parse_robustness_csv(std::string_view text);
nlohmann::json to_json(const RobustnessReport& report);

// Std columns are population std and empty when fewer than two users.
inline constexpr std::string_view kUserSpreadHeader =
    "image_id,n_users,iou_mean,iou_std,desktop_n,desktop_mean,desktop_std,mobile_n,mobile_mean,"
    "mobile_std";
std::string format_user_spread_csv(const DatasetSpread& spread);

// ---- oracle ----

nlohmann::json to_json(const CenteredSweep& sweep);

}  // namespace breps
