#include "breps/report_io.hpp"

#include <fstream>
#include <sstream>

#include "breps/data.hpp"
#include "breps/error.hpp"

namespace breps {

using json = nlohmann::json;

std::vector<std::vector<std::string>> parse_csv_table(std::string_view text,
                                                      std::string_view header) {
  const std::size_t fields = split_csv_line(header).size();
  std::vector<std::vector<std::string>> rows;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (!header_seen) {
      if (line != header) {
        throw ParseError("line " + std::to_string(line_no) + ": expected header '" +
                             std::string(header) + "'",
                         line_no);
      }
      header_seen = true;
      continue;
    }
    auto f = split_csv_line(line);
    if (f.size() != fields) {
      throw ParseError("line " + std::to_string(line_no) + ": expected " + std::to_string(fields) +
                           " fields, got " + std::to_string(f.size()),
                       line_no);
    }
    rows.push_back(std::move(f));
  }
  if (!header_seen) throw ParseError("missing header '" + std::string(header) + "'", 1);
  return rows;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

namespace {

// Parses one numeric cell, reporting the CSV line on failure. Data rows
// start on line 2 when there are no blank lines, which is what we emit.
double cell(const std::vector<std::string>& row, std::size_t i, std::size_t row_index) {
  try {
    return parse_double(row[i]);
  } catch (const InvalidInput& e) {
    throw ParseError("row " + std::to_string(row_index + 1) + ": " + e.what(), row_index + 2);
  }
}

std::string optional_number(const std::optional<double>& v) {
  return v ? format_double(*v) : std::string();
}

}  // namespace

// ---- realism ----

json to_json(const GammaRealismModel& m) {
  return {{"k", m.k}, {"theta", m.theta}, {"x_clamp", m.x_clamp}};
}

GammaRealismModel realism_from_json(const json& j) {
  GammaRealismModel m;
  try {
    m.k = j.at("k").get<double>();
    m.theta = j.at("theta").get<double>();
    if (j.contains("x_clamp")) m.x_clamp = j.at("x_clamp").get<double>();
  } catch (const json::exception& e) {
    throw InvalidInput(std::string("realism model json: ") + e.what());
  }
  m.validate();
  return m;
}

std::vector<double> parse_ciou_samples(std::string_view text) {
  const auto rows = parse_csv_table(text, kSamplesHeader);
  std::vector<double> out;
  out.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) out.push_back(cell(rows[i], 0, i));
  return out;
}

std::string format_boxes_csv(const std::vector<LabeledBox>& rows) {
  std::string out(kBoxesHeader);
  out.push_back('\n');
  for (const auto& r : rows) {
    out += r.image_id + ',' + format_double(r.bbox.x1) + ',' + format_double(r.bbox.y1) + ',' +
           format_double(r.bbox.x2) + ',' + format_double(r.bbox.y2) + '\n';
  }
  return out;
}

std::vector<LabeledBox> parse_boxes_csv(std::string_view text) {
  const auto rows = parse_csv_table(text, kBoxesHeader);
  std::vector<LabeledBox> out;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.push_back({rows[i][0],
                   {cell(rows[i], 1, i), cell(rows[i], 2, i), cell(rows[i], 3, i),
                    cell(rows[i], 4, i)}});
  }
  return out;
}

// ---- attack ----

json to_json(const BBox& b) { return json::array({b.x1, b.y1, b.x2, b.y2}); }

BBox bbox_from_json(const json& j) {
  if (!j.is_array() || j.size() != 4) throw InvalidInput("bbox must be an array of 4 numbers");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

json to_json(const AttackConfig& cfg) {
  return {{"mode", to_string(cfg.mode)},   {"lambda", cfg.lambda},
          {"steps", cfg.steps},            {"base_lr", cfg.base_lr},
          {"adam_beta1", cfg.adam_beta1},  {"adam_beta2", cfg.adam_beta2},
          {"adam_eps", cfg.adam_eps},      {"seed", cfg.seed},
          {"realism", to_json(cfg.realism)}};
}

json to_json(const AttackResult& r, const std::string& image_id, double iou_tight) {
  json traj = json::array();
  for (const auto& p : r.trajectory) {
    traj.push_back({{"bbox", to_json(p.bbox)},
                    {"dice_loss", p.dice_loss},
                    {"log_pdf", p.log_pdf},
                    {"iou", p.iou}});
  }
  const auto& best = r.best_seen();
  return {{"image_id", image_id},
          {"mode", to_string(r.mode)},
          {"iou_tight", iou_tight},
          {"final_bbox", to_json(r.final_bbox)},
          {"final_iou", r.final_iou},
          {"final_log_pdf", r.final_log_pdf},
          {"best_seen", {{"bbox", to_json(best.bbox)}, {"iou", best.iou}}},
          {"settled_at", r.settled_at()},
          {"grad_norms", r.grad_norms},
          {"trajectory", std::move(traj)},
          {"config", to_json(r.config)}};
}

std::string format_attack_csv(const std::vector<AttackSummaryRow>& rows) {
  std::string out(kAttackHeader);
  out.push_back('\n');
  for (const auto& r : rows) {
    out += r.image_id + ',' + to_string(r.mode) + ',' + format_double(r.iou_tight) + ',' +
           format_double(r.iou_final) + ',' + format_double(r.log_pdf_final) + '\n';
  }
  return out;
}

std::vector<AttackSummaryRow> parse_attack_csv(std::string_view text) {
  const auto rows = parse_csv_table(text, kAttackHeader);
  std::vector<AttackSummaryRow> out;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    AttackSummaryRow r;
    r.image_id = rows[i][0];
    try {
      r.mode = parse_attack_mode(rows[i][1]);
    } catch (const InvalidParameter& e) {
      throw ParseError(e.what(), i + 2);
    }
    r.iou_tight = cell(rows[i], 2, i);
    r.iou_final = cell(rows[i], 3, i);
    r.log_pdf_final = cell(rows[i], 4, i);
    out.push_back(std::move(r));
  }
  return out;
}

std::string format_lambda_csv(const std::vector<LambdaSweepRow>& rows) {
  std::string out(kLambdaHeader);
  out.push_back('\n');
  for (const auto& r : rows) {
    out += format_double(r.lambda) + ',' + format_double(r.iou_delta) + ',' +
           format_double(r.log_pdf) + '\n';
  }
  return out;
}

std::vector<LambdaSweepRow> parse_lambda_csv(std::string_view text) {
  const auto rows = parse_csv_table(text, kLambdaHeader);
  std::vector<LambdaSweepRow> out;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.push_back({cell(rows[i], 0, i), cell(rows[i], 1, i), cell(rows[i], 2, i)});
  }
  return out;
}

// ---- metrics ----

std::string format_robustness_csv(const RobustnessReport& report) {
  std::string out(kRobustnessHeader);
  out.push_back('\n');
  for (const auto& r : report.rows) {
    out += r.image_id + ',' + format_double(r.iou_tight) + ',' + format_double(r.iou_min) + ',' +
           format_double(r.iou_max) + ',' + format_double(r.iou_delta) + '\n';
  }
  return out;
}

std::vector<RobustnessRow> parse_robustness_csv(std::string_view text) {
  const auto rows = parse_csv_table(text, kRobustnessHeader);
  std::vector<RobustnessRow> out;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    RobustnessRow r;
    r.image_id = rows[i][0];
    r.iou_tight = cell(rows[i], 1, i);
    r.iou_min = cell(rows[i], 2, i);
    r.iou_max = cell(rows[i], 3, i);
    r.iou_delta = cell(rows[i], 4, i);
    out.push_back(std::move(r));
  }
  return out;
}

json to_json(const RobustnessReport& report) {
  json rows = json::array();
  for (const auto& r : report.rows) {
    rows.push_back({{"image_id", r.image_id},
                    {"iou_tight", r.iou_tight},
                    {"iou_min", r.iou_min},
                    {"iou_max", r.iou_max},
                    {"iou_delta", r.iou_delta},
                    {"log_pdf_min", r.log_pdf_min},
                    {"log_pdf_max", r.log_pdf_max}});
  }
  return {{"columns", {"IoU-Tight@BBox", "IoU-Min@BBox", "IoU-Max@BBox", "IoU-Delta@BBox"}},
          {"mean",
           {{"iou_tight", report.mean_tight},
            {"iou_min", report.mean_min},
            {"iou_max", report.mean_max},
            {"iou_delta", report.mean_delta}}},
          {"n", report.rows.size()},
          {"failed", report.failed},
          {"rows", std::move(rows)}};
}

std::string format_user_spread_csv(const DatasetSpread& spread) {
  std::string out(kUserSpreadHeader);
  out.push_back('\n');
  for (const auto& r : spread.rows) {
    out += r.image_id + ',' + std::to_string(r.all.n) + ',' + format_double(r.all.mean) + ',' +
           optional_number(r.all.std) + ',' + std::to_string(r.desktop.n) + ',' +
           format_double(r.desktop.mean) + ',' + optional_number(r.desktop.std) + ',' +
           std::to_string(r.mobile.n) + ',' + format_double(r.mobile.mean) + ',' +
           optional_number(r.mobile.std) + '\n';
  }
  return out;
}

// ---- oracle ----

json to_json(const CenteredSweep& sweep) {
  return {{"min", {{"bbox", to_json(sweep.min.bbox)}, {"iou", sweep.min.iou}}},
          {"max", {{"bbox", to_json(sweep.max.bbox)}, {"iou", sweep.max.iou}}},
          {"tight_iou", sweep.tight_iou},
          {"evaluations", sweep.evaluations}};
}

}  // namespace breps
