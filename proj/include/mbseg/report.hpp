#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "mbseg/metrics.hpp"
#include "mbseg/training.hpp"

namespace mbseg {

/// Test-split results of a full run.
struct FinalReports {
  SegReport coarse;
  SegReport enhanced;
  ClsReport cls;
  std::vector<std::string> class_names;
  std::vector<std::string> cls_ids;
  Grid<double> cls_probs;  // one row per cls test sample
  std::vector<int> cls_labels;
};

nlohmann::json to_json(const SegMetrics& m);
SegMetrics seg_metrics_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SegReport& r);
SegReport seg_report_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ClsReport& r);
ClsReport cls_report_from_json(const nlohmann::json& j);
nlohmann::json to_json(const FinalReports& r);
FinalReports final_reports_from_json(const nlohmann::json& j);

/// Per-image rows "id,JA,DI,AC,SE,SP"; header only when empty.
std::string seg_rows_csv(const SegReport& r);
/// Method rows with JA/DI/AC/SE/SP in percent.
std::string seg_summary_table(const std::vector<std::pair<std::string, SegMetrics>>& rows);
/// One row per one-vs-rest task with AC/SE/SP/AUC in percent, then the average AUC.
std::string cls_summary_table(const ClsReport& r, const std::vector<std::string>& class_names);

std::string curve_csv(const TrainingCurve& c);
TrainingCurve parse_curve_csv(const std::string& text);

struct PlotSeries {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

/// Line plot written as PNG.
void plot_lines(const std::filesystem::path& path, const std::string& title, const std::string& x_label,
                const std::string& y_label, const std::vector<PlotSeries>& series);

/// One panel row: image | coarse mask | CAM | enhanced prediction | ground truth.
void write_overlay_panel(const std::filesystem::path& path, const Tensor<float>& image, const Grid<float>& coarse,
                         const Grid<float>& cam, const Grid<float>& enhanced, const Mask& truth);

/// Writes reports.json, summary.txt and the per-image tables into `dir`.
void emit_reports(const FinalReports& r, const std::filesystem::path& dir);

}  // namespace mbseg
