#include "mbseg/report.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "mbseg/io.hpp"

namespace mbseg {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// NaN is stored as null.
json num(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }
double num_from(const json& j) { return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>(); }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string exact(double v) { return std::isfinite(v) ? fmt("%.17g", v) : "nan"; }

std::string pct(double v) { return std::isfinite(v) ? fmt("%6.2f", 100.0 * v) : "   n/a"; }

}  // namespace

json to_json(const SegMetrics& m) {
  return {{"ja", num(m.ja)}, {"di", num(m.di)}, {"ac", num(m.ac)}, {"se", num(m.se)}, {"sp", num(m.sp)}};
}

SegMetrics seg_metrics_from_json(const json& j) {
  return {num_from(j.at("ja")), num_from(j.at("di")), num_from(j.at("ac")), num_from(j.at("se")),
          num_from(j.at("sp"))};
}

json to_json(const SegReport& r) {
  json rows = json::array();
  for (std::size_t i = 0; i < r.ids.size(); ++i) {
    json row = to_json(r.per_image[i]);
    row["id"] = r.ids[i];
    rows.push_back(row);
  }
  return {{"mean", to_json(r.mean)}, {"pooled", to_json(r.pooled)}, {"per_image", rows}};
}

SegReport seg_report_from_json(const json& j) {
  SegReport r;
  r.mean = seg_metrics_from_json(j.at("mean"));
  r.pooled = seg_metrics_from_json(j.at("pooled"));
  for (const auto& row : j.at("per_image")) {
    r.ids.push_back(row.at("id").get<std::string>());
    r.per_image.push_back(seg_metrics_from_json(row));
  }
  return r;
}

json to_json(const ClsReport& r) {
  json tasks = json::array();
  for (const auto& t : r.tasks) {
    tasks.push_back({{"positive_class", t.positive_class},
                     {"auc", num(t.auc)},
                     {"ac", num(t.ac)},
                     {"se", num(t.se)},
                     {"sp", num(t.sp)}});
  }
  return {{"tasks", tasks}, {"average_auc", num(r.average_auc)}, {"accuracy", num(r.accuracy)}};
}

ClsReport cls_report_from_json(const json& j) {
  ClsReport r;
  for (const auto& t : j.at("tasks")) {
    r.tasks.push_back({t.at("positive_class").get<int>(), num_from(t.at("auc")), num_from(t.at("ac")),
                       num_from(t.at("se")), num_from(t.at("sp"))});
  }
  r.average_auc = num_from(j.at("average_auc"));
  r.accuracy = num_from(j.at("accuracy"));
  return r;
}

json to_json(const FinalReports& r) {
  json probs = json::array();
  for (Eigen::Index i = 0; i < r.cls_probs.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index c = 0; c < r.cls_probs.cols(); ++c) row.push_back(r.cls_probs(i, c));
    probs.push_back(row);
  }
  return {{"coarse", to_json(r.coarse)},
          {"enhanced", to_json(r.enhanced)},
          {"classification", to_json(r.cls)},
          {"class_names", r.class_names},
          {"cls_ids", r.cls_ids},
          {"cls_labels", r.cls_labels},
          {"cls_probs", probs}};
}

FinalReports final_reports_from_json(const json& j) {
  FinalReports r;
  r.coarse = seg_report_from_json(j.at("coarse"));
  r.enhanced = seg_report_from_json(j.at("enhanced"));
  r.cls = cls_report_from_json(j.at("classification"));
  r.class_names = j.at("class_names").get<std::vector<std::string>>();
  r.cls_ids = j.at("cls_ids").get<std::vector<std::string>>();
  r.cls_labels = j.at("cls_labels").get<std::vector<int>>();
  const auto& probs = j.at("cls_probs");
  const auto cols = probs.empty() ? Eigen::Index(r.class_names.size()) : Eigen::Index(probs.front().size());
  r.cls_probs.resize(Eigen::Index(probs.size()), cols);
  for (std::size_t i = 0; i < probs.size(); ++i) {
    for (std::size_t c = 0; c < probs[i].size(); ++c) {
      r.cls_probs(Eigen::Index(i), Eigen::Index(c)) = probs[i][c].get<double>();
    }
  }
  return r;
}

std::string seg_rows_csv(const SegReport& r) {
  std::ostringstream out;
  out << "id,JA,DI,AC,SE,SP\n";
  for (std::size_t i = 0; i < r.ids.size(); ++i) {
    const auto& m = r.per_image[i];
    out << r.ids[i] << ',' << exact(m.ja) << ',' << exact(m.di) << ',' << exact(m.ac) << ',' << exact(m.se) << ','
        << exact(m.sp) << '\n';
  }
  return out.str();
}

std::string seg_summary_table(const std::vector<std::pair<std::string, SegMetrics>>& rows) {
  std::ostringstream out;
  char line[160];
  std::snprintf(line, sizeof line, "%-16s %6s %6s %6s %6s %6s\n", "Method", "JA", "DI", "AC", "SE", "SP");
  out << line;
  for (const auto& [name, m] : rows) {
    std::snprintf(line, sizeof line, "%-16s %s %s %s %s %s\n", name.c_str(), pct(m.ja).c_str(), pct(m.di).c_str(),
                  pct(m.ac).c_str(), pct(m.se).c_str(), pct(m.sp).c_str());
    out << line;
  }
  return out.str();
}

std::string cls_summary_table(const ClsReport& r, const std::vector<std::string>& class_names) {
  std::ostringstream out;
  char line[160];
  std::snprintf(line, sizeof line, "%-16s %6s %6s %6s %6s\n", "Task", "AC", "SE", "SP", "AUC");
  out << line;
  for (const auto& t : r.tasks) {
    const auto idx = static_cast<std::size_t>(t.positive_class);
    const std::string name = idx < class_names.size() ? class_names[idx] : "class " + std::to_string(t.positive_class);
    std::snprintf(line, sizeof line, "%-16s %s %s %s %s\n", name.c_str(), pct(t.ac).c_str(), pct(t.se).c_str(),
                  pct(t.sp).c_str(), pct(t.auc).c_str());
    out << line;
  }
  out << "average AUC " << pct(r.average_auc) << ", accuracy " << pct(r.accuracy) << '\n';
  return out.str();
}

std::string curve_csv(const TrainingCurve& c) {
  std::ostringstream out;
  out << "epoch,train_loss,val_metric\n";
  for (std::size_t i = 0; i < c.epoch.size(); ++i) {
    out << c.epoch[i] << ',' << exact(c.train_loss[i]) << ',' << exact(c.val_metric[i]) << '\n';
  }
  return out.str();
}

TrainingCurve parse_curve_csv(const std::string& text) {
  TrainingCurve c;
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string a, b, d;
    std::getline(row, a, ',');
    std::getline(row, b, ',');
    std::getline(row, d, ',');
    try {
      c.epoch.push_back(std::stoi(a));
      c.train_loss.push_back(std::stod(b));
      c.val_metric.push_back(std::stod(d));
    } catch (const std::exception&) {
      throw IoError("malformed training curve row: " + line);
    }
  }
  return c;
}

namespace {

const cv::Scalar kPalette[] = {{200, 80, 30}, {40, 40, 220}, {40, 160, 40}, {160, 40, 160}, {20, 140, 200}};

void write_png(const fs::path& path, const cv::Mat& img) {
  if (path.has_parent_path()) io::ensure_directory(path.parent_path());
  bool ok = false;
  try {
    ok = cv::imwrite(path.string(), img);
  } catch (const cv::Exception&) {
    ok = false;
  }
  if (!ok) throw IoError("cannot write " + path.string());
}

}  // namespace

void plot_lines(const fs::path& path, const std::string& title, const std::string& x_label,
                const std::string& y_label, const std::vector<PlotSeries>& series) {
  const int width = 640, height = 420, left = 70, right = 20, top = 40, bottom = 60;
  cv::Mat img(height, width, CV_8UC3, cv::Scalar(255, 255, 255));
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x0 -= 0.5, x1 += 0.5;
  if (y1 == y0) y0 -= 0.5, y1 += 0.5;
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad;
  y1 += pad;
  const auto px = [&](double x) { return left + int(std::lround((x - x0) / (x1 - x0) * (width - left - right))); };
  const auto py = [&](double y) { return height - bottom - int(std::lround((y - y0) / (y1 - y0) * (height - top - bottom))); };
  const cv::Scalar black(0, 0, 0), grey(200, 200, 200);
  cv::rectangle(img, {left, top}, {width - right, height - bottom}, black, 1);
  for (int t = 0; t <= 4; ++t) {
    const double xv = x0 + (x1 - x0) * t / 4.0, yv = y0 + (y1 - y0) * t / 4.0;
    cv::line(img, {px(xv), top}, {px(xv), height - bottom}, grey, 1);
    cv::line(img, {left, py(yv)}, {width - right, py(yv)}, grey, 1);
    cv::putText(img, fmt("%.3g", xv), {px(xv) - 15, height - bottom + 18}, cv::FONT_HERSHEY_SIMPLEX, 0.4, black);
    cv::putText(img, fmt("%.3g", yv), {8, py(yv) + 4}, cv::FONT_HERSHEY_SIMPLEX, 0.4, black);
  }
  cv::putText(img, title, {left, 25}, cv::FONT_HERSHEY_SIMPLEX, 0.55, black);
  cv::putText(img, x_label, {width / 2 - 30, height - 15}, cv::FONT_HERSHEY_SIMPLEX, 0.45, black);
  cv::putText(img, y_label, {8, top - 8}, cv::FONT_HERSHEY_SIMPLEX, 0.45, black);
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const cv::Scalar col = kPalette[k % std::size(kPalette)];
    std::vector<cv::Point> pts;
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      if (std::isfinite(s.x[i]) && std::isfinite(s.y[i])) pts.emplace_back(px(s.x[i]), py(s.y[i]));
    }
    if (pts.size() > 1) cv::polylines(img, pts, false, col, 2, cv::LINE_AA);
    for (const auto& p : pts) cv::circle(img, p, 3, col, cv::FILLED);
    const int ly = top + 15 + 18 * int(k);
    cv::line(img, {width - right - 150, ly - 4}, {width - right - 130, ly - 4}, col, 2);
    cv::putText(img, s.name, {width - right - 125, ly}, cv::FONT_HERSHEY_SIMPLEX, 0.4, black);
  }
  write_png(path, img);
}

namespace {

cv::Mat gray_tile(const Grid<float>& g) {
  cv::Mat m(int(g.rows()), int(g.cols()), CV_8UC3);
  for (int y = 0; y < m.rows; ++y) {
    for (int x = 0; x < m.cols; ++x) {
      const auto v = cv::saturate_cast<std::uint8_t>(std::lround(255.0 * std::clamp(double(g(y, x)), 0.0, 1.0)));
      m.at<cv::Vec3b>(y, x) = {v, v, v};
    }
  }
  return m;
}

}  // namespace

void write_overlay_panel(const fs::path& path, const Tensor<float>& image, const Grid<float>& coarse,
                         const Grid<float>& cam, const Grid<float>& enhanced, const Mask& truth) {
  const int h = image.h(), w = image.w();
  cv::Mat rgb(h, w, CV_8UC3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      auto ch = [&](int c) {
        return cv::saturate_cast<std::uint8_t>(std::lround(255.0 * std::clamp(double(image(0, c, y, x)), 0.0, 1.0)));
      };
      rgb.at<cv::Vec3b>(y, x) = {ch(2), ch(1), ch(0)};
    }
  }
  const auto fit = [&](const Grid<float>& g) {
    return g.rows() == h && g.cols() == w ? g : Grid<float>(nn::resize_bilinear(g, h, w));
  };
  cv::Mat cam_tile;
  cv::Mat cam_gray;
  cv::cvtColor(gray_tile(fit(cam)), cam_gray, cv::COLOR_BGR2GRAY);
  cv::applyColorMap(cam_gray, cam_tile, cv::COLORMAP_JET);
  cv::Mat blended;
  cv::addWeighted(rgb, 0.5, cam_tile, 0.5, 0.0, blended);
  const std::vector<cv::Mat> tiles{rgb, gray_tile(fit(coarse)), blended, gray_tile(fit(enhanced)),
                                   gray_tile(truth.cast<float>())};
  cv::Mat row;
  cv::hconcat(tiles, row);
  write_png(path, row);
}

void emit_reports(const FinalReports& r, const fs::path& dir) {
  io::ensure_directory(dir);
  io::write_text(dir / "reports.json", to_json(r).dump(2) + "\n");
  io::write_text(dir / "seg_coarse.csv", seg_rows_csv(r.coarse));
  io::write_text(dir / "seg_enhanced.csv", seg_rows_csv(r.enhanced));
  std::ostringstream cls;
  cls << "id,label";
  for (const auto& n : r.class_names) cls << ",p_" << n;
  cls << '\n';
  for (std::size_t i = 0; i < r.cls_ids.size(); ++i) {
    cls << r.cls_ids[i] << ',' << r.cls_labels[i];
    for (Eigen::Index c = 0; c < r.cls_probs.cols(); ++c) cls << ',' << exact(r.cls_probs(Eigen::Index(i), c));
    cls << '\n';
  }
  io::write_text(dir / "cls_predictions.csv", cls.str());
  std::ostringstream summary;
  summary << "Segmentation (test split, mean over images)\n"
          << seg_summary_table({{"coarse-SN", r.coarse.mean}, {"enhanced-SN", r.enhanced.mean}}) << '\n'
          << "Classification (test split, one-vs-rest)\n"
          << cls_summary_table(r.cls, r.class_names);
  io::write_text(dir / "summary.txt", summary.str());
}

}  // namespace mbseg
