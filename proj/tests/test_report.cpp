#include <doctest.h>

#include <cmath>
#include <sstream>

#include "mbseg/io.hpp"
#include "mbseg/report.hpp"
#include "support.hpp"

using namespace mbseg;

TEST_CASE("empty per-image table is header only") {
  CHECK(seg_rows_csv(SegReport{}) == "id,JA,DI,AC,SE,SP\n");
  const auto t = seg_summary_table({});
  CHECK(std::count(t.begin(), t.end(), '\n') == 1);
}

TEST_CASE("summary JA is the mean of the per-image column") {
  Rng rng(12);
  std::vector<std::string> ids;
  std::vector<Grid<float>> preds;
  std::vector<Mask> gts;
  for (int i = 0; i < 9; ++i) {
    ids.push_back("s" + std::to_string(i));
    preds.push_back(testing::random_probs(rng, 6, 6, 0, 1).cast<float>());
    gts.push_back(testing::random_mask(rng, 6, 6));
  }
  const auto r = segmentation_report(ids, preds, gts);
  std::istringstream csv(seg_rows_csv(r));
  std::string line;
  std::getline(csv, line);
  double sum = 0;
  int n = 0;
  while (std::getline(csv, line)) {
    const auto a = line.find(',');
    sum += std::stod(line.substr(a + 1, line.find(',', a + 1) - a - 1));
    ++n;
  }
  CHECK(n == 9);
  CHECK(sum / n == doctest::Approx(r.mean.ja).epsilon(1e-15));
}

TEST_CASE("curve csv round trip") {
  TrainingCurve c;
  c.epoch = {1, 2, 3};
  c.train_loss = {0.9, 0.1 / 3, 1e-9};
  c.val_metric = {0.5, 0.6, 0.612345678901234};
  const auto back = parse_curve_csv(curve_csv(c));
  CHECK(back.epoch == c.epoch);
  CHECK(back.train_loss == c.train_loss);
  CHECK(back.val_metric == c.val_metric);
}

TEST_CASE("reports json keeps undefined values") {
  FinalReports r;
  r.class_names = {"a", "b"};
  r.cls.tasks.push_back({1, std::nan(""), 0.5, 1.0, 0.0});
  r.cls.average_auc = std::nan("");
  r.cls_probs = Grid<double>::Constant(1, 2, 0.5);
  r.cls_ids = {"x"};
  r.cls_labels = {1};
  const auto j = to_json(r);
  const auto back = final_reports_from_json(nlohmann::json::parse(j.dump()));
  CHECK(std::isnan(back.cls.average_auc));
  CHECK(std::isnan(back.cls.tasks[0].auc));
  CHECK(back.cls.tasks[0].ac == 0.5);
  CHECK(to_json(back).dump() == j.dump());
}

TEST_CASE("emitted files") {
  FinalReports r;
  r.class_names = {"a", "b"};
  r.cls_probs.resize(0, 2);
  const auto dir = testing::scratch_dir("report_files");
  emit_reports(r, dir);
  for (const char* f : {"reports.json", "seg_coarse.csv", "seg_enhanced.csv", "cls_predictions.csv", "summary.txt"}) {
    CHECK_MESSAGE(std::filesystem::exists(dir / f), f);
  }
  CHECK(io::read_text(dir / "cls_predictions.csv") == "id,label,p_a,p_b\n");

  plot_lines(dir / "plot.png", "t", "x", "y", {{"s", {1, 2, 3}, {0.1, 0.5, 0.2}}});
  CHECK(std::filesystem::file_size(dir / "plot.png") > 0);
}
