#include "mbseg/metrics.hpp"

#include <algorithm>
#include <numeric>

#include "mbseg/cam.hpp"

namespace mbseg {

namespace {
double ratio(std::int64_t num, std::int64_t den) {
  return den == 0 ? 1.0 : static_cast<double>(num) / static_cast<double>(den);
}
}  // namespace

double jaccard(const ConfusionCounts& c) { return ratio(c.tp, c.tp + c.fp + c.fn); }
double dice_coef(const ConfusionCounts& c) { return ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn); }
double pixel_accuracy(const ConfusionCounts& c) { return ratio(c.tp + c.tn, c.total()); }
double sensitivity(const ConfusionCounts& c) {
  if (c.tp + c.fn == 0) return c.fn == 0 ? 1.0 : 0.0;
  return ratio(c.tp, c.tp + c.fn);
}
double specificity(const ConfusionCounts& c) {
  if (c.tn + c.fp == 0) return c.fp == 0 ? 1.0 : 0.0;
  return ratio(c.tn, c.tn + c.fp);
}

SegMetrics seg_metrics(const ConfusionCounts& c) {
  return {jaccard(c), dice_coef(c), pixel_accuracy(c), sensitivity(c), specificity(c)};
}

SegReport segmentation_report(const std::vector<std::string>& ids, const std::vector<Grid<float>>& preds,
                              const std::vector<Mask>& gts, double threshold) {
  if (ids.size() != preds.size() || preds.size() != gts.size()) {
    throw ContractViolation("segmentation_report: ids, predictions and masks differ in length");
  }
  SegReport r;
  r.ids = ids;
  ConfusionCounts pooled;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto c = confusion_counts(preds[i], gts[i], threshold);
    pooled += c;
    r.per_image.push_back(seg_metrics(c));
  }
  if (!r.per_image.empty()) {
    const double n = static_cast<double>(r.per_image.size());
    for (const auto& m : r.per_image) {
      r.mean.ja += m.ja / n;
      r.mean.di += m.di / n;
      r.mean.ac += m.ac / n;
      r.mean.se += m.se / n;
      r.mean.sp += m.sp / n;
    }
  }
  r.pooled = seg_metrics(pooled);
  return r;
}

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw ContractViolation("roc_auc: scores and labels differ in length");
  std::size_t pos = 0;
  for (int y : labels) {
    if (y != 0 && y != 1) throw ContractViolation("roc_auc: labels must be 0 or 1");
    pos += static_cast<std::size_t>(y);
  }
  const std::size_t neg = labels.size() - pos;
  if (pos == 0 || neg == 0) throw UndefinedMetric("roc_auc: needs at least one positive and one negative");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  // Trapezoids between consecutive distinct thresholds (descending).
  double area = 0.0;
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t dtp = 0, dfp = 0;
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] ? dtp : dfp) += 1;
      ++j;
    }
    area += static_cast<double>(dfp) * (static_cast<double>(tp) + 0.5 * static_cast<double>(dtp));
    tp += dtp;
    fp += dfp;
    i = j;
  }
  return area / (static_cast<double>(pos) * static_cast<double>(neg));
}

BinaryTaskReport classification_report(const Grid<double>& probs, std::span<const int> labels, int positive_class) {
  if (static_cast<std::size_t>(probs.rows()) != labels.size()) {
    throw ContractViolation("classification_report: probability rows and labels differ in length");
  }
  if (positive_class < 0 || positive_class >= probs.cols()) {
    throw ContractViolation("classification_report: positive class out of range");
  }
  ConfusionCounts c;
  std::vector<double> scores;
  std::vector<int> binary;
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    const bool predicted = argmax_lowest(probs.row(i)) == positive_class;
    const bool actual = labels[static_cast<std::size_t>(i)] == positive_class;
    if (predicted && actual) ++c.tp;
    else if (predicted) ++c.fp;
    else if (actual) ++c.fn;
    else ++c.tn;
    scores.push_back(probs(i, positive_class));
    binary.push_back(actual ? 1 : 0);
  }
  BinaryTaskReport r;
  r.positive_class = positive_class;
  r.auc = roc_auc(scores, binary);
  r.ac = pixel_accuracy(c);
  r.se = sensitivity(c);
  r.sp = specificity(c);
  return r;
}

double argmax_accuracy(const Grid<double>& probs, std::span<const int> labels) {
  if (labels.empty()) return 0.0;
  std::size_t correct = 0;
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    if (argmax_lowest(probs.row(i)) == labels[static_cast<std::size_t>(i)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

ClsReport classification_summary(const Grid<double>& probs, std::span<const int> labels,
                                 const std::vector<int>& positive_classes) {
  ClsReport r;
  for (int c : positive_classes) {
    r.tasks.push_back(classification_report(probs, labels, c));
    r.average_auc += r.tasks.back().auc;
  }
  if (!r.tasks.empty()) r.average_auc /= static_cast<double>(r.tasks.size());
  r.accuracy = argmax_accuracy(probs, labels);
  return r;
}

}  // namespace mbseg
