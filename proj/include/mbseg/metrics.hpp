#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mbseg/types.hpp"

namespace mbseg {

/// Pixel counts for segmentation, sample counts for classification.
struct ConfusionCounts {
  std::int64_t tp = 0, fp = 0, tn = 0, fn = 0;

  std::int64_t total() const { return tp + fp + tn + fn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    tn += o.tn;
    fn += o.fn;
    return *this;
  }
  bool operator==(const ConfusionCounts&) const = default;
};

/// Binarizes `pred` at `threshold` (p >= threshold is lesion) and tallies against `gt`.
template <typename DP>
ConfusionCounts confusion_counts(const Eigen::MatrixBase<DP>& pred, const Mask& gt, double threshold = 0.5) {
  require_same_shape(pred, gt, "confusion_counts");
  ConfusionCounts c;
  for (Eigen::Index r = 0; r < pred.rows(); ++r) {
    for (Eigen::Index col = 0; col < pred.cols(); ++col) {
      const bool p = static_cast<double>(pred(r, col)) >= threshold;
      const bool y = gt(r, col) != 0;
      if (p && y) ++c.tp;
      else if (p) ++c.fp;
      else if (y) ++c.fn;
      else ++c.tn;
    }
  }
  return c;
}

// Empty denominators score 1 (e.g. both masks empty is perfect agreement).
double jaccard(const ConfusionCounts& c);
double dice_coef(const ConfusionCounts& c);
double pixel_accuracy(const ConfusionCounts& c);
double sensitivity(const ConfusionCounts& c);
double specificity(const ConfusionCounts& c);

struct SegMetrics {
  double ja = 0, di = 0, ac = 0, se = 0, sp = 0;
};

SegMetrics seg_metrics(const ConfusionCounts& c);

/// Per-image metrics, their mean (the headline numbers) and a pooled-count variant.
struct SegReport {
  std::vector<std::string> ids;
  std::vector<SegMetrics> per_image;
  SegMetrics mean;
  SegMetrics pooled;
};

SegReport segmentation_report(const std::vector<std::string>& ids, const std::vector<Grid<float>>& preds,
                              const std::vector<Mask>& gts, double threshold = 0.5);

/// Area under the ROC curve: P(score_pos > score_neg) + 0.5 * P(tie).
double roc_auc(std::span<const double> scores, std::span<const int> labels);

struct BinaryTaskReport {
  int positive_class = 0;
  double auc = 0, ac = 0, se = 0, sp = 0;
};

struct ClsReport {
  std::vector<BinaryTaskReport> tasks;
  double average_auc = 0;
  double accuracy = 0;  // multi-class argmax accuracy
};

/// One-vs-rest report; decisions by argmax with ties to the lowest class index.
BinaryTaskReport classification_report(const Grid<double>& probs, std::span<const int> labels, int positive_class);

ClsReport classification_summary(const Grid<double>& probs, std::span<const int> labels,
                                 const std::vector<int>& positive_classes);

/// Multi-class argmax accuracy.
double argmax_accuracy(const Grid<double>& probs, std::span<const int> labels);

}  // namespace mbseg
