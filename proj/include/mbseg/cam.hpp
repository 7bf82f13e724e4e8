#pragma once

#include <algorithm>
#include <vector>

#include "mbseg/networks.hpp"

namespace mbseg {

/// Class activation map normalized to [0,1]; raw_min/raw_max keep the
/// pre-normalization range.
struct LocalizationMap {
  Grid<float> values;
  int source_class = 0;
  double raw_min = 0.0;
  double raw_max = 0.0;

  bool operator==(const LocalizationMap& o) const {
    return source_class == o.source_class && raw_min == o.raw_min && raw_max == o.raw_max &&
           values.rows() == o.values.rows() && values.cols() == o.values.cols() && values == o.values;
  }
};

/// Min-max normalization; a constant map becomes all zeros.
template <typename Derived>
LocalizationMap normalize_map(const Eigen::MatrixBase<Derived>& raw, int source_class) {
  LocalizationMap m;
  m.source_class = source_class;
  m.raw_min = static_cast<double>(raw.minCoeff());
  m.raw_max = static_cast<double>(raw.maxCoeff());
  const double range = m.raw_max - m.raw_min;
  if (!(range > 0.0)) {
    m.values = Grid<float>::Zero(raw.rows(), raw.cols());
    return m;
  }
  m.values = ((raw.template cast<double>().array() - m.raw_min) / range).template cast<float>().matrix();
  m.values = m.values.cwiseMax(0.0f).cwiseMin(1.0f);
  return m;
}

/// Raw weighted sum over channels: sum_k weights(k, class) * features[k].
template <typename Scalar, typename DW>
Grid<Scalar> weighted_feature_sum(const Tensor<Scalar>& features, int sample, const Eigen::MatrixBase<DW>& weights,
                                  int class_index) {
  if (class_index < 0 || class_index >= weights.cols()) {
    throw ContractViolation("cam: class index " + std::to_string(class_index) + " out of range");
  }
  if (weights.rows() != features.c()) throw ContractViolation("cam: weight rows must equal feature channels");
  const Vector<Scalar> w = weights.col(class_index).template cast<Scalar>();
  Vector<Scalar> flat = features.sample(sample).transpose() * w;
  return Eigen::Map<Grid<Scalar>>(flat.data(), features.h(), features.w());
}

/// CAM of `class_index` for a single 4-channel input (N = 1), at feature-grid resolution.
template <typename Scalar>
LocalizationMap compute_cam(ClassifierNet<Scalar>& classifier, const Tensor<Scalar>& input4, int class_index) {
  if (class_index < 0 || class_index >= classifier.num_classes()) {
    throw ContractViolation("compute_cam: class index " + std::to_string(class_index) + " out of range");
  }
  const auto feats = classifier.features(input4, Mode::Eval);
  return normalize_map(weighted_feature_sum(feats, 0, classifier.fc_weights(), class_index), class_index);
}

/// Image (1 x 3 x H x W) and mask (H x W) stacked into a 1 x 4 x H x W input.
template <typename Scalar, typename DM>
Tensor<Scalar> stack_image_mask(const Tensor<Scalar>& image, const Eigen::MatrixBase<DM>& mask) {
  if (image.c() != 3 || image.n() != 1 || mask.rows() != image.h() || mask.cols() != image.w()) {
    throw ContractViolation("stack_image_mask: expected 1 x 3 x H x W image and H x W mask");
  }
  Tensor<Scalar> x(1, 4, image.h(), image.w());
  x.sample(0).topRows(3) = image.sample(0);
  x.plane(0, 3) = mask.template cast<Scalar>();
  return x;
}

/// Index of the largest entry; ties go to the lowest index.
template <typename Derived>
int argmax_lowest(const Eigen::MatrixBase<Derived>& row) {
  int best = 0;
  for (Eigen::Index i = 1; i < row.size(); ++i) {
    if (row(i) > row(best)) best = static_cast<int>(i);
  }
  return best;
}

struct CamOptions {
  bool all_classes = false;  // stack one map per class instead of the argmax map
  int forced_class = -1;     // >= 0 uses this class instead of the prediction
};

/// Localization maps for one sample: image + coarse mask through the classifier,
/// CAM of the predicted class (or of every class).
template <typename Scalar, typename DM>
std::vector<LocalizationMap> cam_for_sample(ClassifierNet<Scalar>& classifier, const Tensor<Scalar>& image,
                                            const Eigen::MatrixBase<DM>& coarse_mask, const CamOptions& opt = {}) {
  const auto input = stack_image_mask(image, coarse_mask);
  const auto feats = classifier.features(input, Mode::Eval);
  const Grid<Scalar> probs = nn::softmax_rows(classifier.logits_from_features(feats, Mode::Eval));
  std::vector<LocalizationMap> maps;
  if (opt.all_classes) {
    for (int c = 0; c < classifier.num_classes(); ++c) {
      maps.push_back(normalize_map(weighted_feature_sum(feats, 0, classifier.fc_weights(), c), c));
    }
    return maps;
  }
  const int cls = opt.forced_class >= 0 ? opt.forced_class : argmax_lowest(probs.row(0));
  maps.push_back(normalize_map(weighted_feature_sum(feats, 0, classifier.fc_weights(), cls), cls));
  return maps;
}

/// Bilinear (align-corners off) resize clamped to [0,1].
inline LocalizationMap resize_map(const LocalizationMap& map, int target_h, int target_w) {
  if (target_h < 1 || target_w < 1) throw ContractViolation("resize_map: target size must be positive");
  LocalizationMap out = map;
  out.values = nn::resize_bilinear(map.values, target_h, target_w).cwiseMax(0.0f).cwiseMin(1.0f);
  return out;
}

}  // namespace mbseg
