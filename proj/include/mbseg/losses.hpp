#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "mbseg/types.hpp"

namespace mbseg {

/// Weights of the hybrid segmentation loss: dice + lambda_weight * rank.
struct HybridLossParams {
  double lambda_weight = 0.05;
  int k_hard = 30;
  double margin = 0.3;
  double epsilon = 1.0;  // Dice smooth factor

  void validate() const {
    if (!(lambda_weight >= 0.0)) throw ConfigError("loss.lambda_weight must be >= 0");
    if (k_hard < 1) throw ConfigError("loss.k_hard must be >= 1");
    if (!(margin >= 0.0 && margin <= 1.0)) throw ConfigError("loss.margin must lie in [0,1]");
    if (!(epsilon > 0.0)) throw ConfigError("loss.epsilon must be > 0");
  }
};

/// Lesion/background weights for the weighted cross-entropy baseline.
struct ClassWeights {
  double lesion = 1.0;
  double background = 1.0;
};

/// Lower clamp applied to probabilities before taking logs.
inline constexpr double kProbabilityFloor = 1e-7;

/// Loss value together with its gradient with respect to every prediction.
template <typename Scalar>
struct LossEval {
  Scalar value = Scalar(0);
  Grid<Scalar> gradient;
};

/// Per-class top-K hardest pixels of one image.
///
/// Indices are row-major pixel indices. Both lists are ordered by descending
/// error |p - y|, ties broken by ascending pixel index.
template <typename Scalar>
struct HardPixelSet {
  std::vector<Eigen::Index> background_indices;
  std::vector<Scalar> background_values;
  std::vector<Eigen::Index> lesion_indices;
  std::vector<Scalar> lesion_values;
};

namespace detail {

template <typename DP>
void check_loss_inputs(const Eigen::MatrixBase<DP>& pred, const Mask& gt, const char* what) {
  require_same_shape(pred, gt, what);
  require_probabilities(pred, what);
  require_binary(gt, what);
}

template <typename Scalar>
Scalar clamp_probability(Scalar p, double floor) {
  return std::clamp(p, Scalar(floor), Scalar(1) - Scalar(floor));
}

// Keeps the k entries of `idx` with the largest error, sorted.
template <typename ErrorFn>
void top_k_by_error(std::vector<Eigen::Index>& idx, std::size_t k, ErrorFn error) {
  auto harder = [&](Eigen::Index a, Eigen::Index b) {
    const auto ea = error(a);
    const auto eb = error(b);
    if (ea != eb) return ea > eb;
    return a < b;
  };
  if (idx.size() > k) {
    std::nth_element(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), harder);
    idx.resize(k);
  }
  std::sort(idx.begin(), idx.end(), harder);
}

}  // namespace detail

/// Dice loss 1 - 2*sum(p*y) / (sum(p + y) + epsilon).
template <typename DP>
LossEval<typename DP::Scalar> dice_loss_eval(const Eigen::MatrixBase<DP>& pred, const Mask& gt, double epsilon) {
  using Scalar = typename DP::Scalar;
  detail::check_loss_inputs(pred, gt, "dice_loss");
  if (!(epsilon > 0.0)) throw ContractViolation("dice_loss: epsilon must be > 0");

  const Grid<Scalar> y = gt.cast<Scalar>();
  const Scalar intersection = (pred.derived().array() * y.array()).sum();
  const Scalar denom = pred.sum() + y.sum() + Scalar(epsilon);

  LossEval<Scalar> out;
  out.value = Scalar(1) - Scalar(2) * intersection / denom;
  out.gradient = (Scalar(2) * intersection - Scalar(2) * denom * y.array()) / (denom * denom);
  return out;
}

template <typename DP>
typename DP::Scalar dice_loss(const Eigen::MatrixBase<DP>& pred, const Mask& gt, double epsilon) {
  return dice_loss_eval(pred, gt, epsilon).value;
}

/// Online hard-pixel mining: per class, the k pixels with the largest |p - y|.
///
/// A class with fewer than k pixels contributes all of them; an absent class
/// yields an empty list.
template <typename DP>
HardPixelSet<typename DP::Scalar> select_hard_pixels(const Eigen::MatrixBase<DP>& pred, const Mask& gt, int k_hard) {
  using Scalar = typename DP::Scalar;
  require_same_shape(pred, gt, "select_hard_pixels");
  if (k_hard < 1) throw ContractViolation("select_hard_pixels: k_hard must be >= 1");

  const Eigen::Index cols = pred.cols();
  std::vector<Eigen::Index> background, lesion;
  for (Eigen::Index i = 0; i < pred.size(); ++i) {
    (gt(i / cols, i % cols) ? lesion : background).push_back(i);
  }
  auto value_at = [&](Eigen::Index i) { return Scalar(pred(i / cols, i % cols)); };

  const auto k = static_cast<std::size_t>(k_hard);
  // Background error is p, lesion error is 1 - p.
  detail::top_k_by_error(background, k, [&](Eigen::Index i) { return value_at(i); });
  detail::top_k_by_error(lesion, k, [&](Eigen::Index i) { return Scalar(1) - value_at(i); });

  HardPixelSet<Scalar> out;
  out.background_indices = std::move(background);
  out.lesion_indices = std::move(lesion);
  for (auto i : out.background_indices) out.background_values.push_back(value_at(i));
  for (auto i : out.lesion_indices) out.lesion_values.push_back(value_at(i));
  return out;
}

/// Pairwise hinge over hard pixels: mean over pairs of max(0, H0_i - H1_j + margin).
///
/// Selection is treated as constant; gradients flow through the selected values.
template <typename DP>
LossEval<typename DP::Scalar> rank_loss_eval(const Eigen::MatrixBase<DP>& pred, const Mask& gt, int k_hard,
                                             double margin) {
  using Scalar = typename DP::Scalar;
  detail::check_loss_inputs(pred, gt, "rank_loss");
  const auto hard = select_hard_pixels(pred, gt, k_hard);

  LossEval<Scalar> out;
  out.gradient = Grid<Scalar>::Zero(pred.rows(), pred.cols());
  const std::size_t nb = hard.background_values.size();
  const std::size_t nl = hard.lesion_values.size();
  if (nb == 0 || nl == 0) return out;

  const Scalar scale = Scalar(1) / Scalar(nb * nl);
  Scalar total = 0;
  std::vector<int> bg_active(nb, 0), ls_active(nl, 0);
  for (std::size_t i = 0; i < nb; ++i) {
    for (std::size_t j = 0; j < nl; ++j) {
      const Scalar hinge = hard.background_values[i] - hard.lesion_values[j] + Scalar(margin);
      if (hinge > Scalar(0)) {
        total += hinge;
        ++bg_active[i];
        ++ls_active[j];
      }
    }
  }
  out.value = total * scale;
  Scalar* g = out.gradient.data();
  for (std::size_t i = 0; i < nb; ++i) g[hard.background_indices[i]] += Scalar(bg_active[i]) * scale;
  for (std::size_t j = 0; j < nl; ++j) g[hard.lesion_indices[j]] -= Scalar(ls_active[j]) * scale;
  return out;
}

template <typename DP>
typename DP::Scalar rank_loss(const Eigen::MatrixBase<DP>& pred, const Mask& gt, int k_hard, double margin) {
  return rank_loss_eval(pred, gt, k_hard, margin).value;
}

template <typename DP>
LossEval<typename DP::Scalar> hybrid_loss_eval(const Eigen::MatrixBase<DP>& pred, const Mask& gt,
                                               const HybridLossParams& params) {
  using Scalar = typename DP::Scalar;
  auto dice = dice_loss_eval(pred, gt, params.epsilon);
  const auto rank = rank_loss_eval(pred, gt, params.k_hard, params.margin);
  dice.value += Scalar(params.lambda_weight) * rank.value;
  dice.gradient += Scalar(params.lambda_weight) * rank.gradient;
  return dice;
}

template <typename DP>
typename DP::Scalar hybrid_loss(const Eigen::MatrixBase<DP>& pred, const Mask& gt, const HybridLossParams& params) {
  return hybrid_loss_eval(pred, gt, params).value;
}

/// Pixel-averaged weighted binary cross-entropy.
///
/// Probabilities are clamped to [floor, 1 - floor]; the gradient is evaluated
/// at the clamped value.
template <typename DP>
LossEval<typename DP::Scalar> weighted_cross_entropy_eval(const Eigen::MatrixBase<DP>& pred, const Mask& gt,
                                                          ClassWeights weights, double floor = kProbabilityFloor) {
  using Scalar = typename DP::Scalar;
  detail::check_loss_inputs(pred, gt, "weighted_cross_entropy");
  if (!(weights.lesion > 0.0 && weights.background > 0.0)) {
    throw ContractViolation("weighted_cross_entropy: class weights must be positive");
  }
  const Scalar inv_n = Scalar(1) / Scalar(pred.size());
  LossEval<Scalar> out;
  out.gradient.resize(pred.rows(), pred.cols());
  Scalar total = 0;
  for (Eigen::Index r = 0; r < pred.rows(); ++r) {
    for (Eigen::Index c = 0; c < pred.cols(); ++c) {
      const Scalar p = detail::clamp_probability(Scalar(pred(r, c)), floor);
      if (gt(r, c)) {
        total += -Scalar(weights.lesion) * std::log(p);
        out.gradient(r, c) = -Scalar(weights.lesion) / p * inv_n;
      } else {
        total += -Scalar(weights.background) * std::log(Scalar(1) - p);
        out.gradient(r, c) = Scalar(weights.background) / (Scalar(1) - p) * inv_n;
      }
    }
  }
  out.value = total * inv_n;
  return out;
}

template <typename DP>
typename DP::Scalar weighted_cross_entropy_loss(const Eigen::MatrixBase<DP>& pred, const Mask& gt,
                                                ClassWeights weights, double floor = kProbabilityFloor) {
  return weighted_cross_entropy_eval(pred, gt, weights, floor).value;
}

template <typename DP>
typename DP::Scalar cross_entropy_loss(const Eigen::MatrixBase<DP>& pred, const Mask& gt,
                                       double floor = kProbabilityFloor) {
  return weighted_cross_entropy_eval(pred, gt, ClassWeights{}, floor).value;
}

/// Pixel-averaged focal loss -alpha * (1 - pt)^gamma * ln(pt).
template <typename DP>
LossEval<typename DP::Scalar> focal_loss_eval(const Eigen::MatrixBase<DP>& pred, const Mask& gt, double gamma,
                                              double alpha, double floor = kProbabilityFloor) {
  using Scalar = typename DP::Scalar;
  detail::check_loss_inputs(pred, gt, "focal_loss");
  if (!(gamma >= 0.0)) throw ContractViolation("focal_loss: gamma must be >= 0");
  const Scalar inv_n = Scalar(1) / Scalar(pred.size());
  const Scalar a = Scalar(alpha);
  const Scalar g = Scalar(gamma);
  LossEval<Scalar> out;
  out.gradient.resize(pred.rows(), pred.cols());
  Scalar total = 0;
  for (Eigen::Index r = 0; r < pred.rows(); ++r) {
    for (Eigen::Index c = 0; c < pred.cols(); ++c) {
      const Scalar p = detail::clamp_probability(Scalar(pred(r, c)), floor);
      const bool lesion = gt(r, c) != 0;
      const Scalar pt = lesion ? p : Scalar(1) - p;
      const Scalar log_pt = std::log(pt);
      const Scalar q = Scalar(1) - pt;
      total += -a * std::pow(q, g) * log_pt;
      // d/dpt of -a q^g ln(pt) = a g q^(g-1) ln(pt) - a q^g / pt
      Scalar d_pt = -a * std::pow(q, g) / pt;
      if (gamma != 0.0) d_pt += a * g * std::pow(q, g - Scalar(1)) * log_pt;
      out.gradient(r, c) = (lesion ? d_pt : -d_pt) * inv_n;
    }
  }
  out.value = total * inv_n;
  return out;
}

template <typename DP>
typename DP::Scalar focal_loss(const Eigen::MatrixBase<DP>& pred, const Mask& gt, double gamma, double alpha,
                               double floor = kProbabilityFloor) {
  return focal_loss_eval(pred, gt, gamma, alpha, floor).value;
}

/// Segmentation loss selector used by the training loops.
enum class SegLossKind { Hybrid, Dice, WeightedCrossEntropy, Focal };

struct SegLossConfig {
  SegLossKind kind = SegLossKind::Hybrid;
  HybridLossParams hybrid;
  ClassWeights wce_weights{};
  double focal_gamma = 2.0;
  double focal_alpha = 1.0;
};

template <typename DP>
LossEval<typename DP::Scalar> seg_loss_eval(const Eigen::MatrixBase<DP>& pred, const Mask& gt,
                                            const SegLossConfig& cfg) {
  switch (cfg.kind) {
    case SegLossKind::Hybrid: return hybrid_loss_eval(pred, gt, cfg.hybrid);
    case SegLossKind::Dice: return dice_loss_eval(pred, gt, cfg.hybrid.epsilon);
    case SegLossKind::WeightedCrossEntropy: return weighted_cross_entropy_eval(pred, gt, cfg.wce_weights);
    case SegLossKind::Focal: return focal_loss_eval(pred, gt, cfg.focal_gamma, cfg.focal_alpha);
  }
  throw ContractViolation("seg_loss_eval: unknown loss kind");
}

/// Batch loss: per-image losses averaged over the batch; gradient w.r.t. every prediction.
template <typename Scalar>
LossEval<Scalar> batch_seg_loss(const Tensor<Scalar>& pred, const std::vector<Mask>& gts, const SegLossConfig& cfg,
                                Tensor<Scalar>* grad) {
  if (pred.c() != 1 || static_cast<std::size_t>(pred.n()) != gts.size()) {
    throw ContractViolation("batch_seg_loss: expected N x 1 x H x W prediction and N masks");
  }
  LossEval<Scalar> out;
  if (grad) *grad = Tensor<Scalar>::zeros_like(pred);
  const Scalar inv_n = Scalar(1) / Scalar(pred.n());
  for (int i = 0; i < pred.n(); ++i) {
    const auto e = seg_loss_eval(pred.plane(i, 0), gts[static_cast<std::size_t>(i)], cfg);
    out.value += e.value * inv_n;
    if (grad) grad->plane(i, 0) = e.gradient * inv_n;
  }
  return out;
}

}  // namespace mbseg
