#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mbseg/cam.hpp"
#include "mbseg/checkpoint.hpp"
#include "mbseg/data.hpp"
#include "mbseg/losses.hpp"
#include "mbseg/metrics.hpp"

namespace mbseg {

/// Adam settings, batch sizes and stopping rule.
struct OptimConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.0;
  int batch_size_seg = 16;
  int batch_size_cls = 32;
  int max_epochs = 500;
  int early_stop_patience = 30;

  void validate() const;
};

/// Per-epoch training loss and validation metric.
struct TrainingCurve {
  std::vector<int> epoch;
  std::vector<double> train_loss;
  std::vector<double> val_metric;
};

struct TrainResult {
  Checkpoint checkpoint;  // best validation epoch
  TrainingCurve curve;
};

/// Input handling shared by training and inference.
struct InputOptions {
  AugmentationConfig augment;
  bool augment_enabled = true;  // training only; whitening applies everywhere when set
};

struct SegTrainOptions {
  BackboneSpec spec;
  SegLossConfig loss;
  OptimConfig optim;
  InputOptions input;
  std::uint64_t seed = 0;
  bool freeze_encoder = false;
  double threshold = 0.5;
  std::function<void(int, double, double)> on_epoch;  // (epoch, train loss, val metric)
};

struct ClsTrainOptions {
  BackboneSpec spec;  // input_channels must be 4
  int num_classes = 3;
  OptimConfig optim;
  InputOptions input;
  std::uint64_t seed = 0;
  bool no_mask = false;  // zero the mask channel (ablation)
  std::function<void(int, double, double)> on_epoch;
};

/// Localization maps for one image, one grid per map channel.
using MapStack = std::vector<Grid<float>>;

/// Trains a coarse segmenter on `train`, selecting the epoch with the best
/// validation Jaccard index. `init` continues from existing weights.
TrainResult train_coarse(const std::vector<SegSample>& train, const std::vector<SegSample>& val,
                         const SegTrainOptions& opt, const Checkpoint* init = nullptr);

/// Trains the mask-guided classifier on images with their soft coarse masks,
/// selecting the epoch with the best validation accuracy.
TrainResult train_classifier(const std::vector<ClsSample>& train, const std::vector<Grid<float>>& train_masks,
                             const std::vector<ClsSample>& val, const std::vector<Grid<float>>& val_masks,
                             const ClsTrainOptions& opt, const Checkpoint* init = nullptr);

/// Trains the enhanced segmenter; encoder and decoder start from `coarse`
/// (or from `init` when given), the E-layer is fresh.
TrainResult train_enhanced(const std::vector<SegSample>& train, const std::vector<MapStack>& train_maps,
                           const std::vector<SegSample>& val, const std::vector<MapStack>& val_maps,
                           const Checkpoint& coarse, const SegTrainOptions& opt, const Checkpoint* init = nullptr);

/// Eval-mode preprocessing: resize to the target size, whiten when enabled.
Tensor<float> prepare_input(const Tensor<float>& image, const InputOptions& opt);

/// Probability masks at each image's original resolution.
std::vector<Grid<float>> predict_masks(SegmentationNet<float>& net, const std::vector<Tensor<float>>& images,
                                       const InputOptions& opt, int batch_size = 16);
std::vector<Grid<float>> predict_enhanced(EnhancedNet<float>& net, const std::vector<Tensor<float>>& images,
                                          const std::vector<MapStack>& maps, const InputOptions& opt,
                                          int batch_size = 16);
/// Class probabilities, one row per image.
Grid<double> predict_classes(ClassifierNet<float>& net, const std::vector<Tensor<float>>& images,
                             const std::vector<Grid<float>>& masks, const InputOptions& opt, bool no_mask = false,
                             int batch_size = 32);
/// Localization maps (feature-grid resolution) for each image and its coarse mask.
std::vector<std::vector<LocalizationMap>> generate_maps(ClassifierNet<float>& net,
                                                        const std::vector<Tensor<float>>& images,
                                                        const std::vector<Grid<float>>& masks,
                                                        const InputOptions& opt, const CamOptions& cam);

template <typename T>
std::vector<Tensor<float>> images_of(const std::vector<T>& samples) {
  std::vector<Tensor<float>> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.image);
  return out;
}

inline std::vector<Mask> masks_of(const std::vector<SegSample>& samples) {
  std::vector<Mask> out;
  for (const auto& s : samples) out.push_back(s.mask);
  return out;
}

inline std::vector<std::string> ids_of(const auto& samples) {
  std::vector<std::string> out;
  for (const auto& s : samples) out.push_back(s.id);
  return out;
}

}  // namespace mbseg
