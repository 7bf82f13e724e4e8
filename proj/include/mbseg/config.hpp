#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "mbseg/data.hpp"
#include "mbseg/losses.hpp"
#include "mbseg/networks.hpp"
#include "mbseg/training.hpp"

namespace mbseg {

/// Where samples come from and how they are split.
struct DataConfig {
  std::string source = "synthetic";  // synthetic | isic
  SyntheticConfig synthetic;
  std::string seg_root;
  std::string seg_manifest;  // empty: every image under seg_root/images
  std::string cls_root;
  std::string cls_labels = "labels.csv";
  std::vector<std::string> class_names;  // empty: the synthetic class names
  int seg_val = 50;
  int seg_test = 50;
  int cls_val = 50;
  int cls_test = 50;
  double train_fraction_seg = 1.0;
  double train_fraction_cls = 1.0;
};

struct CamConfig {
  bool all_classes = false;
  bool use_ground_truth_class = false;
  bool binarize_masks = false;  // transfer thresholded coarse masks instead of probabilities
};

struct FineTuneConfig {
  std::string pretrained;  // output directory of a completed pipeline
  int num_folds = 4;
  double val_fraction = 0.2;  // of the training folds, used for checkpoint selection
};

struct SweepConfig {
  std::string parameter = "k_hard";
  std::vector<double> values;  // empty: the default grid of the parameter
};

struct PipelineConfig {
  DataConfig data;
  BackboneSpec backbone;
  SegLossConfig loss;
  OptimConfig optim;
  AugmentationConfig augment;
  bool augment_enabled = true;
  CamConfig cam;
  bool freeze_encoder = false;
  bool no_mask = false;
  double threshold = 0.5;
  std::uint64_t seed = 0;
  std::string output_dir = "runs/default";
  FineTuneConfig fine_tune;
  SweepConfig sweep;
  std::vector<std::string> compare_losses{"wce", "dice", "focal", "hybrid"};
  int overlay_samples = 4;

  PipelineConfig();
  /// Throws ConfigError naming the offending key.
  void validate() const;

  InputOptions input() const { return {augment, augment_enabled}; }
  SegTrainOptions seg_options() const;
  ClsTrainOptions cls_options(int num_classes) const;
  CamOptions cam_options() const;
};

SegLossKind parse_loss_kind(const std::string& name);
std::string loss_kind_name(SegLossKind kind);

nlohmann::json config_to_json(const PipelineConfig& cfg);
/// Strict: every key must exist in the default tree with a compatible type.
PipelineConfig config_from_json(const nlohmann::json& j);

/// Recursively overlays `patch` onto `base`; unknown keys and type changes throw ConfigError.
void merge_checked(nlohmann::json& base, const nlohmann::json& patch, const std::string& path = "");

/// Applies "a.b.c=value"; the value is parsed as JSON, falling back to a plain string.
void apply_override(nlohmann::json& tree, const std::string& assignment);

/// defaults < file < overrides, then validated.
PipelineConfig load_config(const std::filesystem::path& file, const std::vector<std::string>& overrides);

/// Default tree with one line per key, for --help.
std::string config_schema_text();

}  // namespace mbseg
