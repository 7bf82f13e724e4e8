#include "mbseg/config.hpp"

#include <fstream>
#include <sstream>

#include "mbseg/io.hpp"
#include "mbseg/serialization.hpp"

namespace mbseg {

using nlohmann::json;

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SyntheticConfig, num_seg, num_cls, image_size, num_classes,
                                                lesion_axis_min, lesion_axis_max, distractor_density, noise_level,
                                                background_shift, seed)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(DataConfig, source, synthetic, seg_root, seg_manifest, cls_root,
                                                cls_labels, class_names, seg_val, seg_test, cls_val, cls_test,
                                                train_fraction_seg, train_fraction_cls)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(OptimConfig, learning_rate, beta1, beta2, weight_decay,
                                                batch_size_seg, batch_size_cls, max_epochs, early_stop_patience)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(AugmentationConfig, crop_scale_min, crop_scale_max, rotation_degrees,
                                                shear_radians, shift_pixels, zoom_factor, zoom_probability, whitening,
                                                horizontal_flip, vertical_flip, target_h, target_w)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(CamConfig, all_classes, use_ground_truth_class, binarize_masks)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(FineTuneConfig, pretrained, num_folds, val_fraction)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SweepConfig, parameter, values)

PipelineConfig::PipelineConfig() {
  // Desk-scale defaults: 64 x 64 synthetic images, shift range scaled from 224 px.
  augment.target_h = augment.target_w = data.synthetic.image_size;
  augment.shift_pixels = 6.0;
}

SegLossKind parse_loss_kind(const std::string& name) {
  if (name == "hybrid") return SegLossKind::Hybrid;
  if (name == "dice") return SegLossKind::Dice;
  if (name == "wce") return SegLossKind::WeightedCrossEntropy;
  if (name == "focal") return SegLossKind::Focal;
  throw ConfigError("loss.kind: unknown loss '" + name + "' (expected hybrid, dice, wce or focal)");
}

std::string loss_kind_name(SegLossKind kind) {
  switch (kind) {
    case SegLossKind::Hybrid: return "hybrid";
    case SegLossKind::Dice: return "dice";
    case SegLossKind::WeightedCrossEntropy: return "wce";
    case SegLossKind::Focal: return "focal";
  }
  return "hybrid";
}

void PipelineConfig::validate() const {
  backbone.validate();
  if (backbone.input_channels != 3) throw ConfigError("backbone.input_channels must be 3 (RGB segmenter input)");
  loss.hybrid.validate();
  if (!(loss.focal_gamma >= 0)) throw ConfigError("loss.focal_gamma must be >= 0");
  if (!(loss.focal_alpha > 0)) throw ConfigError("loss.focal_alpha must be > 0");
  if (!(loss.wce_weights.lesion > 0 && loss.wce_weights.background > 0)) {
    throw ConfigError("loss.wce_lesion and loss.wce_background must be > 0");
  }
  optim.validate();
  augment.validate();
  if (data.source != "synthetic" && data.source != "isic") {
    throw ConfigError("data.source must be 'synthetic' or 'isic'");
  }
  if (data.source == "synthetic") {
    data.synthetic.validate();
    if (!data.class_names.empty() && static_cast<int>(data.class_names.size()) != data.synthetic.num_classes) {
      throw ConfigError("data.class_names must list data.synthetic.num_classes names");
    }
    if (data.seg_val + data.seg_test >= data.synthetic.num_seg) {
      throw ConfigError("data.seg_val + data.seg_test must leave training samples");
    }
    if (data.cls_val + data.cls_test >= data.synthetic.num_cls) {
      throw ConfigError("data.cls_val + data.cls_test must leave training samples");
    }
  } else {
    if (data.seg_root.empty()) throw ConfigError("data.seg_root is required for isic data");
    if (data.cls_root.empty()) throw ConfigError("data.cls_root is required for isic data");
    if (data.class_names.size() < 2) throw ConfigError("data.class_names needs at least 2 classes for isic data");
  }
  if (data.seg_val < 1 || data.cls_val < 1) throw ConfigError("data.seg_val and data.cls_val must be >= 1");
  if (data.seg_test < 0 || data.cls_test < 0) throw ConfigError("data.seg_test and data.cls_test must be >= 0");
  for (const auto& [key, f] : {std::pair{"data.train_fraction_seg", data.train_fraction_seg},
                               std::pair{"data.train_fraction_cls", data.train_fraction_cls}}) {
    if (!(f > 0.0 && f <= 1.0)) throw ConfigError(std::string(key) + " must lie in (0,1]");
  }
  if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("threshold must lie in (0,1)");
  if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
  if (fine_tune.num_folds < 2) throw ConfigError("fine_tune.num_folds must be >= 2");
  if (!(fine_tune.val_fraction > 0.0 && fine_tune.val_fraction < 1.0)) {
    throw ConfigError("fine_tune.val_fraction must lie in (0,1)");
  }
  static const std::vector<std::string> params{"k_hard", "margin", "lambda_weight", "train_fraction_seg",
                                               "train_fraction_cls"};
  if (std::find(params.begin(), params.end(), sweep.parameter) == params.end()) {
    throw ConfigError("sweep.parameter: unknown parameter '" + sweep.parameter + "'");
  }
  if (compare_losses.empty()) throw ConfigError("compare_losses must name at least one loss");
  for (const auto& l : compare_losses) parse_loss_kind(l);
  if (overlay_samples < 0) throw ConfigError("overlay_samples must be >= 0");
}

SegTrainOptions PipelineConfig::seg_options() const {
  SegTrainOptions o;
  o.spec = backbone;
  o.loss = loss;
  o.optim = optim;
  o.input = input();
  o.seed = seed;
  o.freeze_encoder = freeze_encoder;
  o.threshold = threshold;
  return o;
}

ClsTrainOptions PipelineConfig::cls_options(int num_classes) const {
  ClsTrainOptions o;
  o.spec = backbone;
  o.spec.input_channels = 4;
  o.num_classes = num_classes;
  o.optim = optim;
  o.input = input();
  o.seed = seed;
  o.no_mask = no_mask;
  return o;
}

CamOptions PipelineConfig::cam_options() const {
  CamOptions c;
  c.all_classes = cam.all_classes;
  return c;
}

json config_to_json(const PipelineConfig& cfg) {
  json loss = cfg.loss.hybrid;
  loss["kind"] = loss_kind_name(cfg.loss.kind);
  loss["wce_lesion"] = cfg.loss.wce_weights.lesion;
  loss["wce_background"] = cfg.loss.wce_weights.background;
  loss["focal_gamma"] = cfg.loss.focal_gamma;
  loss["focal_alpha"] = cfg.loss.focal_alpha;
  return json{
      {"data", cfg.data},
      {"backbone", cfg.backbone},
      {"loss", loss},
      {"optim", cfg.optim},
      {"augment", cfg.augment},
      {"augment_enabled", cfg.augment_enabled},
      {"cam", cfg.cam},
      {"freeze_encoder", cfg.freeze_encoder},
      {"no_mask", cfg.no_mask},
      {"threshold", cfg.threshold},
      {"seed", cfg.seed},
      {"output_dir", cfg.output_dir},
      {"fine_tune", cfg.fine_tune},
      {"sweep", cfg.sweep},
      {"compare_losses", cfg.compare_losses},
      {"overlay_samples", cfg.overlay_samples},
  };
}

namespace {

bool is_integer(const json& v) { return v.is_number_integer() || v.is_number_unsigned(); }

std::string type_label(const json& v) {
  if (is_integer(v)) return "integer";
  if (v.is_number()) return "number";
  return v.type_name();
}

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

}  // namespace

void merge_checked(json& base, const json& patch, const std::string& path) {
  if (base.is_object()) {
    if (!patch.is_object()) throw ConfigError((path.empty() ? "config" : path) + ": expected an object");
    for (const auto& [key, value] : patch.items()) {
      const auto it = base.find(key);
      if (it == base.end()) throw ConfigError("unknown config key '" + join(path, key) + "'");
      merge_checked(*it, value, join(path, key));
    }
    return;
  }
  bool ok = false;
  if (is_integer(base)) {
    ok = is_integer(patch) && !(base.is_number_unsigned() && patch.is_number_integer() && patch.get<std::int64_t>() < 0);
  } else if (base.is_number()) {
    ok = patch.is_number();
  } else {
    ok = base.type() == patch.type();
  }
  if (!ok) {
    throw ConfigError("config key '" + path + "': expected " + type_label(base) + ", got " + type_label(patch));
  }
  if (base.is_number_float()) {
    base = patch.get<double>();
  } else {
    base = patch;
  }
}

PipelineConfig config_from_json(const json& j) {
  json tree = config_to_json(PipelineConfig{});
  merge_checked(tree, j);
  PipelineConfig cfg;
  try {
    cfg.data = tree.at("data").get<DataConfig>();
    cfg.backbone = tree.at("backbone").get<BackboneSpec>();
    const auto& loss = tree.at("loss");
    cfg.loss.hybrid = loss.get<HybridLossParams>();
    cfg.loss.kind = parse_loss_kind(loss.at("kind").get<std::string>());
    cfg.loss.wce_weights.lesion = loss.at("wce_lesion").get<double>();
    cfg.loss.wce_weights.background = loss.at("wce_background").get<double>();
    cfg.loss.focal_gamma = loss.at("focal_gamma").get<double>();
    cfg.loss.focal_alpha = loss.at("focal_alpha").get<double>();
    cfg.optim = tree.at("optim").get<OptimConfig>();
    cfg.augment = tree.at("augment").get<AugmentationConfig>();
    cfg.augment_enabled = tree.at("augment_enabled").get<bool>();
    cfg.cam = tree.at("cam").get<CamConfig>();
    cfg.freeze_encoder = tree.at("freeze_encoder").get<bool>();
    cfg.no_mask = tree.at("no_mask").get<bool>();
    cfg.threshold = tree.at("threshold").get<double>();
    cfg.seed = tree.at("seed").get<std::uint64_t>();
    cfg.output_dir = tree.at("output_dir").get<std::string>();
    cfg.fine_tune = tree.at("fine_tune").get<FineTuneConfig>();
    cfg.sweep = tree.at("sweep").get<SweepConfig>();
    cfg.compare_losses = tree.at("compare_losses").get<std::vector<std::string>>();
    cfg.overlay_samples = tree.at("overlay_samples").get<int>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return cfg;
}

void apply_override(json& tree, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' must look like key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::parse_error&) {
    value = text;
  }
  json patch = value;
  std::vector<std::string> parts;
  std::stringstream ss(key);
  for (std::string part; std::getline(ss, part, '.');) {
    if (part.empty()) throw ConfigError("override key '" + key + "' is malformed");
    parts.push_back(part);
  }
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = json{{*it, patch}};
  merge_checked(tree, patch);
}

PipelineConfig load_config(const std::filesystem::path& file, const std::vector<std::string>& overrides) {
  json tree = config_to_json(PipelineConfig{});
  if (!file.empty()) {
    if (!std::filesystem::exists(file)) throw ConfigError("config file not found: " + file.string());
    json from_file;
    try {
      from_file = json::parse(io::read_text(file));
    } catch (const json::parse_error& e) {
      throw ConfigError("config file " + file.string() + ": " + e.what());
    }
    merge_checked(tree, from_file);
  }
  for (const auto& o : overrides) apply_override(tree, o);
  PipelineConfig cfg = config_from_json(tree);
  cfg.validate();
  return cfg;
}

namespace {
void schema_lines(const json& node, const std::string& path, std::ostringstream& out) {
  if (node.is_object()) {
    for (const auto& [key, value] : node.items()) schema_lines(value, join(path, key), out);
    return;
  }
  out << "  " << path << " (" << type_label(node) << ") = " << node.dump() << '\n';
}
}  // namespace

std::string config_schema_text() {
  std::ostringstream out;
  schema_lines(config_to_json(PipelineConfig{}), "", out);
  return out.str();
}

}  // namespace mbseg
