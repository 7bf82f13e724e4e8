#include "mbseg/pipeline.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>
#include <sstream>

#include "mbseg/io.hpp"

namespace mbseg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::array<const char*, 5> kStageNames{"train_coarse", "generate_masks", "train_classifier",
                                                 "generate_cams", "train_enhanced"};
constexpr const char* kCoarseDir = "checkpoints/coarse_sn";
constexpr const char* kClassifierDir = "checkpoints/mask_cn";
constexpr const char* kEnhancedDir = "checkpoints/enhanced_sn";
constexpr const char* kMasksDir = "masks";
constexpr const char* kCamsDir = "cams";

template <typename T>
std::vector<T> pick(const std::vector<T>& all, const std::vector<std::size_t>& idx) {
  std::vector<T> out;
  out.reserve(idx.size());
  for (const auto i : idx) out.push_back(all[i]);
  return out;
}

template <typename T>
std::vector<T> concat(std::vector<T> a, const std::vector<T>& b, const std::vector<T>& c = {}) {
  a.insert(a.end(), b.begin(), b.end());
  a.insert(a.end(), c.begin(), c.end());
  return a;
}

std::vector<int> labels_of(const std::vector<ClsSample>& s) {
  std::vector<int> out;
  for (const auto& x : s) out.push_back(x.label);
  return out;
}

std::string number_tag(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

}  // namespace

std::string stage_name(Stage s) { return kStageNames[static_cast<std::size_t>(s)]; }

Stage parse_stage(const std::string& name) {
  for (const auto s : kStages) {
    if (stage_name(s) == name) return s;
  }
  throw ConfigError("unknown stage '" + name + "'");
}

bool PipelineState::all_complete() const {
  return std::all_of(stages.begin(), stages.end(), [](const StageRecord& r) { return r.complete; });
}

json to_json(const PipelineState& s) {
  json stages = json::array();
  for (const auto st : kStages) {
    const auto& r = s.at(st);
    stages.push_back({{"name", stage_name(st)},
                      {"complete", r.complete},
                      {"artifact", r.artifact},
                      {"best_epoch", r.best_epoch},
                      {"metric", r.metric},
                      {"metric_name", r.metric_name}});
  }
  return {{"format", "mbseg-state"}, {"config", s.config}, {"stages", stages}};
}

PipelineState state_from_json(const json& j) {
  PipelineState s;
  try {
    if (j.value("format", "") != "mbseg-state") throw IoError("not a pipeline state file");
    s.config = j.at("config");
    for (const auto& r : j.at("stages")) {
      auto& rec = s.at(parse_stage(r.at("name").get<std::string>()));
      rec.complete = r.at("complete").get<bool>();
      rec.artifact = r.at("artifact").get<std::string>();
      rec.best_epoch = r.at("best_epoch").get<int>();
      rec.metric = r.at("metric").get<double>();
      rec.metric_name = r.at("metric_name").get<std::string>();
    }
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed pipeline state: ") + e.what());
  }
  return s;
}

// ---------------------------------------------------------------------------

std::vector<SegSample> Datasets::seg_all() const { return concat(seg_train, seg_val, seg_test); }
std::vector<ClsSample> Datasets::cls_all() const { return concat(cls_train, cls_val, cls_test); }

SplitIndices split_indices(std::size_t n, int val, int test, double train_fraction, std::uint64_t seed,
                           const std::string& key) {
  if (val < 0 || test < 0 || static_cast<std::size_t>(val) + static_cast<std::size_t>(test) >= n) {
    throw ConfigError("split '" + key + "': " + std::to_string(n) + " samples cannot hold " + std::to_string(val) +
                      " validation and " + std::to_string(test) + " test samples plus training data");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = Rng::keyed(seed, "split/" + key);
  rng.shuffle(order.begin(), order.end());
  SplitIndices s;
  const auto t = static_cast<std::size_t>(test), v = static_cast<std::size_t>(val);
  s.test.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(t));
  s.val.assign(order.begin() + static_cast<std::ptrdiff_t>(t), order.begin() + static_cast<std::ptrdiff_t>(t + v));
  const std::size_t remaining = n - t - v;
  const auto keep = std::max<std::size_t>(
      1, std::min(remaining, static_cast<std::size_t>(std::ceil(train_fraction * double(remaining) - 1e-9))));
  s.train.assign(order.begin() + static_cast<std::ptrdiff_t>(t + v),
                 order.begin() + static_cast<std::ptrdiff_t>(t + v + keep));
  for (auto* part : {&s.train, &s.val, &s.test}) std::sort(part->begin(), part->end());
  return s;
}

std::vector<std::vector<std::size_t>> fold_indices(std::size_t n, int folds, std::uint64_t seed,
                                                   const std::string& key) {
  if (folds < 2) throw ConfigError("fold count must be >= 2");
  if (n < static_cast<std::size_t>(folds)) {
    throw ConfigError("cannot split " + std::to_string(n) + " samples into " + std::to_string(folds) + " folds");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = Rng::keyed(seed, "folds/" + key);
  rng.shuffle(order.begin(), order.end());
  std::vector<std::vector<std::size_t>> out(static_cast<std::size_t>(folds));
  for (std::size_t i = 0; i < n; ++i) out[i % out.size()].push_back(order[i]);
  for (auto& f : out) std::sort(f.begin(), f.end());
  return out;
}

std::pair<std::vector<SegSample>, std::vector<ClsSample>> load_all_samples(const PipelineConfig& cfg,
                                                                           std::vector<std::string>* class_names) {
  std::pair<std::vector<SegSample>, std::vector<ClsSample>> out;
  std::vector<std::string> names = cfg.data.class_names;
  if (cfg.data.source == "synthetic") {
    if (names.empty()) names = synthetic_class_names(cfg.data.synthetic.num_classes);
    out = generate_synthetic_dataset(cfg.data.synthetic);
  } else {
    std::map<std::string, int> table;
    for (std::size_t i = 0; i < names.size(); ++i) table.emplace(names[i], static_cast<int>(i));
    const fs::path seg_root = cfg.data.seg_root, cls_root = cfg.data.cls_root;
    out.first = load_seg_dataset(seg_root, read_manifest(seg_root, cfg.data.seg_manifest));
    if (fs::exists(seg_root / "labels.csv")) {
      std::map<std::string, int> labels;
      for (const auto& [id, l] : read_labels(seg_root, "labels.csv", table)) labels[id] = l;
      for (auto& s : out.first) {
        const auto it = labels.find(s.id);
        if (it != labels.end()) s.label = it->second;
      }
    }
    out.second = load_cls_dataset(cls_root, cfg.data.cls_labels, table);
  }
  std::set<std::string> seen;
  for (const auto& s : out.first) {
    if (!seen.insert(s.id).second) throw IngestionError("duplicate segmentation sample id '" + s.id + "'");
  }
  seen.clear();
  for (const auto& s : out.second) {
    if (!seen.insert(s.id).second) throw IngestionError("duplicate classification sample id '" + s.id + "'");
    if (s.label < 0 || s.label >= static_cast<int>(names.size())) {
      throw IngestionError("sample '" + s.id + "': label out of range");
    }
  }
  if (class_names) *class_names = names;
  return out;
}

Datasets load_datasets(const PipelineConfig& cfg) {
  Datasets d;
  auto [seg, cls] = load_all_samples(cfg, &d.class_names);
  const auto& dc = cfg.data;
  const auto ss = split_indices(seg.size(), dc.seg_val, dc.seg_test, dc.train_fraction_seg, cfg.seed, "seg");
  d.seg_train = pick(seg, ss.train);
  d.seg_val = pick(seg, ss.val);
  d.seg_test = pick(seg, ss.test);
  const auto cs = split_indices(cls.size(), dc.cls_val, dc.cls_test, dc.train_fraction_cls, cfg.seed, "cls");
  d.cls_train = pick(cls, cs.train);
  d.cls_val = pick(cls, cs.val);
  d.cls_test = pick(cls, cs.test);
  return d;
}

// ---------------------------------------------------------------------------

void save_masks(const fs::path& dir, const std::vector<std::string>& ids, const std::vector<Grid<float>>& masks) {
  if (ids.size() != masks.size()) throw ContractViolation("save_masks: one mask per id required");
  io::ensure_directory(dir);
  json entries = json::array();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const std::string file = ids[i] + ".f32";
    io::write_grid(dir / file, masks[i]);
    entries.push_back({{"id", ids[i]}, {"rows", masks[i].rows()}, {"cols", masks[i].cols()}, {"file", file}});
  }
  io::write_text(dir / "manifest.json", json{{"format", "mbseg-masks"}, {"entries", entries}}.dump(2) + "\n");
}

MaskTable load_masks(const fs::path& dir) {
  MaskTable out;
  try {
    const json m = json::parse(io::read_text(dir / "manifest.json"));
    if (m.value("format", "") != "mbseg-masks") throw IoError(dir.string() + " is not a mask directory");
    for (const auto& e : m.at("entries")) {
      out.emplace(e.at("id").get<std::string>(), io::read_grid(dir / e.at("file").get<std::string>(),
                                                               e.at("rows").get<int>(), e.at("cols").get<int>()));
    }
  } catch (const json::exception& e) {
    throw IoError("malformed mask manifest in " + dir.string() + ": " + e.what());
  }
  return out;
}

void save_maps(const fs::path& dir, const std::vector<std::string>& ids,
               const std::vector<std::vector<LocalizationMap>>& maps) {
  if (ids.size() != maps.size()) throw ContractViolation("save_maps: one map stack per id required");
  io::ensure_directory(dir);
  json entries = json::array();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    json stack = json::array();
    for (std::size_t k = 0; k < maps[i].size(); ++k) {
      const auto& m = maps[i][k];
      const std::string file = ids[i] + "_" + std::to_string(k) + ".f32";
      io::write_grid(dir / file, m.values);
      stack.push_back({{"file", file},
                       {"rows", m.values.rows()},
                       {"cols", m.values.cols()},
                       {"source_class", m.source_class},
                       {"raw_min", m.raw_min},
                       {"raw_max", m.raw_max}});
    }
    entries.push_back({{"id", ids[i]}, {"maps", stack}});
  }
  io::write_text(dir / "manifest.json", json{{"format", "mbseg-cams"}, {"entries", entries}}.dump(2) + "\n");
}

MapTable load_maps(const fs::path& dir) {
  MapTable out;
  try {
    const json m = json::parse(io::read_text(dir / "manifest.json"));
    if (m.value("format", "") != "mbseg-cams") throw IoError(dir.string() + " is not a CAM directory");
    for (const auto& e : m.at("entries")) {
      std::vector<LocalizationMap> stack;
      for (const auto& s : e.at("maps")) {
        LocalizationMap lm;
        lm.values = io::read_grid(dir / s.at("file").get<std::string>(), s.at("rows").get<int>(), s.at("cols").get<int>());
        lm.source_class = s.at("source_class").get<int>();
        lm.raw_min = s.at("raw_min").get<double>();
        lm.raw_max = s.at("raw_max").get<double>();
        stack.push_back(std::move(lm));
      }
      out.emplace(e.at("id").get<std::string>(), std::move(stack));
    }
  } catch (const json::exception& e) {
    throw IoError("malformed CAM manifest in " + dir.string() + ": " + e.what());
  }
  return out;
}

ClsReport safe_cls_summary(const Grid<double>& probs, const std::vector<int>& labels, int num_classes) {
  ClsReport r;
  double auc_sum = 0.0;
  for (int c = 0; c < num_classes; ++c) {
    BinaryTaskReport t;
    try {
      t = classification_report(probs, labels, c);
    } catch (const UndefinedMetric&) {
      t = BinaryTaskReport{c, std::numeric_limits<double>::quiet_NaN(), 0, 0, 0};
      // AC/SE/SP stay meaningful even when AUC is not.
      ConfusionCounts cc;
      for (Eigen::Index i = 0; i < probs.rows(); ++i) {
        const bool p = argmax_lowest(probs.row(i)) == c, y = labels[static_cast<std::size_t>(i)] == c;
        if (p && y) ++cc.tp;
        else if (p) ++cc.fp;
        else if (y) ++cc.fn;
        else ++cc.tn;
      }
      t.ac = pixel_accuracy(cc);
      t.se = sensitivity(cc);
      t.sp = specificity(cc);
    }
    auc_sum += t.auc;
    r.tasks.push_back(t);
  }
  r.average_auc = num_classes > 0 ? auc_sum / num_classes : std::numeric_limits<double>::quiet_NaN();
  r.accuracy = argmax_accuracy(probs, labels);
  return r;
}

// ---------------------------------------------------------------------------
// Stage building blocks shared by the pipeline and fine-tuning.

namespace {

std::vector<Grid<float>> transfer_masks(SegmentationNet<float>& coarse, const std::vector<Tensor<float>>& images,
                                        const PipelineConfig& cfg) {
  auto masks = predict_masks(coarse, images, cfg.input(), cfg.optim.batch_size_seg);
  if (cfg.cam.binarize_masks) {
    for (auto& m : masks) m = (m.array() >= float(cfg.threshold)).cast<float>().matrix();
  }
  return masks;
}

std::vector<std::vector<LocalizationMap>> cams_for(ClassifierNet<float>& cls, const std::vector<SegSample>& samples,
                                                   const std::vector<Grid<float>>& masks, const PipelineConfig& cfg) {
  if (!cfg.cam.use_ground_truth_class) return generate_maps(cls, images_of(samples), masks, cfg.input(), cfg.cam_options());
  std::vector<std::vector<LocalizationMap>> out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].label < 0 || samples[i].label >= cls.num_classes()) {
      throw ConfigError("cam.use_ground_truth_class: sample '" + samples[i].id + "' has no class label");
    }
    CamOptions o = cfg.cam_options();
    o.forced_class = samples[i].label;
    auto m = generate_maps(cls, {samples[i].image}, {masks[i]}, cfg.input(), o);
    out.push_back(std::move(m.front()));
  }
  return out;
}

std::vector<MapStack> stacks_of(const std::vector<std::vector<LocalizationMap>>& maps) {
  std::vector<MapStack> out;
  for (const auto& v : maps) {
    MapStack s;
    for (const auto& m : v) s.push_back(m.values);
    out.push_back(std::move(s));
  }
  return out;
}

template <typename Table>
auto lookup(const Table& table, const std::string& id, const char* what) {
  const auto it = table.find(id);
  if (it == table.end()) throw IoError(std::string(what) + " missing for sample '" + id + "'");
  return it->second;
}

std::vector<Grid<float>> masks_for(const MaskTable& t, const std::vector<ClsSample>& s) {
  std::vector<Grid<float>> out;
  for (const auto& x : s) out.push_back(lookup(t, x.id, "coarse mask"));
  return out;
}

std::vector<MapStack> maps_for(const MapTable& t, const std::vector<SegSample>& s) {
  std::vector<MapStack> out;
  for (const auto& x : s) {
    MapStack st;
    for (const auto& m : lookup(t, x.id, "localization map")) st.push_back(m.values);
    out.push_back(std::move(st));
  }
  return out;
}

/// Test-split evaluation of the three networks.
FinalReports evaluate_networks(SegmentationNet<float>& coarse, ClassifierNet<float>& cls, EnhancedNet<float>& enhanced,
                               const std::vector<SegSample>& seg_test, const std::vector<MapStack>& seg_maps,
                               const std::vector<ClsSample>& cls_test, const std::vector<Grid<float>>& cls_masks,
                               const std::vector<std::string>& class_names, const PipelineConfig& cfg) {
  FinalReports r;
  r.class_names = class_names;
  const auto ids = ids_of(seg_test);
  const auto truth = masks_of(seg_test);
  const auto images = images_of(seg_test);
  r.coarse = segmentation_report(ids, predict_masks(coarse, images, cfg.input(), cfg.optim.batch_size_seg), truth,
                                 cfg.threshold);
  r.enhanced = segmentation_report(
      ids, predict_enhanced(enhanced, images, seg_maps, cfg.input(), cfg.optim.batch_size_seg), truth, cfg.threshold);
  r.cls_ids = ids_of(cls_test);
  r.cls_labels = labels_of(cls_test);
  r.cls_probs = predict_classes(cls, images_of(cls_test), cls_masks, cfg.input(), cfg.no_mask, cfg.optim.batch_size_cls);
  r.cls = safe_cls_summary(r.cls_probs, r.cls_labels, static_cast<int>(class_names.size()));
  return r;
}

}  // namespace

// ---------------------------------------------------------------------------

json run_identity(const PipelineConfig& cfg) {
  json j = config_to_json(cfg);
  for (const char* k : {"output_dir", "fine_tune", "sweep", "compare_losses", "overlay_samples"}) j.erase(k);
  return j;
}

Pipeline::Pipeline(PipelineConfig cfg, LogFn log) : cfg_(std::move(cfg)), dir_(cfg_.output_dir), log_(std::move(log)) {
  cfg_.validate();
  io::ensure_directory(dir_);
  if (fs::exists(dir_ / "state.json")) {
    state_ = state_from_json(json::parse(io::read_text(dir_ / "state.json")));
    PipelineConfig stored;
    try {
      stored = config_from_json(state_.config);
    } catch (const ConfigError&) {
      throw ConfigError(dir_.string() + " holds a run with an unreadable config");
    }
    if (run_identity(stored) != run_identity(cfg_)) {
      throw ConfigError(dir_.string() + " holds a run with a different configuration; choose another output directory");
    }
  }
  state_.config = config_to_json(cfg_);
  io::write_text(dir_ / "config.json", state_.config.dump(2) + "\n");
  save_state();
}

const Datasets& Pipeline::datasets() {
  if (!data_) data_ = load_datasets(cfg_);
  return *data_;
}

void Pipeline::save_state() const { io::write_text(dir_ / "state.json", to_json(state_).dump(2) + "\n"); }

void Pipeline::log(const std::string& msg) const {
  if (log_) log_(msg);
}

std::function<void(int, double, double)> Pipeline::epoch_logger(const std::string& stage) const {
  if (!log_) return {};
  return [this, stage](int epoch, double loss, double metric) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "%s epoch %d: loss %.5f, val %.4f", stage.c_str(), epoch, loss, metric);
    log_(buf);
  };
}

void Pipeline::require(Stage s) const {
  const auto k = static_cast<std::size_t>(s);
  for (std::size_t i = 0; i < k; ++i) {
    const auto& r = state_.stages[i];
    if (!r.complete || !fs::exists(dir_ / r.artifact)) {
      throw ConfigError("stage " + stage_name(s) + " needs stage " + kStageNames[i] + " to be complete first");
    }
  }
}

void Pipeline::run_stage(Stage s) {
  require(s);
  for (auto k = static_cast<std::size_t>(s); k < state_.stages.size(); ++k) state_.stages[k] = StageRecord{};
  save_state();
  log("stage " + stage_name(s));
  switch (s) {
    case Stage::TrainCoarse: train_coarse_stage(); break;
    case Stage::GenerateMasks: generate_masks_stage(); break;
    case Stage::TrainClassifier: train_classifier_stage(); break;
    case Stage::GenerateCams: generate_cams_stage(); break;
    case Stage::TrainEnhanced: train_enhanced_stage(); break;
  }
  state_.at(s).complete = true;
  save_state();
}

void Pipeline::run(bool resume) {
  for (const auto s : kStages) {
    const auto& r = state_.at(s);
    if (resume && r.complete && fs::exists(dir_ / r.artifact)) {
      log("stage " + stage_name(s) + " already complete");
      continue;
    }
    resume = false;  // everything downstream of a rerun stage is rerun too
    run_stage(s);
  }
}

namespace {
void record_training(StageRecord& rec, const TrainResult& r, const std::string& artifact) {
  rec.artifact = artifact;
  rec.best_epoch = r.checkpoint.epoch;
  rec.metric = r.checkpoint.metric;
  rec.metric_name = r.checkpoint.metric_name;
}

void write_curve(const fs::path& dir, const std::string& stage, const TrainingCurve& c, const std::string& metric) {
  io::write_text(dir / "curves" / (stage + ".csv"), curve_csv(c));
  std::vector<double> xs(c.epoch.begin(), c.epoch.end());
  plot_lines(dir / "curves" / (stage + ".png"), stage, "epoch", "value",
             {{"train loss", xs, c.train_loss}, {metric, xs, c.val_metric}});
}
}  // namespace

void Pipeline::train_coarse_stage() {
  const auto& d = datasets();
  auto opt = cfg_.seg_options();
  opt.on_epoch = epoch_logger("train_coarse");
  const auto r = train_coarse(d.seg_train, d.seg_val, opt);
  save_checkpoint(r.checkpoint, dir_ / kCoarseDir);
  io::ensure_directory(dir_ / "curves");
  write_curve(dir_, "train_coarse", r.curve, "val JA");
  record_training(state_.at(Stage::TrainCoarse), r, kCoarseDir);
}

void Pipeline::generate_masks_stage() {
  const auto& d = datasets();
  auto coarse = coarse_from_checkpoint(load_checkpoint(dir_ / kCoarseDir));
  const auto all = d.cls_all();
  save_masks(dir_ / kMasksDir, ids_of(all), transfer_masks(coarse, images_of(all), cfg_));
  state_.at(Stage::GenerateMasks).artifact = kMasksDir;
}

void Pipeline::train_classifier_stage() {
  const auto& d = datasets();
  const auto masks = load_masks(dir_ / kMasksDir);
  auto opt = cfg_.cls_options(d.num_classes());
  opt.on_epoch = epoch_logger("train_classifier");
  const auto r = train_classifier(d.cls_train, masks_for(masks, d.cls_train), d.cls_val, masks_for(masks, d.cls_val), opt);
  save_checkpoint(r.checkpoint, dir_ / kClassifierDir);
  io::ensure_directory(dir_ / "curves");
  write_curve(dir_, "train_classifier", r.curve, "val accuracy");
  record_training(state_.at(Stage::TrainClassifier), r, kClassifierDir);
}

void Pipeline::generate_cams_stage() {
  const auto& d = datasets();
  auto coarse = coarse_from_checkpoint(load_checkpoint(dir_ / kCoarseDir));
  auto cls = classifier_from_checkpoint(load_checkpoint(dir_ / kClassifierDir));
  const auto all = d.seg_all();
  const auto masks = transfer_masks(coarse, images_of(all), cfg_);
  save_maps(dir_ / kCamsDir, ids_of(all), cams_for(cls, all, masks, cfg_));
  state_.at(Stage::GenerateCams).artifact = kCamsDir;
}

void Pipeline::train_enhanced_stage() {
  const auto& d = datasets();
  const auto coarse = load_checkpoint(dir_ / kCoarseDir);
  const auto maps = load_maps(dir_ / kCamsDir);
  auto opt = cfg_.seg_options();
  opt.on_epoch = epoch_logger("train_enhanced");
  const auto r = train_enhanced(d.seg_train, maps_for(maps, d.seg_train), d.seg_val, maps_for(maps, d.seg_val), coarse, opt);
  save_checkpoint(r.checkpoint, dir_ / kEnhancedDir);
  io::ensure_directory(dir_ / "curves");
  write_curve(dir_, "train_enhanced", r.curve, "val JA");
  record_training(state_.at(Stage::TrainEnhanced), r, kEnhancedDir);
}

FinalReports Pipeline::evaluate() {
  for (const auto s : kStages) {
    if (!state_.complete(s)) throw ConfigError("evaluation needs every stage complete; " + stage_name(s) + " is not");
  }
  const auto& d = datasets();
  auto coarse = coarse_from_checkpoint(load_checkpoint(dir_ / kCoarseDir));
  auto cls = classifier_from_checkpoint(load_checkpoint(dir_ / kClassifierDir));
  auto enhanced = enhanced_from_checkpoint(load_checkpoint(dir_ / kEnhancedDir));
  const auto masks = load_masks(dir_ / kMasksDir);
  const auto maps = load_maps(dir_ / kCamsDir);
  return evaluate_networks(coarse, cls, enhanced, d.seg_test, maps_for(maps, d.seg_test), d.cls_test,
                           masks_for(masks, d.cls_test), d.class_names, cfg_);
}

void Pipeline::emit(const FinalReports& r, int count) {
  const fs::path out = dir_ / "reports";
  emit_reports(r, out);
  const auto& d = datasets();
  const int n = std::min<int>(count, static_cast<int>(d.seg_test.size()));
  if (n <= 0) return;
  auto coarse = coarse_from_checkpoint(load_checkpoint(dir_ / kCoarseDir));
  auto enhanced = enhanced_from_checkpoint(load_checkpoint(dir_ / kEnhancedDir));
  const auto maps = load_maps(dir_ / kCamsDir);
  const std::vector<SegSample> shown(d.seg_test.begin(), d.seg_test.begin() + n);
  const auto images = images_of(shown);
  const auto stacks = maps_for(maps, shown);
  const auto cp = predict_masks(coarse, images, cfg_.input());
  const auto ep = predict_enhanced(enhanced, images, stacks, cfg_.input());
  for (int i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    write_overlay_panel(out / "overlays" / (shown[k].id + ".png"), shown[k].image, cp[k], stacks[k].front(), ep[k],
                        shown[k].mask);
  }
}

// ---------------------------------------------------------------------------
// Sweeps

std::vector<double> default_sweep_values(const std::string& parameter) {
  if (parameter == "k_hard") return {10, 30, 50, 100, 150};
  if (parameter == "margin") return {0.1, 0.2, 0.3, 0.4};
  if (parameter == "lambda_weight") return {0.01, 0.05, 0.1, 0.5};
  if (parameter == "train_fraction_seg" || parameter == "train_fraction_cls") return {0.25, 0.5, 0.75, 1.0};
  throw ConfigError("sweep: unknown parameter '" + parameter + "'");
}

SweepResult run_sweep(const PipelineConfig& cfg, const std::string& parameter, std::vector<double> values,
                      const LogFn& log) {
  if (values.empty()) values = default_sweep_values(parameter);
  SweepResult out;
  out.parameter = parameter;
  const bool loss_param = parameter == "k_hard" || parameter == "margin" || parameter == "lambda_weight";
  if (loss_param) {
    out.metric_name = "val_ja";
  } else if (parameter == "train_fraction_seg") {
    out.metric_name = "enhanced_test_ja";
    out.secondary_name = "coarse_test_ja";
  } else if (parameter == "train_fraction_cls") {
    out.metric_name = "test_average_auc";
    out.secondary_name = "test_accuracy";
  } else {
    throw ConfigError("sweep: unknown parameter '" + parameter + "'");
  }
  std::optional<Datasets> data;
  for (const double v : values) {
    SweepRow row;
    row.value = v;
    row.secondary = std::numeric_limits<double>::quiet_NaN();
    if (log) log("sweep " + parameter + " = " + number_tag(v));
    try {
      PipelineConfig c = cfg;
      if (loss_param) {
        if (parameter == "k_hard") {
          if (v != std::floor(v)) throw ConfigError("sweep: k_hard values must be integers");
          c.loss.hybrid.k_hard = static_cast<int>(v);
        } else if (parameter == "margin") {
          c.loss.hybrid.margin = v;
        } else {
          c.loss.hybrid.lambda_weight = v;
        }
        c.validate();
        if (!data) data = load_datasets(cfg);
        row.metric = train_coarse(data->seg_train, data->seg_val, c.seg_options()).checkpoint.metric;
      } else {
        (parameter == "train_fraction_seg" ? c.data.train_fraction_seg : c.data.train_fraction_cls) = v;
        c.output_dir = (fs::path(cfg.output_dir) / "sweep" / (parameter + "_" + number_tag(v))).string();
        Pipeline p(c, log);
        if (parameter == "train_fraction_seg") {
          p.run(true);
          const auto r = p.evaluate();
          row.metric = r.enhanced.mean.ja;
          row.secondary = r.coarse.mean.ja;
        } else {
          for (const auto s : {Stage::TrainCoarse, Stage::GenerateMasks, Stage::TrainClassifier}) {
            if (!p.state().complete(s)) p.run_stage(s);
          }
          const auto& d = p.datasets();
          auto cls = classifier_from_checkpoint(load_checkpoint(p.dir() / kClassifierDir));
          const auto masks = load_masks(p.dir() / kMasksDir);
          const auto probs = predict_classes(cls, images_of(d.cls_test), masks_for(masks, d.cls_test), c.input(),
                                             c.no_mask, c.optim.batch_size_cls);
          const auto rep = safe_cls_summary(probs, labels_of(d.cls_test), d.num_classes());
          row.metric = rep.average_auc;
          row.secondary = rep.accuracy;
        }
      }
    } catch (const std::exception& e) {
      row.ok = false;
      row.error = e.what();
      row.metric = std::numeric_limits<double>::quiet_NaN();
      if (log) log("sweep cell failed: " + row.error);
    }
    out.rows.push_back(row);
  }
  return out;
}

std::string sweep_csv(const SweepResult& r) {
  std::ostringstream out;
  out << r.parameter << ',' << r.metric_name;
  if (!r.secondary_name.empty()) out << ',' << r.secondary_name;
  out << ",status\n";
  char buf[64];
  const auto g = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::isfinite(v) ? std::string(buf) : std::string("nan");
  };
  for (const auto& row : r.rows) {
    out << number_tag(row.value) << ',' << g(row.metric);
    if (!r.secondary_name.empty()) out << ',' << g(row.secondary);
    std::string err = row.error;
    std::replace(err.begin(), err.end(), ',', ';');
    std::replace(err.begin(), err.end(), '\n', ' ');
    out << ',' << (row.ok ? "ok" : "failed: " + err) << '\n';
  }
  return out.str();
}

void emit_sweep(const SweepResult& r, const fs::path& dir) {
  io::ensure_directory(dir);
  io::write_text(dir / ("sweep_" + r.parameter + ".csv"), sweep_csv(r));
  std::vector<PlotSeries> series{{r.metric_name, {}, {}}};
  if (!r.secondary_name.empty()) series.push_back({r.secondary_name, {}, {}});
  for (const auto& row : r.rows) {
    series[0].x.push_back(row.value);
    series[0].y.push_back(row.metric);
    if (series.size() > 1) {
      series[1].x.push_back(row.value);
      series[1].y.push_back(row.secondary);
    }
  }
  plot_lines(dir / ("sweep_" + r.parameter + ".png"), r.metric_name + " vs " + r.parameter, r.parameter,
             r.metric_name, series);
}

std::vector<LossRow> compare_losses(const PipelineConfig& cfg, const std::vector<std::string>& losses,
                                    const LogFn& log) {
  const Datasets d = load_datasets(cfg);
  std::vector<LossRow> rows;
  for (const auto& name : losses) {
    LossRow row;
    row.loss = name;
    if (log) log("compare-losses: " + name);
    try {
      PipelineConfig c = cfg;
      c.loss.kind = parse_loss_kind(name);
      const auto r = train_coarse(d.seg_train, d.seg_val, c.seg_options());
      auto net = coarse_from_checkpoint(r.checkpoint);
      row.val_ja = r.checkpoint.metric;
      row.test = segmentation_report(ids_of(d.seg_test), predict_masks(net, images_of(d.seg_test), c.input()),
                                     masks_of(d.seg_test), c.threshold)
                     .mean;
    } catch (const std::exception& e) {
      row.ok = false;
      row.error = e.what();
      const double nan = std::numeric_limits<double>::quiet_NaN();
      row.test = {nan, nan, nan, nan, nan};
      if (log) log("compare-losses cell failed: " + row.error);
    }
    rows.push_back(row);
  }
  return rows;
}

std::string loss_table(const std::vector<LossRow>& rows) {
  std::vector<std::pair<std::string, SegMetrics>> t;
  for (const auto& r : rows) t.emplace_back(r.ok ? r.loss : r.loss + " (failed)", r.test);
  return seg_summary_table(t);
}

// ---------------------------------------------------------------------------
// Fine-tuning

std::vector<std::vector<std::size_t>> fine_tune_folds(std::size_t n, const PipelineConfig& cfg, const std::string& key) {
  return fold_indices(n, cfg.fine_tune.num_folds, cfg.seed, key);
}

namespace {

struct FoldSplit {
  std::vector<std::size_t> train, val, test;
};

FoldSplit fold_split(const std::vector<std::vector<std::size_t>>& folds, std::size_t k, double val_fraction,
                     std::uint64_t seed, const std::string& key) {
  FoldSplit s;
  s.test = folds[k];
  std::vector<std::size_t> rest;
  for (std::size_t f = 0; f < folds.size(); ++f) {
    if (f != k) rest.insert(rest.end(), folds[f].begin(), folds[f].end());
  }
  std::sort(rest.begin(), rest.end());
  if (rest.size() < 2) throw ConfigError("fine-tune: too few samples to carve a validation set");
  Rng rng = Rng::keyed(seed, "fine_tune/val/" + key, k);
  rng.shuffle(rest.begin(), rest.end());
  const auto nv = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(val_fraction * double(rest.size()))), 1,
                                          rest.size() - 1);
  s.val.assign(rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(nv));
  s.train.assign(rest.begin() + static_cast<std::ptrdiff_t>(nv), rest.end());
  std::sort(s.val.begin(), s.val.end());
  std::sort(s.train.begin(), s.train.end());
  return s;
}

SegMetrics mean_metrics(const std::vector<SegMetrics>& ms) {
  SegMetrics m;
  if (ms.empty()) return m;
  for (const auto& x : ms) {
    m.ja += x.ja;
    m.di += x.di;
    m.ac += x.ac;
    m.se += x.se;
    m.sp += x.sp;
  }
  const double n = static_cast<double>(ms.size());
  return {m.ja / n, m.di / n, m.ac / n, m.se / n, m.sp / n};
}

}  // namespace

FineTuneResult fine_tune(const PipelineConfig& cfg, const LogFn& log) {
  if (cfg.fine_tune.pretrained.empty()) throw ConfigError("fine_tune.pretrained must name a completed run directory");
  const fs::path pre = cfg.fine_tune.pretrained;
  if (!fs::exists(pre / "state.json")) throw ConfigError("fine_tune.pretrained: no run found in " + pre.string());
  const auto pre_state = state_from_json(json::parse(io::read_text(pre / "state.json")));
  if (!pre_state.all_complete()) throw ConfigError("fine_tune.pretrained: the run in " + pre.string() + " is incomplete");
  const auto coarse_ck = load_checkpoint(pre / kCoarseDir);
  const auto cls_ck = load_checkpoint(pre / kClassifierDir);
  const auto enh_ck = load_checkpoint(pre / kEnhancedDir);
  if (coarse_ck.spec != cfg.backbone) throw ConfigError("fine-tune: backbone differs from the pretrained run");

  std::vector<std::string> class_names;
  auto [seg, cls] = load_all_samples(cfg, &class_names);
  if (cls_ck.num_classes != static_cast<int>(class_names.size())) {
    throw ConfigError("fine-tune: class count differs from the pretrained classifier");
  }
  const auto seg_folds = fine_tune_folds(seg.size(), cfg, "seg");
  const auto cls_folds = fine_tune_folds(cls.size(), cfg, "cls");

  FineTuneResult result;
  std::vector<SegMetrics> zs, ft;
  double auc_zs = 0, auc_ft = 0;
  for (std::size_t k = 0; k < seg_folds.size(); ++k) {
    if (log) log("fine-tune fold " + std::to_string(k + 1) + "/" + std::to_string(seg_folds.size()));
    const auto ss = fold_split(seg_folds, k, cfg.fine_tune.val_fraction, cfg.seed, "seg");
    const auto cs = fold_split(cls_folds, k, cfg.fine_tune.val_fraction, cfg.seed, "cls");
    const auto seg_train = pick(seg, ss.train), seg_val = pick(seg, ss.val), seg_test = pick(seg, ss.test);
    const auto cls_train = pick(cls, cs.train), cls_val = pick(cls, cs.val), cls_test = pick(cls, cs.test);

    FoldReport fr;
    fr.fold = static_cast<int>(k);
    fr.seg_test_ids = ids_of(seg_test);

    {  // zero-shot: the pretrained networks as they are
      auto coarse = coarse_from_checkpoint(coarse_ck);
      auto classifier = classifier_from_checkpoint(cls_ck);
      auto enhanced = enhanced_from_checkpoint(enh_ck);
      const auto seg_masks = transfer_masks(coarse, images_of(seg_test), cfg);
      const auto maps = stacks_of(cams_for(classifier, seg_test, seg_masks, cfg));
      const auto cls_masks = transfer_masks(coarse, images_of(cls_test), cfg);
      const auto r = evaluate_networks(coarse, classifier, enhanced, seg_test, maps, cls_test, cls_masks, class_names, cfg);
      fr.zero_shot = r.enhanced;
      fr.cls_zero_shot = r.cls;
    }
    {  // fine-tuned: all three networks continue from the pretrained weights
      auto seg_opt = cfg.seg_options();
      const auto coarse_r = train_coarse(seg_train, seg_val, seg_opt, &coarse_ck);
      auto coarse = coarse_from_checkpoint(coarse_r.checkpoint);
      const auto cls_all = concat(cls_train, cls_val, cls_test);
      const auto all_masks = transfer_masks(coarse, images_of(cls_all), cfg);
      const std::vector<Grid<float>> m_train(all_masks.begin(), all_masks.begin() + std::ptrdiff_t(cls_train.size()));
      const std::vector<Grid<float>> m_val(all_masks.begin() + std::ptrdiff_t(cls_train.size()),
                                           all_masks.begin() + std::ptrdiff_t(cls_train.size() + cls_val.size()));
      const std::vector<Grid<float>> m_test(all_masks.begin() + std::ptrdiff_t(cls_train.size() + cls_val.size()),
                                            all_masks.end());
      const auto cls_r = train_classifier(cls_train, m_train, cls_val, m_val,
                                          cfg.cls_options(static_cast<int>(class_names.size())), &cls_ck);
      auto classifier = classifier_from_checkpoint(cls_r.checkpoint);
      const auto seg_all = concat(seg_train, seg_val, seg_test);
      const auto maps = stacks_of(cams_for(classifier, seg_all, transfer_masks(coarse, images_of(seg_all), cfg), cfg));
      const std::vector<MapStack> mp_train(maps.begin(), maps.begin() + std::ptrdiff_t(seg_train.size()));
      const std::vector<MapStack> mp_val(maps.begin() + std::ptrdiff_t(seg_train.size()),
                                         maps.begin() + std::ptrdiff_t(seg_train.size() + seg_val.size()));
      const std::vector<MapStack> mp_test(maps.begin() + std::ptrdiff_t(seg_train.size() + seg_val.size()), maps.end());
      const auto enh_r = train_enhanced(seg_train, mp_train, seg_val, mp_val, coarse_r.checkpoint, seg_opt, &enh_ck);
      auto enhanced = enhanced_from_checkpoint(enh_r.checkpoint);
      const auto r = evaluate_networks(coarse, classifier, enhanced, seg_test, mp_test, cls_test, m_test, class_names, cfg);
      fr.fine_tuned = r.enhanced;
      fr.cls_fine_tuned = r.cls;
    }
    zs.push_back(fr.zero_shot.mean);
    ft.push_back(fr.fine_tuned.mean);
    auc_zs += fr.cls_zero_shot.average_auc;
    auc_ft += fr.cls_fine_tuned.average_auc;
    result.folds.push_back(std::move(fr));
  }
  result.mean_zero_shot = mean_metrics(zs);
  result.mean_fine_tuned = mean_metrics(ft);
  result.mean_auc_zero_shot = auc_zs / double(seg_folds.size());
  result.mean_auc_fine_tuned = auc_ft / double(seg_folds.size());
  return result;
}

std::string fine_tune_table(const FineTuneResult& r) {
  std::vector<std::pair<std::string, SegMetrics>> rows;
  for (const auto& f : r.folds) {
    rows.emplace_back("fold " + std::to_string(f.fold + 1) + " zero-shot", f.zero_shot.mean);
    rows.emplace_back("fold " + std::to_string(f.fold + 1) + " tuned", f.fine_tuned.mean);
  }
  rows.emplace_back("mean zero-shot", r.mean_zero_shot);
  rows.emplace_back("mean fine-tuned", r.mean_fine_tuned);
  std::ostringstream out;
  out << seg_summary_table(rows);
  char buf[128];
  std::snprintf(buf, sizeof buf, "classification average AUC: zero-shot %.2f, fine-tuned %.2f\n",
                100.0 * r.mean_auc_zero_shot, 100.0 * r.mean_auc_fine_tuned);
  out << buf;
  return out.str();
}

}  // namespace mbseg
