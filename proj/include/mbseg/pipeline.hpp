#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mbseg/config.hpp"
#include "mbseg/report.hpp"

namespace mbseg {

enum class Stage { TrainCoarse = 0, GenerateMasks, TrainClassifier, GenerateCams, TrainEnhanced };

inline constexpr std::array<Stage, 5> kStages{Stage::TrainCoarse, Stage::GenerateMasks, Stage::TrainClassifier,
                                              Stage::GenerateCams, Stage::TrainEnhanced};

std::string stage_name(Stage s);
Stage parse_stage(const std::string& name);

struct StageRecord {
  bool complete = false;
  std::string artifact;  // relative to the run directory
  int best_epoch = 0;
  double metric = 0.0;
  std::string metric_name;
  bool operator==(const StageRecord&) const = default;
};

/// On-disk progress of a run (state.json).
struct PipelineState {
  nlohmann::json config;
  std::array<StageRecord, 5> stages;

  StageRecord& at(Stage s) { return stages[static_cast<std::size_t>(s)]; }
  const StageRecord& at(Stage s) const { return stages[static_cast<std::size_t>(s)]; }
  bool complete(Stage s) const { return at(s).complete; }
  bool all_complete() const;
};

nlohmann::json to_json(const PipelineState& s);
PipelineState state_from_json(const nlohmann::json& j);

// ---------------------------------------------------------------------------
// Data

struct Datasets {
  std::vector<SegSample> seg_train, seg_val, seg_test;
  std::vector<ClsSample> cls_train, cls_val, cls_test;
  std::vector<std::string> class_names;

  int num_classes() const { return static_cast<int>(class_names.size()); }
  std::vector<SegSample> seg_all() const;
  std::vector<ClsSample> cls_all() const;
};

struct SplitIndices {
  std::vector<std::size_t> train, val, test;
};

/// Seeded shuffle, then test, val and train in that order; train keeps
/// ceil(fraction * remaining) samples. Each part is sorted.
SplitIndices split_indices(std::size_t n, int val, int test, double train_fraction, std::uint64_t seed,
                           const std::string& key);

/// Disjoint folds covering 0..n-1, sizes differing by at most one.
std::vector<std::vector<std::size_t>> fold_indices(std::size_t n, int folds, std::uint64_t seed,
                                                   const std::string& key);

/// Every sample of the configured source, unsplit.
std::pair<std::vector<SegSample>, std::vector<ClsSample>> load_all_samples(const PipelineConfig& cfg,
                                                                           std::vector<std::string>* class_names);
Datasets load_datasets(const PipelineConfig& cfg);

// ---------------------------------------------------------------------------
// Artifacts: one float32 grid per sample plus a manifest.json

using MaskTable = std::map<std::string, Grid<float>>;
using MapTable = std::map<std::string, std::vector<LocalizationMap>>;

void save_masks(const std::filesystem::path& dir, const std::vector<std::string>& ids,
                const std::vector<Grid<float>>& masks);
MaskTable load_masks(const std::filesystem::path& dir);
void save_maps(const std::filesystem::path& dir, const std::vector<std::string>& ids,
               const std::vector<std::vector<LocalizationMap>>& maps);
MapTable load_maps(const std::filesystem::path& dir);

/// One-vs-rest report over every class; an undefined AUC (single-class split) is NaN.
ClsReport safe_cls_summary(const Grid<double>& probs, const std::vector<int>& labels, int num_classes);

// ---------------------------------------------------------------------------
// Five-stage run

using LogFn = std::function<void(const std::string&)>;

class Pipeline {
 public:
  /// Opens (or creates) the run directory `cfg.output_dir` and echoes the
  /// effective config there. An existing state written with a different
  /// config is rejected.
  explicit Pipeline(PipelineConfig cfg, LogFn log = {});

  const PipelineConfig& config() const { return cfg_; }
  const PipelineState& state() const { return state_; }
  std::filesystem::path dir() const { return dir_; }
  const Datasets& datasets();

  /// Runs one stage; every upstream stage must be complete. Downstream
  /// stages are marked stale.
  void run_stage(Stage s);
  /// Runs the stages in order; with `resume`, completed stages are skipped.
  void run(bool resume = true);
  /// Test-split reports from the persisted artifacts.
  FinalReports evaluate();
  /// Writes reports, curve plots and `count` overlay panels under dir()/reports.
  void emit(const FinalReports& r, int count);

 private:
  void require(Stage s) const;
  void save_state() const;
  void log(const std::string& msg) const;
  std::function<void(int, double, double)> epoch_logger(const std::string& stage) const;

  void train_coarse_stage();
  void generate_masks_stage();
  void train_classifier_stage();
  void generate_cams_stage();
  void train_enhanced_stage();

  PipelineConfig cfg_;
  std::filesystem::path dir_;
  PipelineState state_;
  std::optional<Datasets> data_;
  LogFn log_;
};

/// Config keys that do not change what the five stages compute.
nlohmann::json run_identity(const PipelineConfig& cfg);

// ---------------------------------------------------------------------------
// Experiments

struct SweepRow {
  double value = 0;
  double metric = 0;
  double secondary = 0;
  bool ok = true;
  std::string error;
};

struct SweepResult {
  std::string parameter;
  std::string metric_name;
  std::string secondary_name;
  std::vector<SweepRow> rows;
};

std::vector<double> default_sweep_values(const std::string& parameter);

/// k_hard / margin / lambda_weight: coarse-SN best validation JA.
/// train_fraction_seg: full run per value, enhanced-SN test JA (coarse-SN secondary).
/// train_fraction_cls: stages 1-3 per value, mask-CN test average AUC (accuracy secondary).
/// A failing cell is recorded and the sweep continues.
SweepResult run_sweep(const PipelineConfig& cfg, const std::string& parameter, std::vector<double> values,
                      const LogFn& log = {});
std::string sweep_csv(const SweepResult& r);
void emit_sweep(const SweepResult& r, const std::filesystem::path& dir);

struct LossRow {
  std::string loss;
  SegMetrics test;
  double val_ja = 0;
  bool ok = true;
  std::string error;
};

/// Coarse-SN trained once per loss with shared seed and data; test-split metrics.
std::vector<LossRow> compare_losses(const PipelineConfig& cfg, const std::vector<std::string>& losses,
                                    const LogFn& log = {});
std::string loss_table(const std::vector<LossRow>& rows);

struct FoldReport {
  int fold = 0;
  std::vector<std::string> seg_test_ids;
  SegReport zero_shot;
  SegReport fine_tuned;
  ClsReport cls_zero_shot;
  ClsReport cls_fine_tuned;
};

struct FineTuneResult {
  std::vector<FoldReport> folds;
  SegMetrics mean_zero_shot;
  SegMetrics mean_fine_tuned;
  double mean_auc_zero_shot = 0;
  double mean_auc_fine_tuned = 0;
};

/// Fold assignment for `n` samples; throws ConfigError when n < folds.
std::vector<std::vector<std::size_t>> fine_tune_folds(std::size_t n, const PipelineConfig& cfg, const std::string& key);

/// Cross-validated fine-tuning of a completed run (cfg.fine_tune.pretrained) on
/// the configured data; the untouched pretrained networks give the zero-shot reports.
FineTuneResult fine_tune(const PipelineConfig& cfg, const LogFn& log = {});
std::string fine_tune_table(const FineTuneResult& r);

}  // namespace mbseg
