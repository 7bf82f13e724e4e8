// Command-line front end for the mbseg pipeline.
#include <cstdlib>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "mbseg/io.hpp"
#include "mbseg/pipeline.hpp"

namespace fs = std::filesystem;
using namespace mbseg;

namespace {

enum ExitCode { kOk = 0, kInternal = 1, kUsage = 2, kConfig = 3, kIngestion = 4, kTraining = 5, kIo = 6 };

constexpr const char* kOutputRootVar = "MBSEG_OUTPUT_ROOT";

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::string out;
  bool quiet = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("-c,--config", c.config, "JSON config file (defaults < file < --set)");
  cmd->add_option("-s,--set", c.sets, "Override a config key, e.g. --set loss.k_hard=50")->take_all();
  cmd->add_option("-o,--out", c.out, "Output directory (overrides output_dir)");
  cmd->add_flag("-q,--quiet", c.quiet, "Only print results");
}

/// Thrown for problems with what the user typed; maps to exit code 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

PipelineConfig effective_config(const Common& c) {
  PipelineConfig cfg;
  try {
    cfg = load_config(c.config, c.sets);
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  if (!c.out.empty()) {
    cfg.output_dir = c.out;
  } else if (const char* root = std::getenv(kOutputRootVar); root && *root && fs::path(cfg.output_dir).is_relative()) {
    cfg.output_dir = (fs::path(root) / cfg.output_dir).string();
  }
  return cfg;
}

LogFn logger(const Common& c) {
  if (c.quiet) return {};
  return [](const std::string& m) { std::cerr << m << '\n'; };
}

void print_final(const FinalReports& r) {
  std::cout << "Segmentation (test split)\n"
            << seg_summary_table({{"coarse-SN", r.coarse.mean}, {"enhanced-SN", r.enhanced.mean}}) << '\n'
            << "Classification (test split)\n"
            << cls_summary_table(r.cls, r.class_names);
}

std::vector<double> parse_values(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageError("--values: '" + item + "' is not a number");
    }
  }
  return out;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

int run_guarded(const std::function<void()>& fn) {
  try {
    fn();
    return kOk;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return kConfig;
  } catch (const IngestionError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kIngestion;
  } catch (const TrainingError& e) {
    std::cerr << "training error: " << e.what() << '\n';
    return kTraining;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return kInternal;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mutual-bootstrapping skin lesion segmentation and classification", "mbseg"};
  app.footer(std::string("Exit codes: 0 ok, 1 internal, 2 usage, 3 config, 4 data, 5 training, 6 I/O.\n") +
             "Relative output directories are placed under $" + kOutputRootVar + " when it is set.\n\n" +
             "Config keys (defaults):\n" + config_schema_text());
  app.require_subcommand(0, 1);

  Common common;
  std::function<void()> action;

  auto* synth = app.add_subcommand("synth-data", "Write the synthetic dataset in the ISIC folder layout");
  add_common(synth, common);
  synth->callback([&] {
    action = [&] {
      const auto cfg = effective_config(common);
      std::vector<std::string> names;
      const auto [seg, cls] = load_all_samples(cfg, &names);
      const fs::path out = cfg.output_dir;
      export_seg_dataset(seg, out / "seg", names);
      export_cls_dataset(cls, out / "cls", names);
      io::write_text(out / "config.json", config_to_json(cfg).dump(2) + "\n");
      std::cout << "wrote " << seg.size() << " segmentation and " << cls.size() << " classification samples to "
                << out.string() << '\n';
    };
  });

  const std::vector<std::tuple<std::string, std::string, Stage>> stage_commands{
      {"train-coarse", "Stage 1: train the coarse segmenter", Stage::TrainCoarse},
      {"gen-masks", "Stage 2: coarse masks for the classification set", Stage::GenerateMasks},
      {"train-cls", "Stage 3: train the mask-guided classifier", Stage::TrainClassifier},
      {"gen-cams", "Stage 4: localization maps for the segmentation set", Stage::GenerateCams},
      {"train-enhanced", "Stage 5: train the enhanced segmenter", Stage::TrainEnhanced},
  };
  for (const auto& [name, help, stage] : stage_commands) {
    auto* cmd = app.add_subcommand(name, help);
    add_common(cmd, common);
    cmd->callback([&, s = stage] {
      action = [&, s] {
        Pipeline p(effective_config(common), logger(common));
        p.run_stage(s);
        const auto& rec = p.state().at(s);
        std::cout << stage_name(s) << " complete: " << (p.dir() / rec.artifact).string();
        if (!rec.metric_name.empty()) std::cout << " (best " << rec.metric_name << ' ' << rec.metric << " at epoch " << rec.best_epoch << ')';
        std::cout << '\n';
      };
    });
  }

  bool resume = false;
  auto* pipe = app.add_subcommand("pipeline", "Run all five stages, then evaluate and write reports");
  add_common(pipe, common);
  pipe->add_flag("--resume", resume, "Skip stages already completed in the output directory");
  pipe->callback([&] {
    action = [&] {
      Pipeline p(effective_config(common), logger(common));
      p.run(resume);
      const auto r = p.evaluate();
      p.emit(r, p.config().overlay_samples);
      print_final(r);
    };
  });

  auto* eval = app.add_subcommand("evaluate", "Evaluate a completed run on the test split");
  add_common(eval, common);
  eval->callback([&] {
    action = [&] {
      Pipeline p(effective_config(common), logger(common));
      const auto r = p.evaluate();
      emit_reports(r, p.dir() / "reports");
      print_final(r);
    };
  });

  int samples = -1;
  auto* report = app.add_subcommand("report", "Write tables, plots and overlay panels for a completed run");
  add_common(report, common);
  report->add_option("--samples", samples, "Overlay panels to draw (default: overlay_samples)");
  report->callback([&] {
    action = [&] {
      Pipeline p(effective_config(common), logger(common));
      const auto r = p.evaluate();
      p.emit(r, samples >= 0 ? samples : p.config().overlay_samples);
      print_final(r);
    };
  });

  std::string param, values;
  auto* sweep = app.add_subcommand("sweep", "Metric versus one parameter");
  add_common(sweep, common);
  sweep->add_option("--param", param, "k_hard | margin | lambda_weight | train_fraction_seg | train_fraction_cls");
  sweep->add_option("--values", values, "Comma-separated values (default: the parameter's grid)");
  sweep->callback([&] {
    action = [&] {
      auto cfg = effective_config(common);
      if (!param.empty()) cfg.sweep.parameter = param;
      if (!values.empty()) cfg.sweep.values = parse_values(values);
      try {
        cfg.validate();
      } catch (const ConfigError& e) {
        throw UsageError(e.what());
      }
      io::ensure_directory(cfg.output_dir);
      io::write_text(fs::path(cfg.output_dir) / "config.json", config_to_json(cfg).dump(2) + "\n");
      const auto r = run_sweep(cfg, cfg.sweep.parameter, cfg.sweep.values, logger(common));
      emit_sweep(r, cfg.output_dir);
      std::cout << sweep_csv(r);
    };
  });

  std::string losses;
  auto* cmp = app.add_subcommand("compare-losses", "Train the coarse segmenter once per loss");
  add_common(cmp, common);
  cmp->add_option("--losses", losses, "Comma-separated subset of wce,dice,focal,hybrid");
  cmp->callback([&] {
    action = [&] {
      auto cfg = effective_config(common);
      if (!losses.empty()) cfg.compare_losses = split_list(losses);
      try {
        cfg.validate();
      } catch (const ConfigError& e) {
        throw UsageError(e.what());
      }
      io::ensure_directory(cfg.output_dir);
      io::write_text(fs::path(cfg.output_dir) / "config.json", config_to_json(cfg).dump(2) + "\n");
      const auto rows = compare_losses(cfg, cfg.compare_losses, logger(common));
      const auto table = loss_table(rows);
      io::write_text(fs::path(cfg.output_dir) / "compare_losses.txt", table);
      std::cout << table;
    };
  });

  std::string pretrained;
  auto* ft = app.add_subcommand("fine-tune", "Cross-validated fine-tuning of a completed run on new data");
  add_common(ft, common);
  ft->add_option("--pretrained", pretrained, "Output directory of a completed pipeline run");
  ft->callback([&] {
    action = [&] {
      auto cfg = effective_config(common);
      if (!pretrained.empty()) cfg.fine_tune.pretrained = pretrained;
      io::ensure_directory(cfg.output_dir);
      io::write_text(fs::path(cfg.output_dir) / "config.json", config_to_json(cfg).dump(2) + "\n");
      const auto r = fine_tune(cfg, logger(common));
      nlohmann::json folds = nlohmann::json::array();
      for (const auto& f : r.folds) {
        folds.push_back({{"fold", f.fold},
                         {"seg_test_ids", f.seg_test_ids},
                         {"zero_shot", to_json(f.zero_shot)},
                         {"fine_tuned", to_json(f.fine_tuned)},
                         {"cls_zero_shot", to_json(f.cls_zero_shot)},
                         {"cls_fine_tuned", to_json(f.cls_fine_tuned)}});
      }
      io::write_text(fs::path(cfg.output_dir) / "fine_tune.json", nlohmann::json{{"folds", folds}}.dump(2) + "\n");
      const auto table = fine_tune_table(r);
      io::write_text(fs::path(cfg.output_dir) / "fine_tune.txt", table);
      std::cout << table;
    };
  });

  if (argc < 2) {
    std::cerr << app.help();
    return kUsage;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }
  if (!action) {
    std::cerr << app.help();
    return kUsage;
  }
  return run_guarded(action);
}
